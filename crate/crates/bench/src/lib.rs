//! Fixtures shared by the criterion benches.

use dodt::scenegen::{render_scene, suites, NoiseModel};
use dodt::{CameraIntrinsics, Frame, Result};

/// The five-object scene at 640x480 with 1% depth noise, rendered up front
/// so benches time only the pipeline.
pub fn bench_frames() -> Result<(CameraIntrinsics, Vec<Frame>)> {
    let intr = CameraIntrinsics::d435_like(640, 480);
    let scene = render_scene(&suites::bench_scene(), &intr, &NoiseModel::depth_only(0.01, 9), None)?;
    Ok((intr, scene.frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_renders() {
        let (intr, frames) = bench_frames().unwrap();
        assert!(!frames.is_empty());
        assert_eq!(frames[0].depth.width, intr.width);
    }
}
