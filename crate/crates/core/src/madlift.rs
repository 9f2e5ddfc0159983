//! Lifts externally supplied 2D class-labeled boxes to 3D using the median
//! depth of the box region and a median-absolute-deviation depth window.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, DetectorKind};
use crate::geometry::{Aabb3, CameraIntrinsics, DepthImage, PointCloud, Pose, Vec3};

/// 2D box in pixel coordinates, inclusive bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub label: String,
    pub confidence: f64,
}

impl Detection2D {
    /// Clips the box to the image. `None` when nothing remains.
    pub fn clipped(&self, width: u32, height: u32) -> Option<Detection2D> {
        let (wmax, hmax) = (width as f64 - 1.0, height as f64 - 1.0);
        let d = Detection2D {
            u_min: self.u_min.clamp(0.0, wmax),
            u_max: self.u_max.clamp(0.0, wmax),
            v_min: self.v_min.clamp(0.0, hmax),
            v_max: self.v_max.clamp(0.0, hmax),
            label: self.label.clone(),
            confidence: self.confidence.clamp(0.0, 1.0),
        };
        (d.u_min <= d.u_max && d.v_min <= d.v_max).then_some(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MadConfig {
    /// MAD multiplier for the accepted depth window.
    pub n: f64,
    pub dynamic_classes: BTreeSet<String>,
    /// Minimum box thickness along the viewing direction, meters.
    pub min_thickness: f64,
    /// Sample every `pixel_stride`-th pixel of the box in each axis.
    pub pixel_stride: u32,
}

impl Default for MadConfig {
    fn default() -> Self {
        MadConfig {
            n: 1.5,
            dynamic_classes: BTreeSet::from(["person".to_string()]),
            min_thickness: 0.1,
            pixel_stride: 2,
        }
    }
}

impl MadConfig {
    pub fn is_dynamic(&self, label: &str) -> bool {
        self.dynamic_classes.contains(label)
    }
}

/// Median and median absolute deviation. `None` for empty input.
/// Even-length medians average the two middle order statistics.
pub fn mad(depths: &[f64]) -> Option<(f64, f64)> {
    if depths.is_empty() {
        return None;
    }
    let mut buf = depths.to_vec();
    let med = median_in_place(&mut buf);
    for (b, d) in buf.iter_mut().zip(depths) {
        *b = (d - med).abs();
    }
    let dev = median_in_place(&mut buf);
    Some((med, dev))
}

fn median_in_place(xs: &mut [f64]) -> f64 {
    let n = xs.len();
    let mid = n / 2;
    let (lower, upper_mid, _) = xs.select_nth_unstable_by(mid, f64::total_cmp);
    let upper_mid = *upper_mid;
    if n % 2 == 1 {
        upper_mid
    } else {
        let lower_mid = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower_mid + upper_mid) / 2.0
    }
}

/// Min and max of the depths within `median ± n·MAD`; `(median, median)` when
/// no depth falls inside.
pub fn mad_range(depths: &[f64], median: f64, mad: f64, n: f64) -> (f64, f64) {
    let (lo, hi) = (median - n * mad, median + n * mad);
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &d in depths {
        if d >= lo && d <= hi {
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    if dmin > dmax {
        // empty window (n < 1 with an even count, or non-finite input)
        (median, median)
    } else {
        (dmin, dmax)
    }
}

/// 3D box for a 2D detection. Lateral extent is the full 2D box at the
/// median depth; the depth extent is the MAD window, at least
/// `min_thickness` thick. `None` when the box holds no valid depth.
pub fn lift_to_3d(
    det: &Detection2D,
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cfg: &MadConfig,
) -> Option<(Aabb3, String)> {
    lift_detection(det, depth, intr, pose, cfg).map(|d| (d.aabb, det.label.clone()))
}

pub(crate) fn lift_detection(
    det: &Detection2D,
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cfg: &MadConfig,
) -> Option<Detection> {
    let det = det.clipped(depth.width, depth.height)?;
    let stride = cfg.pixel_stride.max(1) as usize;
    let (u0, u1) = (det.u_min.ceil() as u32, det.u_max.floor() as u32);
    let (v0, v1) = (det.v_min.ceil() as u32, det.v_max.floor() as u32);
    if u0 > u1 || v0 > v1 {
        return None;
    }
    let mut samples: Vec<(u32, u32, f64)> = Vec::new();
    for v in (v0..=v1).step_by(stride) {
        for u in (u0..=u1).step_by(stride) {
            if let Some(d) = depth.depth(u, v, intr) {
                samples.push((u, v, d));
            }
        }
    }
    let depths: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let (med, dev) = mad(&depths)?;
    let (dmin, dmax) = mad_range(&depths, med, dev, cfg.n);

    let (mut near, mut far) = (dmin, dmax);
    if far - near < cfg.min_thickness {
        let mid = (near + far) / 2.0;
        near = mid - cfg.min_thickness / 2.0;
        far = mid + cfg.min_thickness / 2.0;
    }
    // lateral extent from the 2D box edges on the median plane
    let edges = [
        intr.back_project(det.u_min - 0.5, det.v_min - 0.5, med),
        intr.back_project(det.u_max + 0.5, det.v_max + 0.5, med),
    ];
    let corners = [
        Vec3::new(edges[0].x, edges[0].y, near),
        Vec3::new(edges[1].x, edges[0].y, near),
        Vec3::new(edges[0].x, edges[1].y, near),
        Vec3::new(edges[1].x, edges[1].y, near),
        Vec3::new(edges[0].x, edges[0].y, far),
        Vec3::new(edges[1].x, edges[0].y, far),
        Vec3::new(edges[0].x, edges[1].y, far),
        Vec3::new(edges[1].x, edges[1].y, far),
    ];
    let world: Vec<Vec3> = corners.iter().map(|c| pose.camera_to_world(c)).collect();
    let aabb = Aabb3::from_points(&world, 1e-3)?;

    let (lo, hi) = (med - cfg.n * dev, med + cfg.n * dev);
    let cloud: PointCloud = samples
        .iter()
        .filter(|s| s.2 >= lo && s.2 <= hi)
        .map(|&(u, v, d)| pose.camera_to_world(&intr.back_project(u as f64, v as f64, d)))
        .collect();
    Some(Detection {
        aabb,
        cloud,
        label: Some(det.label.clone()),
        source: DetectorKind::MadLift,
    })
}

/// Lifts every detection; boxes without valid depth are dropped.
pub fn detect_madlift(
    dets: &[Detection2D],
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cfg: &MadConfig,
) -> Vec<Detection> {
    dets.iter()
        .filter_map(|d| lift_detection(d, depth, intr, pose, cfg))
        .collect()
}
