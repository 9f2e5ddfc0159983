//! Synthetic ground-truth generator: scripted scenes of boxes and vertical
//! cylinders, ray-cast into depth images with optional sensor noise.

mod render;
pub mod suites;

pub use render::{render_detections2d, render_frame, render_frame_with_detections, GroundTruthFrame, GroundTruthObject};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::class::ObstacleClass;
use crate::error::{Error, Result};
use crate::geometry::{Aabb3, CameraIntrinsics, Pose, Vec3};
use crate::pipeline::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub position: Vec3,
}

/// Time-parameterized position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Fixed {
        position: Vec3,
    },
    ConstantVelocity {
        start: Vec3,
        velocity: Vec3,
    },
    ConstantAcceleration {
        start: Vec3,
        velocity: Vec3,
        acceleration: Vec3,
    },
    /// Piecewise-linear path through timed waypoints; holds the first and
    /// last positions outside the covered interval.
    Waypoints {
        points: Vec<Waypoint>,
    },
}

impl Trajectory {
    pub fn fixed(position: Vec3) -> Self {
        Trajectory::Fixed { position }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        match self {
            Trajectory::Fixed { position } => *position,
            Trajectory::ConstantVelocity { start, velocity } => start + velocity * t,
            Trajectory::ConstantAcceleration {
                start,
                velocity,
                acceleration,
            } => start + velocity * t + acceleration * (0.5 * t * t),
            Trajectory::Waypoints { points } => {
                let Some(i) = segment_index(points, t) else {
                    return if t < points[0].t {
                        points[0].position
                    } else {
                        points[points.len() - 1].position
                    };
                };
                let (a, b) = (&points[i], &points[i + 1]);
                let s = (t - a.t) / (b.t - a.t);
                a.position + (b.position - a.position) * s
            }
        }
    }

    /// Analytic derivative of [`Trajectory::position`]; right-derivative at
    /// waypoint knots.
    pub fn velocity(&self, t: f64) -> Vec3 {
        match self {
            Trajectory::Fixed { .. } => Vec3::zeros(),
            Trajectory::ConstantVelocity { velocity, .. } => *velocity,
            Trajectory::ConstantAcceleration {
                velocity,
                acceleration,
                ..
            } => velocity + acceleration * t,
            Trajectory::Waypoints { points } => match segment_index(points, t) {
                Some(i) => (points[i + 1].position - points[i].position) / (points[i + 1].t - points[i].t),
                None => Vec3::zeros(),
            },
        }
    }

    pub fn is_stationary(&self) -> bool {
        match self {
            Trajectory::Fixed { .. } => true,
            Trajectory::ConstantVelocity { velocity, .. } => velocity.norm() == 0.0,
            Trajectory::ConstantAcceleration {
                velocity, acceleration, ..
            } => velocity.norm() == 0.0 && acceleration.norm() == 0.0,
            Trajectory::Waypoints { points } => points.windows(2).all(|w| w[0].position == w[1].position),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Trajectory::Waypoints { points } = self {
            if points.is_empty() {
                return Err(Error::input("waypoint trajectory needs at least one point"));
            }
            if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(Error::input("waypoint times must be strictly increasing"));
            }
        }
        Ok(())
    }
}

fn segment_index(points: &[Waypoint], t: f64) -> Option<usize> {
    if points.len() < 2 || t < points[0].t || t >= points[points.len() - 1].t {
        return None;
    }
    // points are few; linear scan
    (0..points.len() - 1).find(|&i| t >= points[i].t && t < points[i + 1].t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned box; `dims` along world x, y, z.
    Box { dims: Vec3 },
    /// Vertical cylinder.
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    pub fn extents(&self) -> Vec3 {
        match *self {
            Shape::Box { dims } => dims,
            Shape::Cylinder { radius, height } => Vector3::new(2.0 * radius, 2.0 * radius, height),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    /// Semantic label reported by the 2D detector stand-in, e.g. "person".
    pub label: String,
    pub class: ObstacleClass,
    pub shape: Shape,
    /// Position of the shape's center.
    pub trajectory: Trajectory,
}

impl SceneObject {
    pub fn aabb_at(&self, t: f64) -> Aabb3 {
        Aabb3 {
            center: self.trajectory.position(t),
            dims: self.shape.extents(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub trajectory: Trajectory,
    /// Heading of the optical axis at t = 0 (radians, from +x toward +y).
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub yaw_rate: f64,
}

impl CameraPath {
    pub fn fixed(position: Vec3, yaw: f64) -> Self {
        CameraPath {
            trajectory: Trajectory::fixed(position),
            yaw,
            yaw_rate: 0.0,
        }
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        Pose::level(self.trajectory.position(t), self.yaw + self.yaw_rate * t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub duration: f64,
    pub frame_rate: f64,
    pub camera: CameraPath,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
}

impl SceneScript {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(Error::input("frame_rate must be positive"));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::input("duration must be non-negative"));
        }
        self.camera.trajectory.validate()?;
        for obj in &self.objects {
            obj.trajectory.validate()?;
            let ext = obj.shape.extents();
            if ext.iter().any(|&d| !(d > 0.0)) {
                return Err(Error::input(format!("object `{}` has non-positive dims", obj.name)));
            }
            if obj.class == ObstacleClass::Static && !obj.trajectory.is_stationary() {
                return Err(Error::input(format!("static object `{}` must not move", obj.name)));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate + 1e-9).floor() as usize
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 / self.frame_rate
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let script: SceneScript = toml::from_str(text).map_err(|e| Error::input(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::input(e.to_string()))
    }
}

/// Depth sensor corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Multiplicative Gaussian sigma as a fraction of depth.
    pub depth_sigma: f64,
    /// Probability per frame that a new blob artifact appears.
    pub blob_rate: f64,
    /// Frames a blob persists.
    pub blob_lifetime: u32,
    /// Square blob side range in pixels.
    pub blob_size: [u32; 2],
    /// Image-space drift in pixels per frame.
    pub blob_speed: f64,
    /// Range the blob's false depth is drawn from, meters.
    pub blob_depth: [f64; 2],
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::none()
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            depth_sigma: 0.0,
            blob_rate: 0.0,
            blob_lifetime: 30,
            blob_size: [6, 10],
            blob_speed: 1.5,
            blob_depth: [1.0, 2.8],
            seed: 0,
        }
    }

    /// 1% depth noise plus occasional drifting blobs.
    pub fn standard(seed: u64) -> Self {
        NoiseModel {
            depth_sigma: 0.01,
            blob_rate: 0.02,
            seed,
            ..NoiseModel::none()
        }
    }

    pub fn depth_only(sigma: f64, seed: u64) -> Self {
        NoiseModel {
            depth_sigma: sigma,
            seed,
            ..NoiseModel::none()
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.depth_sigma == 0.0 && self.blob_rate == 0.0
    }
}

/// Imperfections applied to synthetic 2D detections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionJitter {
    /// Gaussian sigma applied to each box edge, pixels.
    pub pixel_sigma: f64,
    /// Probability an individual detection is dropped.
    pub dropout: f64,
    pub seed: u64,
}

/// A rendered scene: pipeline frames and the matching ground truth.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
    pub truth: Vec<GroundTruthFrame>,
}

/// Renders every frame of `script`. With `jitter` set, frames also carry
/// synthetic 2D detections.
pub fn render_scene(
    script: &SceneScript,
    intr: &CameraIntrinsics,
    noise: &NoiseModel,
    jitter: Option<&DetectionJitter>,
) -> Result<RenderedScene> {
    script.validate()?;
    let mut frames = Vec::with_capacity(script.frame_count());
    let mut truth = Vec::with_capacity(script.frame_count());
    for k in 0..script.frame_count() {
        let t = script.frame_time(k);
        let (depth, gt, dets) = match jitter {
            Some(j) => {
                let (d, g, dets) = render_frame_with_detections(script, t, intr, noise, j)?;
                (d, g, Some(dets))
            }
            None => {
                let (d, g) = render_frame(script, t, intr, noise)?;
                (d, g, None)
            }
        };
        frames.push(Frame {
            timestamp: t,
            depth,
            pose: script.camera.pose_at(t),
            detections2d: dets,
        });
        truth.push(gt);
    }
    Ok(RenderedScene {
        intrinsics: *intr,
        frames,
        truth,
    })
}
