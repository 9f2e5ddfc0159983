//! Dynamic obstacle detection and tracking from depth images.
//!
//! Three detectors (a U-depth map detector, a DBSCAN point-cloud detector and
//! a MAD lift of external 2D boxes) are fused by mutual-best IOU, tracked with
//! feature association and a constant-acceleration Kalman filter, and each
//! track is labeled static or dynamic by center velocity and point voting.

pub mod class;
pub mod dbscan;
pub mod detection;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod identify;
pub mod madlift;
pub mod metrics;
pub mod pipeline;
pub mod scenegen;
pub mod tracker;
pub mod udepth;

pub use class::ObstacleClass;
pub use detection::{Detection, DetectorKind};
pub use error::{Error, Result};
pub use geometry::{iou3d, project_to_pixel, triangulate, Aabb3, CameraIntrinsics, DepthImage, PointCloud, Pose, Vec3};
pub use madlift::Detection2D;
pub use metrics::{evaluate, EvalConfig, EvalReport, FrameOutput};
pub use pipeline::{run_frames, run_sequence, Frame, Pipeline, PipelineConfig};
pub use tracker::TrackOutput;
