use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    UDepth,
    Dbscan,
    MadLift,
    Ensemble,
}

/// A world-frame box with the points that support it and, for boxes that
/// came from a 2D detector, its semantic label.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub aabb: Aabb3,
    pub cloud: PointCloud,
    pub label: Option<String>,
    pub source: DetectorKind,
}

impl Detection {
    pub fn new(aabb: Aabb3, cloud: PointCloud, source: DetectorKind) -> Self {
        Detection {
            aabb,
            cloud,
            label: None,
            source,
        }
    }
}
