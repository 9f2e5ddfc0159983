//! Point-cloud detector: voxel downsampling, DBSCAN clustering and one
//! world-axis-aligned box per cluster.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::detection::{Detection, DetectorKind};
use crate::error::{Error, Result};
use crate::geometry::{triangulate_within, Aabb3, CameraIntrinsics, DepthImage, PointCloud, Pose, Vec3};
use crate::grid::SpatialHash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanConfig {
    pub voxel_size: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub min_cluster_size: usize,
    /// Voxels holding fewer raw points are treated as noise.
    pub min_voxel_points: usize,
    /// Depths beyond this are ignored (dense sensing range).
    pub max_range: f64,
    pub stride: u32,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        DbscanConfig {
            voxel_size: 0.1,
            eps: 0.3,
            min_pts: 4,
            min_cluster_size: 15,
            min_voxel_points: 2,
            max_range: 3.0,
            stride: 2,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.voxel_size > 0.0
            && self.eps > 0.0
            && self.min_pts >= 1
            && self.min_cluster_size >= 1
            && self.max_range > 0.0
            && self.stride >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::config("dbscan parameters must be positive"))
        }
    }
}

type VoxelKey = (i64, i64, i64);

fn voxel_key(p: &Vec3, inv: f64) -> VoxelKey {
    (
        (p.x * inv).floor() as i64,
        (p.y * inv).floor() as i64,
        (p.z * inv).floor() as i64,
    )
}

/// A surviving voxel: centroid and raw-point bounds.
#[derive(Debug, Clone, Copy)]
struct Voxel {
    sum: Vec3,
    lo: Vec3,
    hi: Vec3,
    count: usize,
}

fn accumulate(points: &[Vec3], voxel_size: f64, min_points: usize) -> Vec<Voxel> {
    assert!(voxel_size > 0.0, "voxel_size must be positive");
    let inv = 1.0 / voxel_size;
    let mut index: FxHashMap<VoxelKey, usize> = FxHashMap::default();
    let mut voxels: Vec<Voxel> = Vec::new();
    for p in points {
        let slot = *index.entry(voxel_key(p, inv)).or_insert_with(|| {
            voxels.push(Voxel {
                sum: Vec3::zeros(),
                lo: *p,
                hi: *p,
                count: 0,
            });
            voxels.len() - 1
        });
        let v = &mut voxels[slot];
        v.sum += p;
        v.lo = v.lo.inf(p);
        v.hi = v.hi.sup(p);
        v.count += 1;
    }
    voxels.retain(|v| v.count >= min_points.max(1));
    voxels
}

/// One centroid per voxel holding at least `min_points` raw points, in order
/// of first occupancy.
pub fn voxel_filter(cloud: &PointCloud, voxel_size: f64, min_points: usize) -> PointCloud {
    accumulate(&cloud.points, voxel_size, min_points)
        .iter()
        .map(|v| v.sum / v.count as f64)
        .collect()
}

/// DBSCAN over `points`. Returns clusters as ascending index lists, ordered by
/// their lowest core point; noise is omitted. A point counts toward its own
/// neighborhood. Border points join the first cluster that reaches them.
pub fn dbscan_cluster(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    if points.is_empty() {
        return Vec::new();
    }
    let grid = SpatialHash::new(points, eps);
    let mut label = vec![UNSEEN; points.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut nbrs = Vec::new();
    let mut queue = Vec::new();

    for i in 0..points.len() {
        if label[i] != UNSEEN {
            continue;
        }
        grid.within(&points[i], eps, &mut nbrs);
        if nbrs.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let id = clusters.len();
        let mut members = vec![i];
        label[i] = id;
        queue.clear();
        queue.extend(nbrs.iter().copied().filter(|&j| j != i));
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            match label[j] {
                NOISE => {
                    label[j] = id;
                    members.push(j);
                }
                UNSEEN => {
                    label[j] = id;
                    members.push(j);
                    grid.within(&points[j], eps, &mut nbrs);
                    if nbrs.len() >= min_pts {
                        queue.extend(nbrs.iter().copied().filter(|&k| label[k] == UNSEEN || label[k] == NOISE));
                    }
                }
                _ => {}
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
}

/// Triangulates, voxel-filters and clusters one frame. Each box spans the raw
/// points of its member voxels; the attached cloud holds the voxel centroids.
pub fn detect_dbscan(depth: &DepthImage, intr: &CameraIntrinsics, pose: &Pose, cfg: &DbscanConfig) -> Vec<Detection> {
    let far = cfg.max_range.min(intr.depth_max);
    let Ok(raw) = triangulate_within(depth, intr, pose, cfg.stride.max(1), intr.depth_min, far) else {
        return Vec::new();
    };
    let voxels = accumulate(&raw.points, cfg.voxel_size, cfg.min_voxel_points);
    let reps: Vec<Vec3> = voxels.iter().map(|v| v.sum / v.count as f64).collect();
    dbscan_cluster(&reps, cfg.eps, cfg.min_pts)
        .into_iter()
        .filter(|c| c.len() >= cfg.min_cluster_size)
        .map(|members| {
            let (mut lo, mut hi) = (voxels[members[0]].lo, voxels[members[0]].hi);
            for &m in &members[1..] {
                lo = lo.inf(&voxels[m].lo);
                hi = hi.sup(&voxels[m].hi);
            }
            let aabb = Aabb3::from_bounds(lo, hi, cfg.voxel_size);
            let cloud = members.iter().map(|&m| reps[m]).collect();
            Detection::new(aabb, cloud, DetectorKind::Dbscan)
        })
        .collect()
}
