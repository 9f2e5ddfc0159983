//! U-depth detector: a per-column depth histogram (a top-down view of the
//! depth image), connected line grouping on it, and a row continuity search
//! back in the depth image to recover obstacle height.

use serde::{Deserialize, Serialize};

use crate::dbscan::voxel_filter;
use crate::detection::{Detection, DetectorKind};
use crate::geometry::{Aabb3, CameraIntrinsics, DepthImage, PointCloud, Pose, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UDepthConfig {
    pub bin_size: f64,
    /// Minimum pixels per histogram cell; `None` means max(4, 2% of height).
    pub count_threshold: Option<u32>,
    pub min_width: u32,
    pub min_pixels_per_row: u32,
    /// Depths beyond this are ignored (dense sensing range).
    pub max_range: f64,
    /// Pixel stride and voxel size for the points attached to each box.
    pub cloud_stride: u32,
    pub cloud_voxel: f64,
}

impl Default for UDepthConfig {
    fn default() -> Self {
        UDepthConfig {
            bin_size: 0.1,
            count_threshold: None,
            min_width: 4,
            min_pixels_per_row: 3,
            max_range: 3.0,
            cloud_stride: 2,
            cloud_voxel: 0.1,
        }
    }
}

impl UDepthConfig {
    pub fn threshold_for(&self, image_height: u32) -> u32 {
        self.count_threshold
            .unwrap_or_else(|| 4.max((0.02 * image_height as f64).ceil() as u32))
    }
}

/// Column histogram of depth. Row `b` of `counts` holds bin `b`, which covers
/// `[near + b·bin_size, near + (b+1)·bin_size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UDepthMap {
    pub width: u32,
    pub num_bins: u32,
    pub bin_size: f64,
    pub near: f64,
    pub counts: Vec<u32>,
}

impl UDepthMap {
    #[inline]
    pub fn count(&self, bin: u32, column: u32) -> u32 {
        self.counts[bin as usize * self.width as usize + column as usize]
    }

    pub fn bin_lower(&self, bin: u32) -> f64 {
        self.near + bin as f64 * self.bin_size
    }

    pub fn bin_upper(&self, bin: u32) -> f64 {
        self.near + (bin + 1) as f64 * self.bin_size
    }

    pub fn column_total(&self, column: u32) -> u32 {
        (0..self.num_bins).map(|b| self.count(b, column)).sum()
    }
}

/// A grouped region of the U-depth map: column range and bin range, both
/// inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UDepthRegion {
    pub u_min: u32,
    pub u_max: u32,
    pub b_min: u32,
    pub b_max: u32,
}

impl UDepthRegion {
    pub fn width(&self) -> u32 {
        self.u_max - self.u_min + 1
    }

    pub fn thickness_bins(&self) -> u32 {
        self.b_max - self.b_min + 1
    }
}

/// Region plus the image rows found by the continuity search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UDepthBox {
    pub region: UDepthRegion,
    pub v_min: u32,
    pub v_max: u32,
}

pub fn compute_u_depth(depth: &DepthImage, intr: &CameraIntrinsics, bin_size: f64) -> UDepthMap {
    compute_u_depth_within(depth, intr, bin_size, intr.depth_min, intr.depth_max)
}

/// Histogram restricted to depths in `[near, far]`.
pub fn compute_u_depth_within(depth: &DepthImage, intr: &CameraIntrinsics, bin_size: f64, near: f64, far: f64) -> UDepthMap {
    assert!(bin_size > 0.0, "bin_size must be positive");
    let num_bins = (((far - near) / bin_size).ceil() as u32).max(1);
    let width = depth.width;
    let mut counts = vec![0u32; num_bins as usize * width as usize];
    let inv = 1.0 / bin_size;
    for v in 0..depth.height {
        for (u, &raw) in depth.row(v).iter().enumerate() {
            let Some(d) = intr.decode(raw) else { continue };
            if d < near || d > far {
                continue;
            }
            let b = (((d - near) * inv) as u32).min(num_bins - 1);
            counts[b as usize * width as usize + u] += 1;
        }
    }
    UDepthMap {
        width,
        num_bins,
        bin_size,
        near,
        counts,
    }
}

#[derive(Clone, Copy)]
struct Run {
    bin: u32,
    u_min: u32,
    u_max: u32,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups 8-connected cells whose count reaches `count_threshold` into
/// regions and keeps those at least `min_width` columns wide.
pub fn group_lines(umap: &UDepthMap, count_threshold: u32, min_width: u32) -> Vec<UDepthRegion> {
    let thr = count_threshold.max(1);
    let mut runs: Vec<Run> = Vec::new();
    let mut row_start = Vec::with_capacity(umap.num_bins as usize + 1);
    for b in 0..umap.num_bins {
        row_start.push(runs.len());
        let mut u = 0;
        while u < umap.width {
            if umap.count(b, u) >= thr {
                let start = u;
                while u + 1 < umap.width && umap.count(b, u + 1) >= thr {
                    u += 1;
                }
                runs.push(Run {
                    bin: b,
                    u_min: start,
                    u_max: u,
                });
            }
            u += 1;
        }
    }
    row_start.push(runs.len());

    let mut parent: Vec<usize> = (0..runs.len()).collect();
    for b in 0..umap.num_bins.saturating_sub(1) {
        let (r0, r1) = (row_start[b as usize], row_start[b as usize + 1]);
        let r2 = row_start[b as usize + 2];
        for i in r0..r1 {
            for j in r1..r2 {
                let (a, c) = (runs[i], runs[j]);
                // overlapping or diagonally touching
                if a.u_min <= c.u_max + 1 && c.u_min <= a.u_max + 1 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
    }

    let mut regions: Vec<Option<UDepthRegion>> = vec![None; runs.len()];
    for i in 0..runs.len() {
        let root = find(&mut parent, i);
        let r = runs[i];
        let entry = regions[root].get_or_insert(UDepthRegion {
            u_min: r.u_min,
            u_max: r.u_max,
            b_min: r.bin,
            b_max: r.bin,
        });
        entry.u_min = entry.u_min.min(r.u_min);
        entry.u_max = entry.u_max.max(r.u_max);
        entry.b_min = entry.b_min.min(r.bin);
        entry.b_max = entry.b_max.max(r.bin);
    }
    regions
        .into_iter()
        .flatten()
        .filter(|r| r.width() >= min_width)
        .collect()
}

/// Depth interval searched for a region: its bin span widened by one bin on
/// each side.
pub fn region_depth_interval(umap: &UDepthMap, region: &UDepthRegion) -> (f64, f64) {
    (
        umap.bin_lower(region.b_min) - umap.bin_size,
        umap.bin_upper(region.b_max) + umap.bin_size,
    )
}

/// Longest contiguous run of rows where at least `min_pixels_per_row`
/// pixels in the region's columns fall inside `interval`.
pub fn continuity_search(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    region: &UDepthRegion,
    interval: (f64, f64),
    min_pixels_per_row: u32,
) -> Option<(u32, u32)> {
    let need = min_pixels_per_row.clamp(1, region.width());
    let (lo, hi) = interval;
    let mut best: Option<(u32, u32)> = None;
    let mut current: Option<u32> = None;
    for v in 0..=depth.height {
        let hit = v < depth.height && {
            let row = &depth.row(v)[region.u_min as usize..=region.u_max as usize];
            let n = row
                .iter()
                .filter(|&&raw| intr.decode(raw).is_some_and(|d| d >= lo && d <= hi))
                .count();
            n as u32 >= need
        };
        match (hit, current) {
            (true, None) => current = Some(v),
            (false, Some(start)) => {
                let run = (start, v - 1);
                if best.is_none_or(|b| run.1 - run.0 > b.1 - b.0) {
                    best = Some(run);
                }
                current = None;
            }
            _ => {}
        }
    }
    best
}

/// Camera-frustum slice of a U-depth box lifted to a world AABB.
pub fn lift_box(b: &UDepthBox, umap: &UDepthMap, intr: &CameraIntrinsics, pose: &Pose) -> Aabb3 {
    let r = &b.region;
    let (near, far) = (umap.bin_lower(r.b_min), umap.bin_upper(r.b_max));
    let us = [r.u_min as f64 - 0.5, r.u_max as f64 + 0.5];
    let vs = [b.v_min as f64 - 0.5, b.v_max as f64 + 0.5];
    let mut corners = Vec::with_capacity(8);
    for d in [near, far] {
        for u in us {
            for v in vs {
                corners.push(pose.camera_to_world(&intr.back_project(u, v, d)));
            }
        }
    }
    Aabb3::from_points(&corners, 1e-3).expect("eight corners")
}

fn box_cloud(
    b: &UDepthBox,
    interval: (f64, f64),
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cfg: &UDepthConfig,
) -> PointCloud {
    let stride = cfg.cloud_stride.max(1) as usize;
    let mut pts: Vec<Vec3> = Vec::new();
    for v in (b.v_min..=b.v_max).step_by(stride) {
        let row = depth.row(v);
        for u in (b.region.u_min..=b.region.u_max).step_by(stride) {
            if let Some(d) = intr.decode(row[u as usize]) {
                if d >= interval.0 && d <= interval.1 {
                    pts.push(pose.camera_to_world(&intr.back_project(u as f64, v as f64, d)));
                }
            }
        }
    }
    voxel_filter(&PointCloud::new(pts), cfg.cloud_voxel, 1)
}

/// Full detector returning boxes with their supporting points.
pub fn detect_udepth_detections(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cfg: &UDepthConfig,
) -> Vec<Detection> {
    let far = cfg.max_range.min(intr.depth_max);
    if far <= intr.depth_min {
        return Vec::new();
    }
    let umap = compute_u_depth_within(depth, intr, cfg.bin_size, intr.depth_min, far);
    let regions = group_lines(&umap, cfg.threshold_for(depth.height), cfg.min_width);
    regions
        .iter()
        .filter_map(|region| {
            let interval = region_depth_interval(&umap, region);
            let (v_min, v_max) = continuity_search(depth, intr, region, interval, cfg.min_pixels_per_row)?;
            let b = UDepthBox {
                region: *region,
                v_min,
                v_max,
            };
            let aabb = lift_box(&b, &umap, intr, pose);
            let cloud = box_cloud(&b, interval, depth, intr, pose, cfg);
            Some(Detection::new(aabb, cloud, DetectorKind::UDepth))
        })
        .collect()
}

pub fn detect_udepth(depth: &DepthImage, intr: &CameraIntrinsics, pose: &Pose, cfg: &UDepthConfig) -> Vec<Aabb3> {
    detect_udepth_detections(depth, intr, pose, cfg)
        .into_iter()
        .map(|d| d.aabb)
        .collect()
}
