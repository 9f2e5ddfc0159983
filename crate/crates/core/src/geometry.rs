//! Pinhole camera model, rigid transforms, depth triangulation and
//! axis-aligned box arithmetic shared by every detector.
//!
//! Frames: the camera frame has x right, y down and z along the optical axis.
//! The world frame is z-up; trackers work in the world x/y plane.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Meters per raw depth unit.
    pub depth_scale: f64,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl CameraIntrinsics {
    /// Intrinsics roughly matching a D435-class depth camera (87 deg horizontal
    /// FOV) scaled to the requested resolution, millimeter depth units.
    pub fn d435_like(width: u32, height: u32) -> Self {
        let f = 385.0 * width as f64 / 640.0;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            depth_scale: 0.001,
            depth_min: 0.3,
            depth_max: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.depth_scale,
            self.depth_min,
            self.depth_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::input("intrinsics contain non-finite values"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::input("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::input("image size must be non-zero"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::input("principal point outside the image"));
        }
        if self.depth_scale <= 0.0 {
            return Err(Error::input("depth_scale must be positive"));
        }
        if self.depth_min >= self.depth_max || self.depth_min < 0.0 {
            return Err(Error::input("depth range must satisfy 0 <= depth_min < depth_max"));
        }
        Ok(())
    }

    /// Metric depth of a raw sample, `None` for the zero sentinel and for
    /// values outside the valid range.
    #[inline]
    pub fn decode(&self, raw: u16) -> Option<f64> {
        if raw == 0 {
            return None;
        }
        let d = raw as f64 * self.depth_scale;
        (d >= self.depth_min && d <= self.depth_max).then_some(d)
    }

    /// Raw sample for a metric depth; out-of-range depths encode as invalid.
    #[inline]
    pub fn encode(&self, depth: f64) -> u16 {
        if !depth.is_finite() || depth < self.depth_min || depth > self.depth_max {
            return 0;
        }
        let raw = (depth / self.depth_scale).round();
        if raw < 1.0 || raw > u16::MAX as f64 {
            0
        } else {
            raw as u16
        }
    }

    /// Camera-frame point for pixel `(u, v)` at depth `d`.
    #[inline]
    pub fn back_project(&self, u: f64, v: f64, d: f64) -> Vec3 {
        Vec3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d)
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn new(translation: Vec3, rotation: Matrix3<f64>) -> Result<Self> {
        let pose = Pose {
            translation,
            rotation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Pose {
            translation: Vec3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    /// Horizontal camera at `position` whose optical axis points along world
    /// heading `yaw` (radians from +x toward +y), image "down" = world -z.
    pub fn level(position: Vec3, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let forward = Vec3::new(c, s, 0.0);
        let right = Vec3::new(s, -c, 0.0);
        let down = Vec3::new(0.0, 0.0, -1.0);
        Pose {
            translation: position,
            rotation: Matrix3::from_columns(&[right, down, forward]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.translation.iter().chain(self.rotation.iter()).all(|v| v.is_finite()) {
            return Err(Error::input("pose contains non-finite values"));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if err > 1e-9 {
            return Err(Error::input(format!("rotation is not orthonormal (error {err:e})")));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::input("rotation determinant must be +1"));
        }
        Ok(())
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }
}

/// Dense raw depth samples, row-major. Zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<u16>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::input(format!(
                "depth buffer has {} samples, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        DepthImage {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn raw(&self, u: u32, v: u32) -> u16 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn set_raw(&mut self, u: u32, v: u32, raw: u16) {
        let w = self.width as usize;
        self.data[v as usize * w + u as usize] = raw;
    }

    #[inline]
    pub fn depth(&self, u: u32, v: u32, intr: &CameraIntrinsics) -> Option<f64> {
        intr.decode(self.raw(u, v))
    }

    pub fn row(&self, v: u32) -> &[u16] {
        let w = self.width as usize;
        &self.data[v as usize * w..(v as usize + 1) * w]
    }

    pub fn check_matches(&self, intr: &CameraIntrinsics) -> Result<()> {
        if self.width != intr.width || self.height != intr.height {
            return Err(Error::input(format!(
                "depth image is {}x{} but intrinsics are {}x{}",
                self.width, self.height, intr.width, intr.height
            )));
        }
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&r| r != 0).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3> {
        self.points.iter()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vec3 = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Per-axis population standard deviation; zero for an empty cloud.
    pub fn std_dev(&self) -> Vec3 {
        let Some(mean) = self.centroid() else {
            return Vec3::zeros();
        };
        let n = self.points.len() as f64;
        let var = self
            .points
            .iter()
            .map(|p| (p - mean).component_mul(&(p - mean)))
            .sum::<Vec3>()
            / n;
        var.map(f64::sqrt)
    }

    /// Componentwise min and max corner.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = self.points.first()?;
        Some(self.points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }
}

impl FromIterator<Vec3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Vec3>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

/// Axis-aligned box in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    pub center: Vec3,
    pub dims: Vec3,
}

impl Aabb3 {
    pub fn new(center: Vec3, dims: Vec3) -> Result<Self> {
        if !center.iter().chain(dims.iter()).all(|v| v.is_finite()) || dims.iter().any(|&d| d <= 0.0) {
            return Err(Error::input(format!("invalid box dims {dims:?}")));
        }
        Ok(Aabb3 { center, dims })
    }

    /// Box spanning `[lo, hi]`, with every dimension raised to at least
    /// `min_dim` around the same center.
    pub fn from_bounds(lo: Vec3, hi: Vec3, min_dim: f64) -> Self {
        let center = (lo + hi) / 2.0;
        let dims = (hi - lo).map(|d| d.max(min_dim));
        Aabb3 { center, dims }
    }

    pub fn from_points(points: &[Vec3], min_dim: f64) -> Option<Self> {
        let first = points.first()?;
        let (lo, hi) = points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Aabb3::from_bounds(lo, hi, min_dim))
    }

    pub fn min(&self) -> Vec3 {
        self.center - self.dims / 2.0
    }

    pub fn max(&self) -> Vec3 {
        self.center + self.dims / 2.0
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    pub fn intersection_volume(&self, other: &Aabb3) -> f64 {
        let lo = self.min().sup(&other.min());
        let hi = self.max().inf(&other.max());
        let ext = (hi - lo).map(|e| e.max(0.0));
        ext.x * ext.y * ext.z
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (lo, hi) = (self.min(), self.max());
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou3d(a: &Aabb3, b: &Aabb3) -> f64 {
    let inter = a.intersection_volume(b);
    if inter <= 0.0 {
        return 0.0;
    }
    // Symmetric sum keeps iou3d(a, b) == iou3d(b, a) bit-for-bit.
    let union = (a.volume() + b.volume()) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Triangulates every `stride`-th valid pixel into world coordinates.
pub fn triangulate(depth: &DepthImage, intr: &CameraIntrinsics, pose: &Pose, stride: u32) -> Result<PointCloud> {
    triangulate_within(depth, intr, pose, stride, intr.depth_min, intr.depth_max)
}

/// [`triangulate`] restricted to metric depths in `[near, far]`.
pub fn triangulate_within(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    pose: &Pose,
    stride: u32,
    near: f64,
    far: f64,
) -> Result<PointCloud> {
    depth.check_matches(intr)?;
    if stride == 0 {
        return Err(Error::input("stride must be at least 1"));
    }
    let mut points = Vec::with_capacity(depth.data.len() / (stride * stride) as usize);
    for v in (0..depth.height).step_by(stride as usize) {
        let row = depth.row(v);
        for u in (0..depth.width).step_by(stride as usize) {
            let Some(d) = intr.decode(row[u as usize]) else {
                continue;
            };
            if d < near || d > far {
                continue;
            }
            let pc = intr.back_project(u as f64, v as f64, d);
            points.push(pose.camera_to_world(&pc));
        }
    }
    Ok(PointCloud { points })
}

/// Result of projecting a world point into an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProjection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth in meters.
    pub depth: f64,
}

impl PixelProjection {
    /// Integer pixel whose footprint contains the projection.
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.round() as u32, self.v.round() as u32)
    }
}

/// Projects a world point into the image; `None` when it falls outside the
/// frustum or the valid depth range. Pixel `(u, v)` covers `[u-0.5, u+0.5)`.
pub fn project_to_pixel(p: &Vec3, intr: &CameraIntrinsics, pose: &Pose) -> Option<PixelProjection> {
    let pc = pose.world_to_camera(p);
    let d = pc.z;
    if !(d > 0.0) || d < intr.depth_min || d > intr.depth_max {
        return None;
    }
    let u = intr.fx * pc.x / d + intr.cx;
    let v = intr.fy * pc.y / d + intr.cy;
    let inside = |c: f64, n: u32| c >= -0.5 && c < n as f64 - 0.5;
    (inside(u, intr.width) && inside(v, intr.height)).then_some(PixelProjection { u, v, depth: d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_intr(w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: w,
            height: h,
            depth_scale: 0.001,
            depth_min: 0.1,
            depth_max: 10.0,
        }
    }

    #[test]
    fn principal_point_ray() {
        let intr = CameraIntrinsics {
            cx: 10.0,
            cy: 10.0,
            ..CameraIntrinsics::d435_like(64, 48)
        };
        let mut img = DepthImage::zeros(64, 48);
        img.set_raw(10, 10, 2000);
        let cloud = triangulate(&img, &intr, &Pose::identity(), 1).unwrap();
        assert!((cloud.points[0] - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_image_gives_empty_cloud() {
        let intr = CameraIntrinsics::d435_like(32, 24);
        let img = DepthImage::zeros(32, 24);
        assert!(triangulate(&img, &intr, &Pose::identity(), 2).unwrap().is_empty());
    }

    #[test]
    fn two_by_two_pinhole() {
        let intr = unit_intr(2, 2);
        let img = DepthImage::new(2, 2, vec![1000; 4]).unwrap();
        let cloud = triangulate(&img, &intr, &Pose::identity(), 1).unwrap();
        let expected = [
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(0.0, 1.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
        ];
        assert_eq!(cloud.len(), 4);
        for (p, e) in cloud.iter().zip(expected.iter()) {
            assert!((p - e).norm() < 1e-12, "{p:?} vs {e:?}");
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let intr = CameraIntrinsics::d435_like(32, 24);
        let img = DepthImage::zeros(16, 24);
        assert!(matches!(
            triangulate(&img, &intr, &Pose::identity(), 1),
            Err(Error::Input(_))
        ));
        assert!(DepthImage::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn out_of_range_pixels_are_skipped() {
        let intr = unit_intr(2, 1);
        let img = DepthImage::new(2, 1, vec![50, 20_000]).unwrap();
        assert!(triangulate(&img, &intr, &Pose::identity(), 1).unwrap().is_empty());
    }

    #[test]
    fn iou_examples() {
        let a = Aabb3::new(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        assert_eq!(iou3d(&a, &a), 1.0);
        let far = Aabb3::new(Vec3::new(5.0, 0.0, 0.0), Vec3::repeat(1.0)).unwrap();
        assert_eq!(iou3d(&a, &far), 0.0);
        let shifted = Aabb3::new(Vec3::new(0.5, 0.0, 0.0), Vec3::repeat(1.0)).unwrap();
        assert!((iou3d(&a, &shifted) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let intr = CameraIntrinsics {
            depth_max: 5.0,
            ..CameraIntrinsics::d435_like(64, 48)
        };
        let pose = Pose::identity();
        assert!(project_to_pixel(&Vec3::new(0.0, 0.0, -1.0), &intr, &pose).is_none());
        let p = project_to_pixel(&Vec3::new(0.0, 0.0, 2.0), &intr, &pose).unwrap();
        assert_eq!((p.u, p.v, p.depth), (intr.cx, intr.cy, 2.0));
        assert!(project_to_pixel(&Vec3::new(0.0, 0.0, 10.0), &intr, &pose).is_none());
    }

    #[test]
    fn level_pose_looks_along_heading() {
        let pose = Pose::level(Vec3::new(0.0, 0.0, 1.0), 0.0);
        pose.validate().unwrap();
        let w = pose.camera_to_world(&Vec3::new(0.0, 0.0, 2.0));
        assert!((w - Vec3::new(2.0, 0.0, 1.0)).norm() < 1e-12);
        // image right is world -y, image down is world -z
        let r = pose.camera_to_world(&Vec3::new(1.0, 1.0, 0.0));
        assert!((r - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_rotation_and_intrinsics() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(Pose::new(Vec3::zeros(), m).is_err());
        assert!(Pose::new(Vec3::zeros(), m * 1.01).is_err());
        let mut intr = CameraIntrinsics::d435_like(64, 48);
        intr.cx = 100.0;
        assert!(intr.validate().is_err());
        intr = CameraIntrinsics::d435_like(64, 48);
        intr.depth_min = 20.0;
        assert!(intr.validate().is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-5.0..5.0f64),
            prop::array::uniform3(-3.2..3.2f64),
        )
            .prop_map(|(t, r)| {
                let rot = nalgebra::Rotation3::from_euler_angles(r[0], r[1], r[2]);
                Pose::new(Vec3::from(t), *rot.matrix()).unwrap()
            })
    }

    fn arb_box() -> impl Strategy<Value = Aabb3> {
        (
            prop::array::uniform3(-3.0..3.0f64),
            prop::array::uniform3(0.05..3.0f64),
        )
            .prop_map(|(c, d)| Aabb3::new(Vec3::from(c), Vec3::from(d)).unwrap())
    }

    proptest! {
        #[test]
        fn triangulate_project_round_trip(
            u in 0u32..64, v in 0u32..48, raw in 300u16..9000, pose in arb_pose()
        ) {
            let intr = CameraIntrinsics::d435_like(64, 48);
            let mut img = DepthImage::zeros(64, 48);
            img.set_raw(u, v, raw);
            let cloud = triangulate(&img, &intr, &pose, 1).unwrap();
            prop_assert_eq!(cloud.len(), 1);
            let proj = project_to_pixel(&cloud.points[0], &intr, &pose).unwrap();
            prop_assert!((proj.u - u as f64).abs() <= 0.5);
            prop_assert!((proj.v - v as f64).abs() <= 0.5);
            prop_assert!((proj.depth - raw as f64 * 0.001).abs() <= 1e-6);
        }

        #[test]
        fn iou_symmetric_and_reflexive(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(iou3d(&a, &b), iou3d(&b, &a));
            prop_assert!((iou3d(&a, &a) - 1.0).abs() < 1e-12);
            let s = iou3d(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn pose_preserves_distances(
            pose in arb_pose(),
            p in prop::array::uniform3(-10.0..10.0f64),
            q in prop::array::uniform3(-10.0..10.0f64),
        ) {
            let (p, q) = (Vec3::from(p), Vec3::from(q));
            let d0 = (p - q).norm();
            let d1 = (pose.camera_to_world(&p) - pose.camera_to_world(&q)).norm();
            prop_assert!((d0 - d1).abs() < 1e-9);
            let back = pose.world_to_camera(&pose.camera_to_world(&p));
            prop_assert!((back - p).norm() < 1e-9);
        }
    }
}
