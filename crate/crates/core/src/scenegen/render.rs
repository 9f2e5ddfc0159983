use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DetectionJitter, NoiseModel, SceneScript, Shape};
use crate::class::ObstacleClass;
use crate::error::{Error, Result};
use crate::geometry::{Aabb3, CameraIntrinsics, DepthImage, Pose, Vec3};
use crate::madlift::Detection2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    /// Index of the object in the scene script.
    pub id: usize,
    pub name: String,
    pub label: String,
    pub aabb: Aabb3,
    pub velocity: Vec3,
    pub class: ObstacleClass,
    /// Fraction of the object's bounding lattice inside the frustum and not
    /// hidden by other objects.
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub timestamp: f64,
    pub objects: Vec<GroundTruthObject>,
}

/// World-frame primitive at a fixed instant.
#[derive(Clone, Copy)]
enum Solid {
    Box { lo: Vec3, hi: Vec3 },
    Cylinder { center: Vec3, radius: f64, half_height: f64 },
}

const HIT_EPS: f64 = 1e-9;

impl Solid {
    fn at(shape: &Shape, center: Vec3) -> Self {
        match *shape {
            Shape::Box { dims } => Solid::Box {
                lo: center - dims / 2.0,
                hi: center + dims / 2.0,
            },
            Shape::Cylinder { radius, height } => Solid::Cylinder {
                center,
                radius,
                half_height: height / 2.0,
            },
        }
    }

    /// Smallest positive ray parameter of the entry point, if any. Rays
    /// starting inside the solid report no hit.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match *self {
            Solid::Box { lo, hi } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if dir[i].abs() < 1e-15 {
                        if origin[i] < lo[i] || origin[i] > hi[i] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[i];
                    let (mut a, mut b) = ((lo[i] - origin[i]) * inv, (hi[i] - origin[i]) * inv);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    t0 = t0.max(a);
                    t1 = t1.min(b);
                }
                (t1 >= t0 && t0 > HIT_EPS).then_some(t0)
            }
            Solid::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let (z_lo, z_hi) = (center.z - half_height, center.z + half_height);
                let ox = origin.x - center.x;
                let oy = origin.y - center.y;
                let r2 = radius * radius;
                if ox * ox + oy * oy <= r2 && origin.z >= z_lo && origin.z <= z_hi {
                    return None;
                }
                let mut best = f64::INFINITY;
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > 1e-15 {
                    let b = 2.0 * (ox * dir.x + oy * dir.y);
                    let c = ox * ox + oy * oy - r2;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        let z = origin.z + t * dir.z;
                        if t > HIT_EPS && z >= z_lo && z <= z_hi {
                            best = t;
                        }
                    }
                }
                if dir.z.abs() > 1e-15 {
                    for zc in [z_lo, z_hi] {
                        let t = (zc - origin.z) / dir.z;
                        if t > HIT_EPS && t < best {
                            let x = ox + t * dir.x;
                            let y = oy + t * dir.y;
                            if x * x + y * y <= r2 {
                                best = t;
                            }
                        }
                    }
                }
                best.is_finite().then_some(best)
            }
        }
    }
}

struct Snapshot {
    pose: Pose,
    solids: Vec<Solid>,
}

impl Snapshot {
    fn new(script: &SceneScript, t: f64) -> Self {
        Snapshot {
            pose: script.camera.pose_at(t),
            solids: script
                .objects
                .iter()
                .map(|o| Solid::at(&o.shape, o.trajectory.position(t)))
                .collect(),
        }
    }

    /// Nearest hit as (depth, object index) for a camera-frame direction
    /// with unit z, so the ray parameter equals camera depth.
    fn cast(&self, dir_cam: &Vec3) -> Option<(f64, usize)> {
        let dir = self.pose.rotation * dir_cam;
        let origin = self.pose.translation;
        self.solids
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.intersect(&origin, &dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    fn visibility(&self, index: usize, aabb: &Aabb3, intr: &CameraIntrinsics) -> f64 {
        const N: usize = 5;
        let lo = aabb.min();
        let mut visible = 0usize;
        for i in 0..N {
            for j in 0..N {
                for k in 0..N {
                    let frac = Vec3::new(i as f64, j as f64, k as f64).map(|f| (f + 0.5) / N as f64);
                    let p = lo + aabb.dims.component_mul(&frac);
                    let Some(proj) = crate::geometry::project_to_pixel(&p, intr, &self.pose) else {
                        continue;
                    };
                    let pc = self.pose.world_to_camera(&p);
                    let dir_cam = pc / pc.z;
                    let dir = self.pose.rotation * dir_cam;
                    let occluded = self.solids.iter().enumerate().any(|(o, s)| {
                        o != index
                            && s.intersect(&self.pose.translation, &dir)
                                .is_some_and(|t| t < proj.depth * (1.0 - 1e-9))
                    });
                    if !occluded {
                        visible += 1;
                    }
                }
            }
        }
        visible as f64 / (N * N * N) as f64
    }
}

fn frame_index(script: &SceneScript, t: f64) -> u64 {
    (t * script.frame_rate).round().max(0.0) as u64
}

fn mix_seed(seed: u64, salt: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ salt.rotate_left(17) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const NOISE_SALT: u64 = 0x6e6f697365;
const BLOB_SALT: u64 = 0x626c6f62;
const JITTER_SALT: u64 = 0x6a6974746572;

fn check_time(script: &SceneScript, t: f64) -> Result<()> {
    if !(t >= 0.0 && t <= script.duration + 1e-9) {
        return Err(Error::input(format!("time {t} outside [0, {}]", script.duration)));
    }
    Ok(())
}

fn ground_truth(script: &SceneScript, snap: &Snapshot, t: f64, intr: &CameraIntrinsics) -> GroundTruthFrame {
    let objects = script
        .objects
        .iter()
        .enumerate()
        .map(|(id, obj)| {
            let aabb = obj.aabb_at(t);
            GroundTruthObject {
                id,
                name: obj.name.clone(),
                label: obj.label.clone(),
                aabb,
                velocity: obj.trajectory.velocity(t),
                class: obj.class,
                visibility: snap.visibility(id, &aabb, intr),
            }
        })
        .collect();
    GroundTruthFrame { timestamp: t, objects }
}

/// Ray-casts the scene at time `t`: per-pixel depth of the nearest surface,
/// background invalid, then applies the noise model.
pub fn render_frame(
    script: &SceneScript,
    t: f64,
    intr: &CameraIntrinsics,
    noise: &NoiseModel,
) -> Result<(DepthImage, GroundTruthFrame)> {
    check_time(script, t)?;
    intr.validate()?;
    let snap = Snapshot::new(script, t);
    let k = frame_index(script, t);

    let mut img = DepthImage::zeros(intr.width, intr.height);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, NOISE_SALT, k));
    for v in 0..intr.height {
        let y = (v as f64 - intr.cy) / intr.fy;
        for u in 0..intr.width {
            let x = (u as f64 - intr.cx) / intr.fx;
            let Some((mut d, _)) = snap.cast(&Vec3::new(x, y, 1.0)) else {
                continue;
            };
            if noise.depth_sigma > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                d *= 1.0 + noise.depth_sigma * n;
            }
            img.set_raw(u, v, intr.encode(d));
        }
    }
    if noise.blob_rate > 0.0 {
        paint_blobs(&mut img, intr, noise, k, &mut rng);
    }
    let truth = ground_truth(script, &snap, t, intr);
    Ok((img, truth))
}

fn paint_blobs(img: &mut DepthImage, intr: &CameraIntrinsics, noise: &NoiseModel, k: u64, pixel_rng: &mut ChaCha8Rng) {
    let life = noise.blob_lifetime.max(1) as u64;
    let first = k.saturating_sub(life - 1);
    for born in first..=k {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, BLOB_SALT, born));
        if rng.random::<f64>() >= noise.blob_rate {
            continue;
        }
        let u0 = rng.random_range(0.0..intr.width as f64);
        let v0 = rng.random_range(0.0..intr.height as f64);
        let (smin, smax) = (noise.blob_size[0].min(noise.blob_size[1]), noise.blob_size[0].max(noise.blob_size[1]));
        let side = rng.random_range(smin..=smax.max(smin)) as f64;
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let (dlo, dhi) = (noise.blob_depth[0], noise.blob_depth[1].max(noise.blob_depth[0]));
        let depth = if dhi > dlo { rng.random_range(dlo..dhi) } else { dlo };
        let age = (k - born) as f64;
        let cu = u0 + age * noise.blob_speed * heading.cos();
        let cv = v0 + age * noise.blob_speed * heading.sin();
        let (u_lo, u_hi) = (cu - side / 2.0, cu + side / 2.0);
        let (v_lo, v_hi) = (cv - side / 2.0, cv + side / 2.0);
        if u_hi < 0.0 || v_hi < 0.0 || u_lo > intr.width as f64 - 1.0 || v_lo > intr.height as f64 - 1.0 {
            continue;
        }
        let (u_start, u_end) = (u_lo.ceil().max(0.0) as u32, u_hi.floor().min(intr.width as f64 - 1.0) as u32);
        let v_start = v_lo.ceil().max(0.0) as u32;
        let v_end = v_hi.floor().min(intr.height as f64 - 1.0) as u32;
        for v in v_start..=v_end {
            for u in u_start..=u_end {
                let n: f64 = StandardNormal.sample(pixel_rng);
                img.set_raw(u, v, intr.encode(depth * (1.0 + noise.depth_sigma * n)));
            }
        }
    }
}

/// 2D boxes of every visible object: pixel bounds of its projected AABB
/// corners, clipped to the image, optionally jittered or dropped.
pub fn render_detections2d(
    script: &SceneScript,
    t: f64,
    intr: &CameraIntrinsics,
    jitter: &DetectionJitter,
) -> Result<Vec<Detection2D>> {
    check_time(script, t)?;
    let snap = Snapshot::new(script, t);
    let truth = ground_truth(script, &snap, t, intr);
    Ok(detections_from_truth(script, &snap, &truth, t, intr, jitter))
}

/// Renders depth, ground truth and 2D detections in one pass.
pub fn render_frame_with_detections(
    script: &SceneScript,
    t: f64,
    intr: &CameraIntrinsics,
    noise: &NoiseModel,
    jitter: &DetectionJitter,
) -> Result<(DepthImage, GroundTruthFrame, Vec<Detection2D>)> {
    let (img, truth) = render_frame(script, t, intr, noise)?;
    let snap = Snapshot::new(script, t);
    let dets = detections_from_truth(script, &snap, &truth, t, intr, jitter);
    Ok((img, truth, dets))
}

fn detections_from_truth(
    script: &SceneScript,
    snap: &Snapshot,
    truth: &GroundTruthFrame,
    t: f64,
    intr: &CameraIntrinsics,
    jitter: &DetectionJitter,
) -> Vec<Detection2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(jitter.seed, JITTER_SALT, frame_index(script, t)));
    let mut out = Vec::new();
    for gt in &truth.objects {
        if gt.visibility <= 0.0 {
            continue;
        }
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut behind = false;
        for c in gt.aabb.corners() {
            let pc = snap.pose.world_to_camera(&c);
            if pc.z <= 1e-3 {
                behind = true;
                break;
            }
            let u = intr.fx * pc.x / pc.z + intr.cx;
            let v = intr.fy * pc.y / pc.z + intr.cy;
            lo = (lo.0.min(u), lo.1.min(v));
            hi = (hi.0.max(u), hi.1.max(v));
        }
        if behind {
            continue;
        }
        let mut edges = [lo.0, hi.0, lo.1, hi.1];
        if jitter.pixel_sigma > 0.0 {
            for e in &mut edges {
                let n: f64 = StandardNormal.sample(&mut rng);
                *e += jitter.pixel_sigma * n;
            }
        }
        if jitter.dropout > 0.0 && rng.random::<f64>() < jitter.dropout {
            continue;
        }
        let (wmax, hmax) = (intr.width as f64 - 1.0, intr.height as f64 - 1.0);
        let u_min = edges[0].clamp(0.0, wmax);
        let u_max = edges[1].clamp(0.0, wmax);
        let v_min = edges[2].clamp(0.0, hmax);
        let v_max = edges[3].clamp(0.0, hmax);
        if u_min >= u_max || v_min >= v_max {
            continue;
        }
        out.push(Detection2D {
            u_min,
            u_max,
            v_min,
            v_max,
            label: gt.label.clone(),
            confidence: 1.0,
        });
    }
    out
}
