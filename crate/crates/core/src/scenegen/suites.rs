//! Built-in scenes. The camera sits 1 m above the ground plane (z = 0),
//! looking along +x unless stated otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraPath, NoiseModel, SceneObject, SceneScript, Shape, Trajectory, Waypoint};
use crate::class::ObstacleClass;
use crate::geometry::Vec3;

pub const CAMERA_HEIGHT: f64 = 1.0;

fn camera_at_origin() -> CameraPath {
    CameraPath::fixed(Vec3::new(0.0, 0.0, CAMERA_HEIGHT), 0.0)
}

pub fn static_box(name: &str, center_xy: [f64; 2], dims: Vec3) -> SceneObject {
    SceneObject {
        name: name.to_string(),
        label: "box".to_string(),
        class: ObstacleClass::Static,
        shape: Shape::Box { dims },
        trajectory: Trajectory::fixed(Vec3::new(center_xy[0], center_xy[1], dims.z / 2.0)),
    }
}

pub fn person(name: &str, radius: f64, height: f64, trajectory: Trajectory) -> SceneObject {
    SceneObject {
        name: name.to_string(),
        label: "person".to_string(),
        class: ObstacleClass::Dynamic,
        shape: Shape::Cylinder { radius, height },
        trajectory,
    }
}

fn wp(t: f64, x: f64, y: f64, z: f64) -> Waypoint {
    Waypoint {
        t,
        position: Vec3::new(x, y, z),
    }
}

/// Back-and-forth walk between `a` and `b` (planar) at `speed`, starting at
/// `a`, covering `duration` seconds.
pub fn shuttle(a: [f64; 2], b: [f64; 2], z: f64, speed: f64, duration: f64) -> Trajectory {
    let leg = (b[0] - a[0]).hypot(b[1] - a[1]) / speed;
    let mut points = vec![wp(0.0, a[0], a[1], z)];
    let mut t = 0.0;
    let mut at_b = false;
    while t < duration {
        t += leg;
        let p = if at_b { a } else { b };
        points.push(wp(t, p[0], p[1], z));
        at_b = !at_b;
    }
    Trajectory::Waypoints { points }
}

/// A slim walker crossing the view at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkerParams {
    pub speed: f64,
    pub frame_rate: f64,
    /// Distance from the camera to the walking line.
    pub distance: f64,
    /// Lateral start; the walker moves toward +y.
    pub start_y: f64,
    pub duration: f64,
    pub radius: f64,
    pub height: f64,
}

impl Default for WalkerParams {
    fn default() -> Self {
        WalkerParams {
            speed: 1.0,
            frame_rate: 30.0,
            distance: 2.25,
            start_y: -0.9,
            duration: 1.8,
            radius: 0.05,
            height: 1.7,
        }
    }
}

pub fn walker_scene(p: &WalkerParams) -> SceneScript {
    SceneScript {
        duration: p.duration,
        frame_rate: p.frame_rate,
        camera: camera_at_origin(),
        objects: vec![person(
            "walker",
            p.radius,
            p.height,
            Trajectory::ConstantVelocity {
                start: Vec3::new(p.distance, p.start_y, p.height / 2.0),
                velocity: Vec3::new(0.0, p.speed, 0.0),
            },
        )],
    }
}

/// Static scenes of 50 frames: fixed, advancing and panning cameras.
pub fn static_suite() -> Vec<(SceneScript, NoiseModel)> {
    let boxes = vec![
        static_box("crate", [2.0, -0.8], Vec3::new(0.6, 0.6, 0.8)),
        static_box("cabinet", [2.6, 0.6], Vec3::new(0.5, 1.0, 1.6)),
        static_box("post", [1.6, 0.3], Vec3::new(0.2, 0.2, 1.8)),
    ];
    let duration = 50.0 / 30.0;
    let fixed = SceneScript {
        duration,
        frame_rate: 30.0,
        camera: camera_at_origin(),
        objects: boxes.clone(),
    };
    let advancing = SceneScript {
        camera: CameraPath {
            trajectory: Trajectory::ConstantVelocity {
                start: Vec3::new(-0.5, 0.0, CAMERA_HEIGHT),
                velocity: Vec3::new(0.3, 0.0, 0.0),
            },
            yaw: 0.0,
            yaw_rate: 0.0,
        },
        ..fixed.clone()
    };
    let panning = SceneScript {
        camera: CameraPath {
            trajectory: Trajectory::fixed(Vec3::new(0.0, 0.0, CAMERA_HEIGHT)),
            yaw: -0.15,
            yaw_rate: 0.18,
        },
        ..fixed.clone()
    };
    vec![
        (fixed.clone(), NoiseModel::none()),
        (fixed, NoiseModel::depth_only(0.01, 11)),
        (advancing.clone(), NoiseModel::none()),
        (advancing, NoiseModel::depth_only(0.01, 12)),
        (panning.clone(), NoiseModel::none()),
        (panning, NoiseModel::depth_only(0.01, 13)),
    ]
}

/// A person repeatedly walks up to a wall, pauses, and walks back. At a low
/// frame rate the step on arrival exceeds the distance from the person to the
/// wall's center.
pub fn person_wall_scene(frame_rate: f64) -> SceneScript {
    let (near, far, y, z, speed) = (1.0, 2.2, 0.1, 0.85, 1.6);
    let walk = (far - near) / speed;
    let points = (0..2)
        .flat_map(|k| {
            let t0 = 8.0 * k as f64;
            [
                wp(t0 + 2.0, near, y, z),
                wp(t0 + 2.0 + walk, far, y, z),
                wp(t0 + 4.0 + walk, far, y, z),
                wp(t0 + 4.0 + 2.0 * walk, near, y, z),
            ]
        })
        .collect();
    SceneScript {
        duration: 16.0,
        frame_rate,
        camera: camera_at_origin(),
        objects: vec![
            static_box("wall", [2.6, 0.0], Vec3::new(0.2, 1.6, 2.0)),
            person("person", 0.12, 1.7, Trajectory::Waypoints { points }),
        ],
    }
}

/// A box starts mostly outside the left edge of the view. The camera holds
/// still long enough for a track to form, then strafes left quickly so the
/// rest of the box comes into view within a few frames.
pub fn approach_wall_scene() -> SceneScript {
    let (hold, strafe, speed) = (0.4, 0.4, 3.0);
    let y_end = strafe * speed;
    SceneScript {
        duration: 1.4,
        frame_rate: 30.0,
        camera: CameraPath {
            trajectory: Trajectory::Waypoints {
                points: vec![
                    wp(0.0, 0.0, 0.0, CAMERA_HEIGHT),
                    wp(hold, 0.0, 0.0, CAMERA_HEIGHT),
                    wp(hold + strafe, 0.0, y_end, CAMERA_HEIGHT),
                ],
            },
            yaw: 0.0,
            yaw_rate: 0.0,
        },
        objects: vec![static_box("wall", [2.0, 1.8], Vec3::new(0.1, 1.0, 2.0))],
    }
}

/// A person standing still beyond the dense sensing range.
pub fn far_object_scene(distance: f64) -> SceneScript {
    SceneScript {
        duration: 1.0,
        frame_rate: 30.0,
        camera: camera_at_origin(),
        objects: vec![person(
            "far_person",
            0.15,
            1.7,
            Trajectory::fixed(Vec3::new(distance, 0.3, 0.85)),
        )],
    }
}

/// Three static boxes and two walkers.
pub fn bench_scene() -> SceneScript {
    let duration = 4.0;
    SceneScript {
        duration,
        frame_rate: 30.0,
        camera: camera_at_origin(),
        objects: vec![
            static_box("crate", [2.6, -1.2], Vec3::new(0.6, 0.6, 0.8)),
            static_box("cabinet", [2.7, 1.1], Vec3::new(0.5, 1.0, 1.6)),
            static_box("post", [1.5, 0.6], Vec3::new(0.2, 0.2, 1.8)),
            person("walker_a", 0.1, 1.7, shuttle([2.0, -1.0], [2.0, 1.0], 0.85, 1.0, duration)),
            person("walker_b", 0.1, 1.6, shuttle([1.4, -0.6], [2.4, -0.6], 0.8, 0.8, duration)),
        ],
    }
}

/// One randomized sequence of the noisy evaluation suite: two or three static
/// boxes, one or two walkers, 1% depth noise and drifting blob artifacts.
pub fn noisy_sequence(index: u64, duration: f64) -> (SceneScript, NoiseModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + index);
    let mut objects = Vec::new();
    let n_boxes = rng.random_range(2..=3);
    let lanes = [-1.1, 0.0, 1.1];
    for (i, &y) in lanes.iter().enumerate().take(n_boxes) {
        let dims = Vec3::new(
            rng.random_range(0.3..0.7),
            rng.random_range(0.6..0.9),
            rng.random_range(0.6..1.6),
        );
        let x = rng.random_range(2.3..2.7);
        objects.push(static_box(&format!("box{i}"), [x, y + rng.random_range(-0.05..0.05)], dims));
    }
    let n_walkers = rng.random_range(1..=2);
    for i in 0..n_walkers {
        let x = if i == 0 { rng.random_range(1.5..1.7) } else { rng.random_range(1.8..1.95) };
        let speed = rng.random_range(0.8..1.2);
        let y0 = rng.random_range(-1.0..-0.6);
        let traj = shuttle([x, y0], [x, -y0], 0.85, speed, duration);
        objects.push(person(&format!("walker{i}"), 0.1, 1.7, traj));
    }
    let script = SceneScript {
        duration,
        frame_rate: 30.0,
        camera: camera_at_origin(),
        objects,
    };
    (script, NoiseModel::standard(1000 + index))
}

pub fn noisy_suite(count: u64, duration: f64) -> Vec<(SceneScript, NoiseModel)> {
    (0..count).map(|i| noisy_sequence(i, duration)).collect()
}

/// Names accepted by [`by_name`].
pub const SCENE_NAMES: &[&str] = &["walker", "person_wall", "approach_wall", "far_object", "bench", "noisy"];

pub fn by_name(name: &str) -> Option<(SceneScript, NoiseModel)> {
    Some(match name {
        "walker" => (walker_scene(&WalkerParams::default()), NoiseModel::none()),
        "person_wall" => (person_wall_scene(2.0), NoiseModel::none()),
        "approach_wall" => (approach_wall_scene(), NoiseModel::none()),
        "far_object" => (far_object_scene(5.0), NoiseModel::none()),
        "bench" => (bench_scene(), NoiseModel::none()),
        "noisy" => noisy_sequence(0, 30.0),
        _ => return None,
    })
}
