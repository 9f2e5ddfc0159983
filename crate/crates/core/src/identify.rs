//! Static/dynamic identification: a center-velocity gate, then per-point
//! motion voting against the track's cloud from a few frames back.

use serde::{Deserialize, Serialize};

use crate::class::ObstacleClass;
use crate::error::{Error, Result};
use crate::geometry::{project_to_pixel, CameraIntrinsics, DepthImage, PointCloud, Pose};
use crate::grid::SpatialHash;
use crate::madlift::MadConfig;
use crate::tracker::Track;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyConfig {
    pub t_vel: f64,
    pub t_vote: f64,
    pub t_ratio: f64,
    pub k_back: usize,
    pub min_valid_points: usize,
    pub class_hysteresis: u32,
    /// Drop points that the past camera could not have seen.
    pub visibility_filter: bool,
    /// A past depth reading this much nearer than the point means occluded.
    pub occlusion_margin: f64,
    /// Nearest-neighbor search radius for point correspondence, meters.
    pub match_radius: f64,
    /// Frames a dynamic semantic label keeps overriding the vote.
    pub label_persistence: u64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            t_vel: 0.3,
            t_vote: 0.3,
            t_ratio: 0.5,
            k_back: 5,
            min_valid_points: 10,
            class_hysteresis: 3,
            visibility_filter: true,
            occlusion_margin: 0.1,
            match_radius: 1.0,
            label_persistence: 10,
        }
    }
}

impl IdentifyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_vel > 0.0
            && self.t_vote > 0.0
            && self.t_ratio > 0.0
            && self.t_ratio < 1.0
            && self.k_back >= 1
            && self.match_radius > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config("identify thresholds must be positive and t_ratio in (0, 1)"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Static,
    Candidate,
}

pub fn velocity_gate(velocity: [f64; 2], cfg: &IdentifyConfig) -> Gate {
    if velocity[0].hypot(velocity[1]) < cfg.t_vel {
        Gate::Static
    } else {
        Gate::Candidate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Votes {
    pub n_vote: usize,
    pub n_valid: usize,
}

impl Votes {
    pub fn ratio(&self) -> Option<f64> {
        (self.n_valid > 0).then(|| self.n_vote as f64 / self.n_valid as f64)
    }
}

/// What the past camera recorded.
#[derive(Debug, Clone, Copy)]
pub struct PastView<'a> {
    pub depth: &'a DepthImage,
    pub intr: &'a CameraIntrinsics,
    pub pose: &'a Pose,
}

impl PastView<'_> {
    /// Whether a world point lay in the past frustum and was not hidden
    /// behind a nearer surface.
    pub fn saw(&self, p: &crate::geometry::Vec3, margin: f64) -> bool {
        let Some(proj) = project_to_pixel(p, self.intr, self.pose) else {
            return false;
        };
        let (u, v) = proj.pixel();
        match self.depth.depth(u, v, self.intr) {
            Some(recorded) => recorded >= proj.depth - margin,
            None => true,
        }
    }
}

/// Matches each current point to its nearest past point and counts valid
/// points and dynamic votes. Planar displacement over `dt` gives each point's
/// velocity. A point is valid when its velocity is not opposed to
/// `v_center` (zero displacement is valid and never votes) and, with a past
/// view given, the past camera could have seen it.
pub fn point_votes(
    current: &PointCloud,
    past: &PointCloud,
    dt: f64,
    v_center: [f64; 2],
    past_view: Option<&PastView<'_>>,
    cfg: &IdentifyConfig,
) -> Votes {
    let mut votes = Votes::default();
    if current.is_empty() || past.is_empty() || !(dt > 0.0) {
        return votes;
    }
    let grid = SpatialHash::new(&past.points, (cfg.match_radius / 4.0).max(0.05));
    for p in current.iter() {
        let Some((j, _)) = grid.nearest(p, cfg.match_radius) else {
            continue;
        };
        let dx = (p.x - past.points[j].x) / dt;
        let dy = (p.y - past.points[j].y) / dt;
        let moving = dx != 0.0 || dy != 0.0;
        if moving && dx * v_center[0] + dy * v_center[1] <= 0.0 {
            continue;
        }
        if let Some(view) = past_view {
            if !view.saw(p, cfg.occlusion_margin) {
                continue;
            }
        }
        votes.n_valid += 1;
        if dx.hypot(dy) > cfg.t_vote {
            votes.n_vote += 1;
        }
    }
    votes
}

/// Single-frame decision before hysteresis.
pub fn classify(gate: Gate, votes: Option<Votes>, dynamic_label: bool, cfg: &IdentifyConfig) -> ObstacleClass {
    if dynamic_label {
        return ObstacleClass::Dynamic;
    }
    if gate == Gate::Static {
        return ObstacleClass::Static;
    }
    match votes.filter(|v| v.n_valid >= cfg.min_valid_points.max(1)) {
        Some(v) if v.n_vote as f64 / v.n_valid as f64 > cfg.t_ratio => ObstacleClass::Dynamic,
        Some(_) => ObstacleClass::Static,
        None => ObstacleClass::Dynamic,
    }
}

/// Applies a raw decision to the track. The first decision sticks at once;
/// later changes need `class_hysteresis` consecutive agreeing frames, except
/// that a semantic override takes effect immediately.
pub fn apply_hysteresis(track: &mut Track, raw: ObstacleClass, immediate: bool, cfg: &IdentifyConfig) {
    if track.class == ObstacleClass::Unknown || immediate {
        track.class = raw;
        track.pending = None;
        return;
    }
    if raw == track.class {
        track.pending = None;
        return;
    }
    let count = match track.pending {
        Some((c, n)) if c == raw => n + 1,
        _ => 1,
    };
    if count >= cfg.class_hysteresis {
        track.class = raw;
        track.pending = None;
    } else {
        track.pending = Some((raw, count));
    }
}

/// Camera frames kept for visibility checks, looked up by frame index.
pub trait FrameLookup {
    fn view(&self, frame: u64) -> Option<PastView<'_>>;
}

/// Classifies one confirmed track at `frame`.
pub fn identify_track<L: FrameLookup + ?Sized>(
    track: &mut Track,
    frame: u64,
    frames: &L,
    cfg: &IdentifyConfig,
    mad_cfg: &MadConfig,
) {
    let labeled = track
        .label
        .as_ref()
        .is_some_and(|(l, f)| mad_cfg.is_dynamic(l) && frame.saturating_sub(*f) <= cfg.label_persistence);
    let gate = velocity_gate(track.velocity(), cfg);
    let votes = if labeled || gate == Gate::Static {
        None
    } else {
        track_votes(track, frames, cfg)
    };
    let raw = classify(gate, votes, labeled, cfg);
    apply_hysteresis(track, raw, labeled, cfg);
}

fn track_votes<L: FrameLookup + ?Sized>(track: &Track, frames: &L, cfg: &IdentifyConfig) -> Option<Votes> {
    let now = track.history.back()?;
    if track.misses > 0 {
        return None;
    }
    let target = now.frame.saturating_sub(cfg.k_back as u64);
    let past = track.history.iter().find(|h| h.frame >= target && h.frame < now.frame)?;
    let view = if cfg.visibility_filter {
        Some(frames.view(past.frame)?)
    } else {
        None
    };
    Some(point_votes(
        &now.cloud,
        &past.cloud,
        now.timestamp - past.timestamp,
        track.velocity(),
        view.as_ref(),
        cfg,
    ))
}
