//! Multi-object tracker: feature-similarity association and one planar
//! constant-acceleration Kalman filter per obstacle.

pub mod kalman;

pub use kalman::{kf_predict, kf_update, min_eigenvalue, KalmanState, Mat6, MotionModel, Vec6, REGULARIZATION};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::class::ObstacleClass;
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::geometry::{Aabb3, PointCloud, Vec3};

/// Appearance and placement summary used for association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub pos: Vec3,
    pub dim: Vec3,
    pub len: f64,
    pub std: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureScales {
    pub pos: f64,
    pub dim: f64,
    pub len: f64,
    pub std: f64,
}

impl Default for FeatureScales {
    fn default() -> Self {
        FeatureScales {
            pos: 1.0,
            dim: 1.0,
            len: 100.0,
            std: 1.0,
        }
    }
}

pub fn extract_feature(aabb: &Aabb3, cloud: &PointCloud) -> FeatureVector {
    FeatureVector {
        pos: aabb.center,
        dim: aabb.dims,
        len: cloud.len() as f64,
        std: cloud.std_dev(),
    }
}

/// exp(-|d|^2) of the scaled feature difference.
pub fn similarity(a: &FeatureVector, b: &FeatureVector, scales: &FeatureScales) -> f64 {
    let d2 = ((a.pos - b.pos) / scales.pos).norm_squared()
        + ((a.dim - b.dim) / scales.dim).norm_squared()
        + ((a.len - b.len) / scales.len).powi(2)
        + ((a.std - b.std) / scales.std).norm_squared();
    (-d2).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationMethod {
    #[default]
    Feature,
    /// Nearest previous center; the classic baseline.
    CenterDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub t_sim: f64,
    pub scales: FeatureScales,
    /// Span in frames of the finite differences feeding the measurement.
    pub k_v: usize,
    pub q: [f64; 6],
    pub r: [f64; 6],
    pub initial_covariance: [f64; 6],
    pub birth_hits: u32,
    pub death_misses: u32,
    pub history_len: usize,
    /// Smoothing factor for the vertical center and box dims.
    pub z_alpha: f64,
    pub motion: MotionModel,
    pub association: AssociationMethod,
    /// Gate for center-distance association, meters.
    pub max_center_distance: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            t_sim: 0.3,
            scales: FeatureScales::default(),
            k_v: 3,
            q: [0.01, 0.01, 0.05, 0.05, 0.1, 0.1],
            r: [0.05, 0.05, 0.2, 0.2, 0.5, 0.5],
            initial_covariance: [0.05, 0.05, 1.0, 1.0, 1.0, 1.0],
            birth_hits: 3,
            death_misses: 5,
            history_len: 90,
            z_alpha: 0.5,
            motion: MotionModel::ConstantAcceleration,
            association: AssociationMethod::Feature,
            max_center_distance: 1.0,
        }
    }
}

impl TrackerConfig {
    /// The center-distance, constant-velocity baseline.
    pub fn baseline() -> Self {
        TrackerConfig {
            motion: MotionModel::ConstantVelocity,
            association: AssociationMethod::CenterDistance,
            ..TrackerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scales;
        let psd = |m: &[f64; 6]| m.iter().all(|&v| v >= 0.0 && v.is_finite());
        if !(self.t_sim > 0.0 && self.t_sim < 1.0) {
            return Err(Error::config("t_sim must lie in (0, 1)"));
        }
        if !(s.pos > 0.0 && s.dim > 0.0 && s.len > 0.0 && s.std > 0.0) {
            return Err(Error::config("feature scales must be positive"));
        }
        if self.k_v == 0 || self.birth_hits == 0 || self.death_misses == 0 || self.history_len == 0 {
            return Err(Error::config("k_v, birth_hits, death_misses and history_len must be at least 1"));
        }
        if !psd(&self.q) || !psd(&self.r) || !psd(&self.initial_covariance) {
            return Err(Error::config("noise covariances must be non-negative"));
        }
        if !(self.z_alpha > 0.0 && self.z_alpha <= 1.0) {
            return Err(Error::config("z_alpha must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn diag(v: &[f64; 6]) -> Mat6 {
    Mat6::from_diagonal(&Vec6::from(*v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub frame: u64,
    pub timestamp: f64,
    pub aabb: Aabb3,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    pub feature: FeatureVector,
    pub z_center: f64,
    pub dims: Vec3,
    pub cloud: PointCloud,
    /// Matched detections, oldest first.
    pub history: VecDeque<HistoryEntry>,
    pub hits: u32,
    pub misses: u32,
    pub confirmed: bool,
    pub class: ObstacleClass,
    /// Candidate class and how many consecutive frames proposed it.
    pub pending: Option<(ObstacleClass, u32)>,
    /// Most recent semantic label and the frame it arrived.
    pub label: Option<(String, u64)>,
    previous_position: [f64; 2],
}

impl Track {
    pub fn aabb(&self) -> Aabb3 {
        let [x, y] = self.state.position();
        Aabb3 {
            center: Vec3::new(x, y, self.z_center),
            dims: self.dims,
        }
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.state.velocity()
    }

    pub fn speed(&self) -> f64 {
        let [vx, vy] = self.velocity();
        vx.hypot(vy)
    }

    pub fn is_matched(&self) -> bool {
        self.misses == 0
    }

    pub fn output(&self) -> TrackOutput {
        TrackOutput {
            id: self.id,
            class: self.class,
            aabb: self.aabb(),
            velocity: self.velocity(),
        }
    }
}

/// Externally visible snapshot of a confirmed track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub id: u64,
    pub class: ObstacleClass,
    pub aabb: Aabb3,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// (track index, detection index, score).
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl Association {
    fn from_matches(matches: Vec<(usize, usize, f64)>, tracks: usize, detections: usize) -> Self {
        let mut t_used = vec![false; tracks];
        let mut d_used = vec![false; detections];
        for &(t, d, _) in &matches {
            t_used[t] = true;
            d_used[d] = true;
        }
        Association {
            matches,
            unmatched_tracks: (0..tracks).filter(|&t| !t_used[t]).collect(),
            unmatched_detections: (0..detections).filter(|&d| !d_used[d]).collect(),
        }
    }
}

/// Greedy one-to-one matching by descending similarity; pairs at or below
/// `t_sim` never match. `track_features` should carry predicted positions.
pub fn associate(track_features: &[FeatureVector], detections: &[FeatureVector], cfg: &TrackerConfig) -> Association {
    let mut pairs = Vec::new();
    for (t, tf) in track_features.iter().enumerate() {
        for (d, df) in detections.iter().enumerate() {
            let s = similarity(tf, df, &cfg.scales);
            if s > cfg.t_sim {
                pairs.push((t, d, s));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut t_used = vec![false; track_features.len()];
    let mut d_used = vec![false; detections.len()];
    let mut matches = Vec::new();
    for (t, d, s) in pairs {
        if !t_used[t] && !d_used[d] {
            t_used[t] = true;
            d_used[d] = true;
            matches.push((t, d, s));
        }
    }
    Association::from_matches(matches, track_features.len(), detections.len())
}

/// Baseline association: every detection claims the track whose previous
/// planar position is nearest (within `max_distance`); when several claim
/// the same track the closest keeps it and the rest stay unmatched. The
/// score is the planar distance.
pub fn associate_center_distance(track_positions: &[[f64; 2]], detections: &[[f64; 2]], max_distance: f64) -> Association {
    let dist = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let mut claim: Vec<Option<(usize, f64)>> = vec![None; track_positions.len()];
    for (d, dp) in detections.iter().enumerate() {
        let nearest = track_positions
            .iter()
            .enumerate()
            .map(|(t, tp)| (t, dist(tp, dp)))
            .filter(|&(_, e)| e <= max_distance)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((t, e)) = nearest {
            if claim[t].is_none_or(|(_, best)| e < best) {
                claim[t] = Some((d, e));
            }
        }
    }
    let matches = claim
        .iter()
        .enumerate()
        .filter_map(|(t, c)| c.map(|(d, e)| (t, d, e)))
        .collect();
    Association::from_matches(matches, track_positions.len(), detections.len())
}

/// Finite-difference velocity and acceleration over a `k_v`-sample span.
/// `samples` are (timestamp, planar position), oldest first. Velocity needs
/// k_v + 1 samples and acceleration 2·k_v + 1; otherwise each reads zero.
pub fn measure_kinematics(samples: &[(f64, [f64; 2])], k_v: usize) -> ([f64; 2], [f64; 2]) {
    let n = samples.len();
    let vel_at = |end: usize| -> [f64; 2] {
        let (t1, p1) = samples[end];
        let (t0, p0) = samples[end - k_v];
        let dt = t1 - t0;
        [(p1[0] - p0[0]) / dt, (p1[1] - p0[1]) / dt]
    };
    if k_v == 0 || n < k_v + 1 {
        return ([0.0; 2], [0.0; 2]);
    }
    let v = vel_at(n - 1);
    if n < 2 * k_v + 1 {
        return (v, [0.0; 2]);
    }
    let v_prev = vel_at(n - 1 - k_v);
    let dt = samples[n - 1].0 - samples[n - 1 - k_v].0;
    (v, [(v[0] - v_prev[0]) / dt, (v[1] - v_prev[1]) / dt])
}

/// Measurement variance standing in for a component with no measurement.
const UNOBSERVED: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_time: Option<f64>,
    frame: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            last_time: None,
            frame: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn tracks_mut(&mut self) -> &mut [Track] {
        &mut self.tracks
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.confirmed)
    }

    /// Index of the most recent frame passed to [`Tracker::step`].
    pub fn frame_index(&self) -> u64 {
        self.frame
    }

    /// Predicts, associates, updates and manages the lifecycle for one frame.
    pub fn step(&mut self, detections: &[Detection], timestamp: f64) -> Result<()> {
        let dt = match self.last_time {
            Some(t) if !(timestamp > t) => {
                return Err(Error::input(format!("timestamp {timestamp} does not advance past {t}")));
            }
            Some(t) => {
                self.frame += 1;
                Some(timestamp - t)
            }
            None => None,
        };
        self.last_time = Some(timestamp);

        let q = diag(&self.cfg.q);
        for track in &mut self.tracks {
            track.previous_position = track.state.position();
            if let Some(dt) = dt {
                track.state = kf_predict(&track.state, &self.cfg.motion.transition(dt), &q);
            }
        }

        let assoc = match self.cfg.association {
            AssociationMethod::Feature => {
                let track_features: Vec<FeatureVector> = self
                    .tracks
                    .iter()
                    .map(|t| FeatureVector {
                        pos: t.aabb().center,
                        ..t.feature
                    })
                    .collect();
                let det_features: Vec<FeatureVector> =
                    detections.iter().map(|d| extract_feature(&d.aabb, &d.cloud)).collect();
                associate(&track_features, &det_features, &self.cfg)
            }
            AssociationMethod::CenterDistance => {
                let prev: Vec<[f64; 2]> = self.tracks.iter().map(|t| t.previous_position).collect();
                let centers: Vec<[f64; 2]> = detections.iter().map(|d| [d.aabb.center.x, d.aabb.center.y]).collect();
                associate_center_distance(&prev, &centers, self.cfg.max_center_distance)
            }
        };

        for &(t, d, _) in &assoc.matches {
            self.update_track(t, &detections[d], timestamp);
        }
        let mut dead = vec![false; self.tracks.len()];
        for &t in &assoc.unmatched_tracks {
            let track = &mut self.tracks[t];
            track.misses += 1;
            track.hits = 0;
            dead[t] = !track.confirmed || track.misses >= self.cfg.death_misses;
        }
        let mut i = 0;
        self.tracks.retain(|_| {
            i += 1;
            !dead[i - 1]
        });
        for &d in &assoc.unmatched_detections {
            self.spawn(&detections[d], timestamp);
        }
        Ok(())
    }

    fn spawn(&mut self, det: &Detection, timestamp: f64) {
        let c = det.aabb.center;
        let mut x = Vec6::zeros();
        x[0] = c.x;
        x[1] = c.y;
        let track = Track {
            id: self.next_id,
            state: KalmanState::new(x, diag(&self.cfg.initial_covariance)),
            feature: extract_feature(&det.aabb, &det.cloud),
            z_center: c.z,
            dims: det.aabb.dims,
            cloud: det.cloud.clone(),
            history: VecDeque::from([HistoryEntry {
                frame: self.frame,
                timestamp,
                aabb: det.aabb,
                cloud: det.cloud.clone(),
            }]),
            hits: 1,
            misses: 0,
            confirmed: self.cfg.birth_hits <= 1,
            class: ObstacleClass::Unknown,
            pending: None,
            label: det.label.clone().map(|l| (l, self.frame)),
            previous_position: [c.x, c.y],
        };
        self.next_id += 1;
        self.tracks.push(track);
    }

    fn update_track(&mut self, index: usize, det: &Detection, timestamp: f64) {
        let cfg = &self.cfg;
        let frame = self.frame;
        let track = &mut self.tracks[index];
        track.history.push_back(HistoryEntry {
            frame,
            timestamp,
            aabb: det.aabb,
            cloud: det.cloud.clone(),
        });
        while track.history.len() > cfg.history_len {
            track.history.pop_front();
        }
        let span = (2 * cfg.k_v + 1).min(track.history.len());
        let samples: Vec<(f64, [f64; 2])> = track
            .history
            .iter()
            .skip(track.history.len() - span)
            .map(|h| (h.timestamp, [h.aabb.center.x, h.aabb.center.y]))
            .collect();
        let (v, a) = measure_kinematics(&samples, cfg.k_v);
        let a = match cfg.motion {
            MotionModel::ConstantAcceleration => a,
            MotionModel::ConstantVelocity => [0.0; 2],
        };
        let z = Vec6::from([det.aabb.center.x, det.aabb.center.y, v[0], v[1], a[0], a[1]]);
        // kinematics the history is too short to measure stay unobserved
        let mut r = cfg.r;
        let n = track.history.len();
        if n < cfg.k_v + 1 {
            r[2] = UNOBSERVED;
            r[3] = UNOBSERVED;
        }
        if n < 2 * cfg.k_v + 1 && cfg.motion == MotionModel::ConstantAcceleration {
            r[4] = UNOBSERVED;
            r[5] = UNOBSERVED;
        }
        track.state = kf_update(&track.state, &z, &diag(&r));

        let alpha = cfg.z_alpha;
        track.z_center = alpha * det.aabb.center.z + (1.0 - alpha) * track.z_center;
        track.dims = det.aabb.dims * alpha + track.dims * (1.0 - alpha);
        track.feature = extract_feature(&det.aabb, &det.cloud);
        track.cloud = det.cloud.clone();
        if let Some(label) = &det.label {
            track.label = Some((label.clone(), frame));
        }
        track.misses = 0;
        track.hits += 1;
        if track.hits >= cfg.birth_hits {
            track.confirmed = true;
        }
    }
}
