//! Per-frame orchestration: detectors on one immutable frame, ensemble,
//! tracking and identification, plus sequence runs and ablations.

mod sequence;
mod timing;

pub use sequence::{
    read_depth_png, read_detections, read_tracks_csv, read_truth, write_depth_png, write_detections, write_tracks_csv,
    SequenceMeta, SequenceReader, SequenceWriter,
};
pub use timing::{Stage, StageStats, StageTimer, TimingReport};

use std::collections::VecDeque;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dbscan::{detect_dbscan, DbscanConfig};
use crate::detection::Detection;
use crate::ensemble::{fold_madlift, fuse_dense, EnsembleConfig};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, Pose};
use crate::identify::{identify_track, FrameLookup, IdentifyConfig, PastView};
use crate::madlift::{detect_madlift, Detection2D, MadConfig};
use crate::metrics::{evaluate, AblationReport, EvalConfig, EvalReport, FrameOutput};
use crate::scenegen::GroundTruthFrame;
use crate::tracker::{Tracker, TrackerConfig};
use crate::udepth::{detect_udepth_detections, UDepthConfig};

/// One RGB-D frame as the pipeline sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub depth: DepthImage,
    pub pose: Pose,
    /// 2D detections for this frame; `None` when no 2D detector ran.
    pub detections2d: Option<Vec<Detection2D>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub enable_udepth: bool,
    pub enable_dbscan: bool,
    pub enable_madlift: bool,
    pub enable_ensemble: bool,
    /// Run the detectors of a frame concurrently.
    pub parallel_detectors: bool,
    pub udepth: UDepthConfig,
    pub dbscan: DbscanConfig,
    pub madlift: MadConfig,
    pub ensemble: EnsembleConfig,
    pub tracker: TrackerConfig,
    pub identify: IdentifyConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            enable_udepth: true,
            enable_dbscan: true,
            enable_madlift: true,
            enable_ensemble: true,
            parallel_detectors: false,
            udepth: UDepthConfig::default(),
            dbscan: DbscanConfig::default(),
            madlift: MadConfig::default(),
            ensemble: EnsembleConfig::default(),
            tracker: TrackerConfig::default(),
            identify: IdentifyConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let enabled = [self.enable_udepth, self.enable_dbscan, self.enable_madlift]
            .iter()
            .filter(|&&e| e)
            .count();
        if enabled == 0 {
            return Err(Error::config("at least one detector must be enabled"));
        }
        if self.enable_ensemble && enabled < 2 {
            return Err(Error::config("the ensemble needs at least two enabled detectors"));
        }
        if !(self.ensemble.iou_threshold > 0.0 && self.ensemble.iou_threshold < 1.0) {
            return Err(Error::config("ensemble iou_threshold must lie in (0, 1)"));
        }
        if !(self.madlift.n > 0.0) {
            return Err(Error::config("madlift n must be positive"));
        }
        if self.enable_udepth && !(self.udepth.bin_size > 0.0 && self.udepth.max_range > 0.0) {
            return Err(Error::config("udepth bin_size and max_range must be positive"));
        }
        self.dbscan.validate()?;
        self.tracker.validate()?;
        self.identify.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Only the U-depth detector; no ensemble or 2D input.
    pub fn udepth_only(&self) -> Self {
        PipelineConfig {
            enable_udepth: true,
            enable_dbscan: false,
            enable_madlift: false,
            enable_ensemble: false,
            ..self.clone()
        }
    }

    /// Center-distance association with a constant-velocity filter.
    pub fn center_distance_baseline(&self) -> Self {
        let mut cfg = self.clone();
        cfg.tracker.association = crate::tracker::AssociationMethod::CenterDistance;
        cfg.tracker.motion = crate::tracker::MotionModel::ConstantVelocity;
        cfg
    }
}

struct PastFrame {
    frame: u64,
    depth: DepthImage,
    pose: Pose,
}

struct PastFrames<'a> {
    frames: &'a VecDeque<PastFrame>,
    intr: &'a CameraIntrinsics,
}

impl FrameLookup for PastFrames<'_> {
    fn view(&self, frame: u64) -> Option<PastView<'_>> {
        self.frames.iter().find(|f| f.frame == frame).map(|f| PastView {
            depth: &f.depth,
            intr: self.intr,
            pose: &f.pose,
        })
    }
}

/// Detector outputs for one frame.
#[derive(Debug, Clone, Default)]
pub struct FrameDetections {
    pub udepth: Option<Vec<Detection>>,
    pub dbscan: Option<Vec<Detection>>,
    pub madlift: Option<Vec<Detection>>,
}

/// Stateful per-sequence processor.
pub struct Pipeline {
    cfg: PipelineConfig,
    intr: CameraIntrinsics,
    tracker: Tracker,
    past: VecDeque<PastFrame>,
    timer: StageTimer,
    last_time: Option<f64>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, intr: CameraIntrinsics) -> Result<Self> {
        cfg.validate()?;
        intr.validate()?;
        let tracker = Tracker::new(cfg.tracker.clone())?;
        Ok(Pipeline {
            cfg,
            intr,
            tracker,
            past: VecDeque::new(),
            timer: StageTimer::default(),
            last_time: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn timing(&self) -> TimingReport {
        self.timer.report()
    }

    /// Runs the enabled detectors on one frame.
    pub fn detect(&mut self, frame: &Frame) -> FrameDetections {
        let (cfg, intr) = (&self.cfg, &self.intr);
        let (depth, pose) = (&frame.depth, &frame.pose);
        let timed = |f: &dyn Fn() -> Vec<Detection>| {
            let start = Instant::now();
            let out = f();
            (out, start.elapsed())
        };
        let ud = || cfg.enable_udepth.then(|| timed(&|| detect_udepth_detections(depth, intr, pose, &cfg.udepth)));
        let db = || cfg.enable_dbscan.then(|| timed(&|| detect_dbscan(depth, intr, pose, &cfg.dbscan)));
        let mad = || {
            let dets = frame.detections2d.as_ref().filter(|_| cfg.enable_madlift)?;
            Some(timed(&|| detect_madlift(dets, depth, intr, pose, &cfg.madlift)))
        };
        let (u, (d, m)) = if cfg.parallel_detectors {
            rayon::join(ud, || rayon::join(db, mad))
        } else {
            (ud(), (db(), mad()))
        };
        let mut record = |stage, r: Option<(Vec<Detection>, Duration)>| {
            r.map(|(dets, dt)| {
                self.timer.record(stage, dt);
                dets
            })
        };
        FrameDetections {
            udepth: record(Stage::UDepth, u),
            dbscan: record(Stage::Dbscan, d),
            madlift: record(Stage::MadLift, m),
        }
    }

    /// Combines the detector outputs per the configured cascade.
    pub fn combine(&self, dets: FrameDetections) -> Vec<Detection> {
        let FrameDetections { udepth, dbscan, madlift } = dets;
        if !self.cfg.enable_ensemble {
            return [udepth, dbscan, madlift].into_iter().flatten().flatten().collect();
        }
        let base = match (udepth, dbscan) {
            (Some(u), Some(d)) => fuse_dense(&u, &d, &self.cfg.ensemble),
            (Some(one), None) | (None, Some(one)) => one,
            (None, None) => Vec::new(),
        };
        match madlift {
            Some(mad) => fold_madlift(base, &mad, &self.cfg.ensemble, &self.cfg.madlift),
            None => base,
        }
    }

    /// Processes one frame and returns the confirmed tracks.
    pub fn process(&mut self, frame: Frame) -> Result<FrameOutput> {
        frame.depth.check_matches(&self.intr)?;
        if self.last_time.is_some_and(|t| frame.timestamp <= t) {
            return Err(Error::input(format!("frame at t = {} is out of order", frame.timestamp)));
        }
        let total = Instant::now();
        let before = [Stage::UDepth, Stage::Dbscan].map(|st| self.timer.samples(st).len());
        let dets = self.detect(&frame);
        let mut dense_ms = 0.0;
        for (st, n) in [Stage::UDepth, Stage::Dbscan].into_iter().zip(before) {
            dense_ms += self.timer.samples(st)[n..].iter().sum::<f64>();
        }

        let start = Instant::now();
        let combined = self.combine(dets);
        let ensemble = start.elapsed();
        self.timer.record(Stage::Ensemble, ensemble);

        let start = Instant::now();
        self.tracker.step(&combined, frame.timestamp)?;
        let tracking = start.elapsed();
        self.timer.record(Stage::Tracking, tracking);
        self.last_time = Some(frame.timestamp);

        let index = self.tracker.frame_index();
        let keep = self.cfg.identify.k_back + 1;
        self.past.push_back(PastFrame {
            frame: index,
            depth: frame.depth,
            pose: frame.pose,
        });
        while self.past.len() > keep {
            self.past.pop_front();
        }

        let start = Instant::now();
        let lookup = PastFrames {
            frames: &self.past,
            intr: &self.intr,
        };
        for track in self.tracker.tracks_mut().iter_mut().filter(|t| t.confirmed && t.is_matched()) {
            identify_track(track, index, &lookup, &self.cfg.identify, &self.cfg.madlift);
        }
        let identification = start.elapsed();
        self.timer.record(Stage::Identification, identification);

        self.timer.record(Stage::Total, total.elapsed());
        // Summed compute of every stage except the 2D lift.
        self.timer.record(
            Stage::NonLearningTotal,
            Duration::from_secs_f64(dense_ms / 1e3) + ensemble + tracking + identification,
        );

        Ok(FrameOutput {
            timestamp: frame.timestamp,
            tracks: self.tracker.confirmed().map(|t| t.output()).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outputs: Vec<FrameOutput>,
    pub timing: TimingReport,
    /// Timestamps of frames skipped as malformed.
    pub skipped: Vec<f64>,
}

/// Runs the pipeline over in-memory frames; frames the pipeline rejects are
/// skipped with a warning.
pub fn run_frames<I>(frames: I, intr: &CameraIntrinsics, cfg: &PipelineConfig) -> Result<RunResult>
where
    I: IntoIterator<Item = Frame>,
{
    let mut pipe = Pipeline::new(cfg.clone(), *intr)?;
    let mut outputs = Vec::new();
    let mut skipped = Vec::new();
    for frame in frames {
        let t = frame.timestamp;
        match pipe.process(frame) {
            Ok(out) => outputs.push(out),
            Err(e) => {
                log::warn!("skipping frame at t = {t}: {e}");
                skipped.push(t);
            }
        }
    }
    Ok(RunResult {
        outputs,
        timing: pipe.timing(),
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub run: RunResult,
    pub report: Option<EvalReport>,
}

/// Truth frames whose timestamps appear in `outputs`, in order.
pub fn align_truth(outputs: &[FrameOutput], truth: &[GroundTruthFrame], tolerance: f64) -> Vec<GroundTruthFrame> {
    outputs
        .iter()
        .filter_map(|o| truth.iter().find(|g| (g.timestamp - o.timestamp).abs() <= tolerance).cloned())
        .collect()
}

pub fn run_sequence(dir: &Path, cfg: &PipelineConfig) -> Result<SequenceRun> {
    cfg.validate()?;
    let reader = SequenceReader::open(dir)?;
    if reader.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut pre_skipped = Vec::new();
    let frames = (0..reader.len()).filter_map(|i| match reader.frame(i) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("skipping frame {i}: {e}");
            pre_skipped.push(reader.timestamp(i));
            None
        }
    });
    let mut run = run_frames(frames, reader.intrinsics(), cfg)?;
    run.skipped.extend(pre_skipped);
    let report = match reader.truth()? {
        Some(truth) => {
            let aligned = align_truth(&run.outputs, &truth, cfg.eval.time_tolerance);
            Some(evaluate(&run.outputs, &aligned, &cfg.eval)?)
        }
        None => None,
    };
    Ok(SequenceRun { run, report })
}

/// Named configurations compared by an ablation: the full system, U-depth
/// only, and the center-distance constant-velocity baseline.
pub fn ablation_variants(cfg: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
    vec![
        ("full".to_string(), cfg.clone()),
        ("udepth_only".to_string(), cfg.udepth_only()),
        ("center_distance_cv".to_string(), cfg.center_distance_baseline()),
    ]
}

/// Runs every variant over frames produced by `frames` and scores each
/// against `truth`.
pub fn run_ablation<F, I>(
    frames: F,
    intr: &CameraIntrinsics,
    truth: &[GroundTruthFrame],
    variants: &[(String, PipelineConfig)],
) -> Result<AblationReport>
where
    F: Fn() -> I + Sync,
    I: IntoIterator<Item = Frame>,
{
    let reports: Result<Vec<(String, EvalReport)>> = variants
        .par_iter()
        .map(|(name, cfg)| {
            let run = run_frames(frames(), intr, cfg)?;
            let aligned = align_truth(&run.outputs, truth, cfg.eval.time_tolerance);
            Ok((name.clone(), evaluate(&run.outputs, &aligned, &cfg.eval)?))
        })
        .collect();
    Ok(AblationReport { variants: reports? })
}

/// [`run_ablation`] over a sequence directory.
pub fn run_ablation_sequence(dir: &Path, cfg: &PipelineConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let reader = SequenceReader::open(dir)?;
    let truth = reader
        .truth()?
        .ok_or_else(|| Error::input("ablation needs a sequence with ground truth"))?;
    let frames = || (0..reader.len()).filter_map(|i| reader.frame(i).ok());
    run_ablation(frames, reader.intrinsics(), &truth, &ablation_variants(cfg))
}
