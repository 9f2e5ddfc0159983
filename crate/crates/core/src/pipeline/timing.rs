use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    UDepth,
    Dbscan,
    MadLift,
    Ensemble,
    Tracking,
    Identification,
    /// Everything except the MAD-lift detector.
    NonLearningTotal,
    Total,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::UDepth => "udepth",
            Stage::Dbscan => "dbscan",
            Stage::MadLift => "madlift",
            Stage::Ensemble => "ensemble",
            Stage::Tracking => "tracking",
            Stage::Identification => "identification",
            Stage::NonLearningTotal => "non_learning_total",
            Stage::Total => "total",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageTimer {
    samples: BTreeMap<Stage, Vec<f64>>,
}

impl StageTimer {
    pub fn record(&mut self, stage: Stage, elapsed: Duration) {
        self.samples
            .entry(stage)
            .or_default()
            .push(elapsed.as_secs_f64() * 1e3);
    }

    pub fn samples(&self, stage: Stage) -> &[f64] {
        self.samples.get(&stage).map_or(&[], Vec::as_slice)
    }

    pub fn report(&self) -> TimingReport {
        let stages = self
            .samples
            .iter()
            .map(|(&stage, ms)| {
                let mut sorted = ms.clone();
                sorted.sort_by(f64::total_cmp);
                let n = sorted.len();
                let median = if n % 2 == 1 {
                    sorted[n / 2]
                } else {
                    (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
                };
                StageStats {
                    stage,
                    frames: n,
                    median_ms: median,
                    mean_ms: sorted.iter().sum::<f64>() / n as f64,
                    p95_ms: sorted[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1],
                    max_ms: sorted[n - 1],
                }
            })
            .collect();
        TimingReport { stages }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: Stage,
    pub frames: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

/// Per-stage wall-clock statistics in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stages: Vec<StageStats>,
}

impl TimingReport {
    pub fn get(&self, stage: Stage) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<20} {:>7} {:>10} {:>10} {:>10} {:>10}\n",
            "stage", "frames", "median_ms", "mean_ms", "p95_ms", "max_ms"
        );
        for st in &self.stages {
            s.push_str(&format!(
                "{:<20} {:>7} {:>10.3} {:>10.3} {:>10.3} {:>10.3}\n",
                st.stage.as_str(),
                st.frames,
                st.median_ms,
                st.mean_ms,
                st.p95_ms,
                st.max_ms
            ));
        }
        s
    }
}
