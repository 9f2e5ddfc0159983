//! Ground-truth scoring of tracker output: position and velocity error of
//! dynamic tracks, false-positive rate and identity switches.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::class::ObstacleClass;
use crate::error::{Error, Result};
use crate::geometry::{iou3d, Aabb3};
use crate::scenegen::GroundTruthFrame;
use crate::tracker::TrackOutput;

/// Tracker output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub timestamp: f64,
    pub tracks: Vec<TrackOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub match_iou: f64,
    /// Leading frames left out of the error statistics.
    pub skip_initial_frames: usize,
    /// Frames whose timestamps differ by more than this are misaligned.
    pub time_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            match_iou: 0.1,
            skip_initial_frames: 0,
            time_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub timestamp: f64,
    pub dynamic_tracks: usize,
    pub matched: usize,
    pub misdetections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub timestamp: f64,
    pub track_id: u64,
    pub truth_id: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pos_rmse: f64,
    pub pos_mae: f64,
    pub vel_rmse: f64,
    pub vel_mae: f64,
    pub fp_rate: f64,
    pub misdetections: usize,
    pub dynamic_detections: usize,
    pub matched: usize,
    /// Changes of the track id covering each dynamic truth object.
    pub id_switches: usize,
    pub frames: Vec<FrameStats>,
    pub assignments: Vec<Assignment>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::input(e.to_string()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Greedy one-to-one matching by descending IOU, keeping pairs at or above
/// `min_iou`. Returns (left index, right index, iou).
pub fn greedy_iou_match(left: &[Aabb3], right: &[Aabb3], min_iou: f64) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for (i, a) in left.iter().enumerate() {
        for (j, b) in right.iter().enumerate() {
            let s = iou3d(a, b);
            if s > 0.0 && s >= min_iou {
                pairs.push((i, j, s));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut lu = vec![false; left.len()];
    let mut ru = vec![false; right.len()];
    pairs
        .into_iter()
        .filter(|&(i, j, _)| {
            let free = !lu[i] && !ru[j];
            if free {
                lu[i] = true;
                ru[j] = true;
            }
            free
        })
        .collect()
}

/// Scores `outputs` against `truth`, frame by frame.
///
/// Dynamic tracks are matched to truth objects by IOU. A dynamic track that
/// lands on a static object, or on nothing, is a misdetection. Errors are
/// accumulated over dynamic tracks matched to dynamic objects.
pub fn evaluate(outputs: &[FrameOutput], truth: &[GroundTruthFrame], cfg: &EvalConfig) -> Result<EvalReport> {
    if outputs.is_empty() || truth.is_empty() {
        return Err(Error::EmptySequence);
    }
    if outputs.len() != truth.len() {
        return Err(Error::input(format!(
            "{} output frames but {} truth frames",
            outputs.len(),
            truth.len()
        )));
    }
    let mut pos = Vec::new();
    let mut vel = Vec::new();
    let mut misdetections = 0;
    let mut dynamic_detections = 0;
    let mut frames = Vec::new();
    let mut assignments = Vec::new();
    let mut last_id: BTreeMap<usize, u64> = BTreeMap::new();
    let mut id_switches = 0;

    for (k, (out, gt)) in outputs.iter().zip(truth).enumerate() {
        if (out.timestamp - gt.timestamp).abs() > cfg.time_tolerance {
            return Err(Error::input(format!(
                "frame {k}: output time {} does not match truth time {}",
                out.timestamp, gt.timestamp
            )));
        }
        let truth_boxes: Vec<Aabb3> = gt.objects.iter().map(|o| o.aabb).collect();

        let all_boxes: Vec<Aabb3> = out.tracks.iter().map(|t| t.aabb).collect();
        for (ti, gi, _) in greedy_iou_match(&all_boxes, &truth_boxes, cfg.match_iou) {
            let obj = &gt.objects[gi];
            if obj.class != ObstacleClass::Dynamic {
                continue;
            }
            let id = out.tracks[ti].id;
            if let Some(prev) = last_id.insert(obj.id, id) {
                if prev != id {
                    id_switches += 1;
                }
            }
        }

        if k < cfg.skip_initial_frames {
            continue;
        }
        let dynamic: Vec<&TrackOutput> = out.tracks.iter().filter(|t| t.class == ObstacleClass::Dynamic).collect();
        let dyn_boxes: Vec<Aabb3> = dynamic.iter().map(|t| t.aabb).collect();
        let matches = greedy_iou_match(&dyn_boxes, &truth_boxes, cfg.match_iou);
        let mut stats = FrameStats {
            timestamp: out.timestamp,
            dynamic_tracks: dynamic.len(),
            matched: 0,
            misdetections: dynamic.len() - matches.len(),
        };
        for &(ti, gi, s) in &matches {
            let (track, obj) = (dynamic[ti], &gt.objects[gi]);
            if obj.class != ObstacleClass::Dynamic {
                stats.misdetections += 1;
                continue;
            }
            stats.matched += 1;
            pos.push((track.aabb.center - obj.aabb.center).norm());
            vel.push((track.velocity[0] - obj.velocity.x).hypot(track.velocity[1] - obj.velocity.y));
            assignments.push(Assignment {
                timestamp: out.timestamp,
                track_id: track.id,
                truth_id: obj.id,
                iou: s,
            });
        }
        misdetections += stats.misdetections;
        dynamic_detections += stats.dynamic_tracks;
        frames.push(stats);
    }

    let rmse = |e: &[f64]| if e.is_empty() { 0.0 } else { (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt() };
    let mae = |e: &[f64]| if e.is_empty() { 0.0 } else { e.iter().sum::<f64>() / e.len() as f64 };
    Ok(EvalReport {
        pos_rmse: rmse(&pos),
        pos_mae: mae(&pos),
        vel_rmse: rmse(&vel),
        vel_mae: mae(&vel),
        fp_rate: if dynamic_detections == 0 {
            0.0
        } else {
            misdetections as f64 / dynamic_detections as f64
        },
        misdetections,
        dynamic_detections,
        matched: pos.len(),
        id_switches,
        frames,
        assignments,
    })
}

/// Reports of several runs over the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<(String, EvalReport)>,
}

impl AblationReport {
    pub fn get(&self, name: &str) -> Option<&EvalReport> {
        self.variants.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn summary_table(&self) -> String {
        let mut s = format!(
            "{:<20} {:>9} {:>9} {:>9} {:>8} {:>6}\n",
            "variant", "pos_rmse", "vel_rmse", "fp_rate", "matched", "idsw"
        );
        for (name, r) in &self.variants {
            s.push_str(&format!(
                "{:<20} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>6}\n",
                name, r.pos_rmse, r.vel_rmse, r.fp_rate, r.matched, r.id_switches
            ));
        }
        s
    }
}
