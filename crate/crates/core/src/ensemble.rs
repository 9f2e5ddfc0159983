//! Mutual-best IOU fusion of two detectors' boxes, and the cascade that
//! combines U-depth, DBSCAN and optional MAD-lift detections.

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, DetectorKind};
use crate::geometry::{iou3d, Aabb3};
use crate::madlift::MadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub iou_threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { iou_threshold: 0.25 }
    }
}

/// Candidate with the highest IOU against `b`, and that IOU. The first
/// candidate wins ties.
pub fn find_best_iou_match(b: &Aabb3, candidates: &[Aabb3]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = iou3d(b, c);
        if best.is_none_or(|(bs, _)| s > bs) {
            best = Some((s, i));
        }
    }
    best
}

pub fn fuse_boxes(a: &Aabb3, b: &Aabb3) -> Aabb3 {
    Aabb3 {
        center: (a.center + b.center) / 2.0,
        dims: a.dims.sup(&b.dims),
    }
}

/// Index pairs `(i, j)` where `first[i]` and `second[j]` are each other's best
/// match and both IOUs exceed `threshold`.
pub fn mutual_matches(first: &[Aabb3], second: &[Aabb3], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, a) in first.iter().enumerate() {
        let Some((s1, j)) = find_best_iou_match(a, second) else {
            break;
        };
        let Some((s2, k)) = find_best_iou_match(&second[j], first) else {
            continue;
        };
        if s1 > threshold && s2 > threshold && k == i {
            out.push((i, j));
        }
    }
    out
}

pub fn ensemble_pair(first: &[Aabb3], second: &[Aabb3], cfg: &EnsembleConfig) -> Vec<Aabb3> {
    mutual_matches(first, second, cfg.iou_threshold)
        .into_iter()
        .map(|(i, j)| fuse_boxes(&first[i], &second[j]))
        .collect()
}

fn boxes(dets: &[Detection]) -> Vec<Aabb3> {
    dets.iter().map(|d| d.aabb).collect()
}

/// First cascade stage: mutual matches of U-depth and DBSCAN boxes. Fused
/// boxes keep the DBSCAN points.
pub fn fuse_dense(udepth: &[Detection], dbscan: &[Detection], cfg: &EnsembleConfig) -> Vec<Detection> {
    mutual_matches(&boxes(udepth), &boxes(dbscan), cfg.iou_threshold)
        .into_iter()
        .map(|(i, j)| Detection {
            aabb: fuse_boxes(&udepth[i].aabb, &dbscan[j].aabb),
            cloud: dbscan[j].cloud.clone(),
            label: None,
            source: DetectorKind::Ensemble,
        })
        .collect()
}

/// Second cascade stage. A MAD-lift box matching a base box fuses into it
/// and lends its label; unmatched MAD-lift boxes of a dynamic class are
/// appended as-is. Base boxes are kept whether or not anything matched them.
pub fn fold_madlift(mut base: Vec<Detection>, mad: &[Detection], cfg: &EnsembleConfig, mad_cfg: &MadConfig) -> Vec<Detection> {
    if mad.is_empty() {
        return base;
    }
    let pairs = mutual_matches(&boxes(&base), &boxes(mad), cfg.iou_threshold);
    let mut mad_used = vec![false; mad.len()];
    for &(i, j) in &pairs {
        mad_used[j] = true;
        base[i].aabb = fuse_boxes(&base[i].aabb, &mad[j].aabb);
        base[i].label = mad[j].label.clone();
    }
    for (j, m) in mad.iter().enumerate() {
        if !mad_used[j] && m.label.as_deref().is_some_and(|l| mad_cfg.is_dynamic(l)) {
            base.push(m.clone());
        }
    }
    base
}

/// Full cascade: U-depth with DBSCAN, then MAD-lift boxes when present.
pub fn ensemble_detections(
    udepth: &[Detection],
    dbscan: &[Detection],
    madlift: Option<&[Detection]>,
    cfg: &EnsembleConfig,
    mad_cfg: &MadConfig,
) -> Vec<Detection> {
    let fused = fuse_dense(udepth, dbscan, cfg);
    match madlift {
        Some(mad) => fold_madlift(fused, mad, cfg, mad_cfg),
        None => fused,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PointCloud, Vec3};
    use proptest::prelude::*;

    fn bx(c: [f64; 3], d: [f64; 3]) -> Aabb3 {
        Aabb3::new(Vec3::from(c), Vec3::from(d)).unwrap()
    }

    fn det(b: Aabb3, source: DetectorKind, label: Option<&str>) -> Detection {
        Detection {
            aabb: b,
            cloud: PointCloud::new(vec![b.center]),
            label: label.map(String::from),
            source,
        }
    }

    #[test]
    fn best_match_examples() {
        let b = bx([0.0; 3], [1.0; 3]);
        assert!(find_best_iou_match(&b, &[]).is_none());
        assert_eq!(find_best_iou_match(&b, &[bx([5.0, 0.0, 0.0], [1.0; 3]), b]), Some((1.0, 1)));
        // Shift by 0.5 gives 1/3; shift by 9/11 gives 0.1.
        let third = bx([0.5, 0.0, 0.0], [1.0; 3]);
        let tenth = bx([9.0 / 11.0, 0.0, 0.0], [1.0; 3]);
        let (s, i) = find_best_iou_match(&b, &[tenth, third]).unwrap();
        assert_eq!(i, 1);
        assert!((s - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fuse_examples() {
        let a = bx([0.0; 3], [1.0; 3]);
        let b = bx([0.2, 0.0, 0.0], [0.8, 1.2, 1.0]);
        assert_eq!(fuse_boxes(&a, &a), a);
        let f = fuse_boxes(&a, &b);
        assert!((f.center - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(f.dims, Vec3::new(1.0, 1.2, 1.0));
        assert_eq!(fuse_boxes(&b, &a), f);
    }

    #[test]
    fn pair_examples() {
        let cfg = EnsembleConfig { iou_threshold: 0.5 };
        let a = bx([0.0; 3], [1.0; 3]);
        assert!(ensemble_pair(&[], &[a], &cfg).is_empty());
        assert_eq!(ensemble_pair(&[a], &[a], &cfg), vec![a]);

        let a2 = bx([0.0; 3], [1.25, 1.0, 1.0]); // IOU 0.8 with a
        let c = bx([3.0, 0.0, 0.0], [1.0; 3]);
        let d = bx([-3.0, 0.0, 0.0], [1.0; 3]);
        assert!((iou3d(&a, &a2) - 0.8).abs() < 1e-12);
        assert_eq!(ensemble_pair(&[a, c], &[a2, d], &cfg), vec![fuse_boxes(&a, &a2)]);
    }

    #[test]
    fn cascade_keeps_dbscan_cloud_and_mad_label() {
        let b = bx([2.0, 0.0, 1.0], [0.5, 0.5, 1.7]);
        let ud = [det(b, DetectorKind::UDepth, None)];
        let mut db = [det(b, DetectorKind::Dbscan, None)];
        db[0].cloud = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]);
        let far = bx([6.0, 0.0, 1.0], [0.5, 0.5, 1.7]);
        let mad = [
            det(b, DetectorKind::MadLift, Some("person")),
            det(far, DetectorKind::MadLift, Some("person")),
            det(bx([0.0, 5.0, 1.0], [1.0; 3]), DetectorKind::MadLift, Some("chair")),
        ];
        let out = ensemble_detections(&ud, &db, Some(&mad), &EnsembleConfig::default(), &MadConfig::default());
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].cloud, db[0].cloud);
        assert_eq!(out[0].label.as_deref(), Some("person"));
        assert_eq!(out[1].aabb, far);
    }

    fn arb_boxes() -> impl Strategy<Value = Vec<Aabb3>> {
        prop::collection::vec(
            ((-3.0f64..3.0, -3.0f64..3.0, -1.0f64..1.0), (0.2f64..2.0, 0.2f64..2.0, 0.2f64..2.0))
                .prop_map(|(c, d)| bx([c.0, c.1, c.2], [d.0, d.1, d.2])),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn matching_is_one_to_one(a in arb_boxes(), b in arb_boxes(), thr in 0.01f64..0.9) {
            let pairs = mutual_matches(&a, &b, thr);
            prop_assert!(pairs.len() <= a.len().min(b.len()));
            let mut left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let mut right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            left.dedup();
            right.sort_unstable();
            right.dedup();
            prop_assert_eq!(left.len(), pairs.len());
            prop_assert_eq!(right.len(), pairs.len());
        }

        #[test]
        fn raising_threshold_never_adds_output(a in arb_boxes(), b in arb_boxes(), t1 in 0.01f64..0.9, dt in 0.0f64..0.5) {
            let lo = ensemble_pair(&a, &b, &EnsembleConfig { iou_threshold: t1 });
            let hi = ensemble_pair(&a, &b, &EnsembleConfig { iou_threshold: t1 + dt });
            prop_assert!(hi.len() <= lo.len());
        }

        #[test]
        fn box_unique_to_one_list_is_dropped(a in arb_boxes()) {
            let lonely = bx([50.0, 50.0, 50.0], [1.0; 3]);
            let mut first = a.clone();
            first.push(lonely);
            let out = ensemble_pair(&first, &a, &EnsembleConfig::default());
            prop_assert!(out.iter().all(|o| iou3d(o, &lonely) == 0.0));
        }
    }
}
