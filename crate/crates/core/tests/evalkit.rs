//! AP against a brute-force reference and the protocol's invariants.

mod common;

use std::collections::BTreeMap;

use ebm3d::evalkit::{average_precision, evaluate, match_greedy, Difficulty, EvalMode, GroundTruth, MatchLabel};
use ebm3d::{iou_3d, Box3D, Det};
use proptest::prelude::*;

/// Textbook interpolated AP: for each recall position, the best precision
/// over every prefix of the ranking whose recall reaches it.
fn reference_ap(scores: &[f64], labels: &[MatchLabel], num_gt: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let ranked: Vec<MatchLabel> = order.iter().map(|&i| labels[i]).filter(|l| *l != MatchLabel::Ignored).collect();
    let mut total = 0.0;
    for k in 1..=40 {
        let r = k as f64 / 40.0;
        let mut best = 0.0_f64;
        for n in 1..=ranked.len() {
            let tp = ranked[..n].iter().filter(|l| **l == MatchLabel::Tp).count();
            if tp as f64 / num_gt as f64 >= r - 1e-12 {
                best = best.max(tp as f64 / n as f64);
            }
        }
        total += best;
    }
    total / 40.0
}

fn label_strategy() -> impl Strategy<Value = MatchLabel> {
    prop_oneof![4 => Just(MatchLabel::Tp), 4 => Just(MatchLabel::Fp), 1 => Just(MatchLabel::Ignored)]
}

/// Distinct scores in (0, 1) with labels, and a GT count covering every TP.
fn ranking() -> impl Strategy<Value = (Vec<f64>, Vec<MatchLabel>, usize)> {
    prop::collection::vec((1u32..1_000_000, label_strategy()), 0..60).prop_flat_map(|v| {
        let mut seen = std::collections::BTreeSet::new();
        let v: Vec<_> = v.into_iter().filter(|(s, _)| seen.insert(*s)).collect();
        let tps = v.iter().filter(|(_, l)| *l == MatchLabel::Tp).count();
        let scores: Vec<f64> = v.iter().map(|(s, _)| *s as f64 / 1_000_001.0).collect();
        let labels: Vec<MatchLabel> = v.iter().map(|(_, l)| *l).collect();
        (Just(scores), Just(labels), tps.max(1)..tps + 10)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_brute_force((scores, labels, num_gt) in ranking()) {
        let ap = average_precision(&scores, &labels, num_gt).unwrap();
        prop_assert!((ap.ap - reference_ap(&scores, &labels, num_gt)).abs() < 1e-12);
        let recalls: Vec<f64> = ap.pr_curve.iter().map(|p| p.0).collect();
        prop_assert_eq!(recalls, (1..=40).map(|k| k as f64 / 40.0).collect::<Vec<_>>());
        prop_assert!(ap.pr_curve.windows(2).all(|w| w[1].1 <= w[0].1));
        prop_assert!(ap.pr_curve.iter().all(|p| (0.0..=1.0).contains(&p.1)));
    }

    #[test]
    fn monotone_score_transform_keeps_ap((scores, labels, num_gt) in ranking()) {
        let squashed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        let a = average_precision(&scores, &labels, num_gt).unwrap().ap;
        prop_assert_eq!(a, average_precision(&squashed, &labels, num_gt).unwrap().ap);
    }

    #[test]
    fn trailing_false_positive_never_helps((mut scores, mut labels, num_gt) in ranking()) {
        let before = average_precision(&scores, &labels, num_gt).unwrap().ap;
        let lowest = scores.iter().copied().fold(1.0, f64::min);
        scores.push(lowest / 2.0);
        labels.push(MatchLabel::Fp);
        prop_assert!(average_precision(&scores, &labels, num_gt).unwrap().ap <= before);
    }
}

fn scene_strategy() -> impl Strategy<Value = (Vec<Det>, Vec<GroundTruth>)> {
    let gt = (-20.0..20.0f64, -20.0..20.0f64, 1.4..1.8f64, 3.5..4.5f64, -3.0..3.0f64)
        .prop_map(|(x, y, w, l, phi)| Box3D::new(x, y, 0.8, 1.6, w, l, phi).unwrap());
    prop::collection::vec(gt, 1..6).prop_flat_map(|gts| {
        let n = gts.len();
        let jitter = prop::collection::vec((0..n, -0.6..0.6f64, -0.6..0.6f64, -0.3..0.3f64, 1u32..1_000_000), 0..10);
        (Just(gts), jitter).prop_map(|(gts, j)| {
            let dets = j
                .into_iter()
                .map(|(g, dx, dy, dphi, s)| {
                    let b = gts[g];
                    Det::new(Box3D { cx: b.cx + dx, cy: b.cy + dy, phi: b.phi + dphi, ..b }, s as f64 / 1_000_001.0).unwrap()
                })
                .collect();
            (dets, gts.into_iter().map(GroundTruth::new).collect())
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn duplicating_scenes_keeps_ap(scene in scene_strategy()) {
        let one_d = BTreeMap::from([(0, scene.0.clone())]);
        let one_g = BTreeMap::from([(0, scene.1.clone())]);
        let two_d = BTreeMap::from([(0, scene.0.clone()), (1, scene.0.clone())]);
        let two_g = BTreeMap::from([(0, scene.1.clone()), (1, scene.1)]);
        let modes = [EvalMode::ThreeD, EvalMode::Bev];
        let t = [0.5, 0.7];
        let a = evaluate(&one_d, &one_g, &modes, &t, &[Difficulty::All]).unwrap();
        let b = evaluate(&two_d, &two_g, &modes, &t, &[Difficulty::All]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.ap - y.ap).abs() < 1e-12, "{} vs {}", x.ap, y.ap);
        }
    }

    #[test]
    fn each_gt_matched_at_most_once(scene in scene_strategy(), thr in 0.1..0.9f64) {
        let boxes: Vec<Box3D> = scene.1.iter().map(|g| g.bbox).collect();
        let labels = match_greedy(&scene.0, &boxes, &vec![false; boxes.len()], iou_3d, thr);
        let tps = labels.iter().filter(|l| **l == MatchLabel::Tp).count();
        prop_assert!(tps <= boxes.len());
    }
}

#[test]
fn both_good_and_great_overlaps_count_once() {
    let gt = Box3D::new(0.0, 0.0, 0.8, 1.6, 1.7, 4.0, 0.0).unwrap();
    // IoU 0.99 and about 0.71 through length offsets
    let near = Det::new(Box3D { cx: 0.02, ..gt }, 0.9).unwrap();
    let far = Det::new(Box3D { cx: 4.0 * (1.0 - 0.71) / (1.0 + 0.71), ..gt }, 0.8).unwrap();
    assert!((iou_3d(&far.bbox, &gt) - 0.71).abs() < 1e-9);
    for (d, expect) in [(near, MatchLabel::Tp), (far, MatchLabel::Tp)] {
        assert_eq!(match_greedy(&[d], &[gt], &[false], iou_3d, 0.7), vec![expect]);
    }
    assert_eq!(match_greedy(&[near, far], &[gt], &[false], iou_3d, 0.7), vec![MatchLabel::Tp, MatchLabel::Fp]);
}
