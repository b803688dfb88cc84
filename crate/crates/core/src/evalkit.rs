//! KITTI-style detection evaluation: greedy matching, interpolated
//! precision at 40 recall positions, 3D and BEV IoU.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, iou_3d, Box3};
use crate::refine::Detection;

/// Number of recall positions.
pub const RECALL_POSITIONS: usize = 40;

/// Thresholds reported by default.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.7, 0.75, 0.8, 0.85, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EvalMode {
    ThreeD,
    Bev,
}

impl EvalMode {
    pub fn iou(self, a: &Box3<f64>, b: &Box3<f64>) -> f64 {
        match self {
            EvalMode::ThreeD => iou_3d(a, b),
            EvalMode::Bev => bev_iou(&a.to_bev(), &b.to_bev()),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::ThreeD => "3d",
            EvalMode::Bev => "bev",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3d" => Ok(EvalMode::ThreeD),
            "bev" => Ok(EvalMode::Bev),
            _ => Err(Error::Config(format!("unknown eval mode {s:?} (expected 3d or bev)"))),
        }
    }
}

/// KITTI difficulty levels; `All` applies no gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    All,
}

impl Difficulty {
    /// `(min 2D height px, max occlusion, max truncation)`.
    pub fn gate(self) -> Option<(f64, u8, f64)> {
        match self {
            Difficulty::Easy => Some((40.0, 0, 0.15)),
            Difficulty::Moderate => Some((25.0, 1, 0.30)),
            Difficulty::Hard => Some((25.0, 2, 0.50)),
            Difficulty::All => None,
        }
    }

    pub fn admits(self, meta: Option<&GtMeta>) -> bool {
        match (self.gate(), meta) {
            (Some((h, occ, trunc)), Some(m)) => m.height_px >= h && m.occlusion <= occ && m.truncation <= trunc,
            _ => true,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::All => "all",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "moderate" => Ok(Difficulty::Moderate),
            "hard" => Ok(Difficulty::Hard),
            "all" => Ok(Difficulty::All),
            _ => Err(Error::Config(format!("unknown difficulty {s:?}"))),
        }
    }
}

/// Image-space metadata used by the difficulty gates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtMeta {
    pub height_px: f64,
    pub occlusion: u8,
    pub truncation: f64,
}

impl GtMeta {
    pub fn new(height_px: f64, occlusion: u8, truncation: f64) -> Result<Self> {
        if occlusion > 3 {
            return Err(Error::Input(format!("occlusion must be 0..=3, got {occlusion}")));
        }
        if !(0.0..=1.0).contains(&truncation) {
            return Err(Error::Input(format!("truncation must be in [0, 1], got {truncation}")));
        }
        Ok(Self { height_px, occlusion, truncation })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: Box3<f64>,
    pub meta: Option<GtMeta>,
}

impl GroundTruth {
    pub fn new(bbox: Box3<f64>) -> Self {
        Self { bbox, meta: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    Tp,
    Fp,
    /// Matched a ground truth excluded by the difficulty gate; counts as neither.
    Ignored,
}

/// Greedy matching. Labels are returned in input order.
///
/// Detections are visited by descending score (ties by input order); each
/// takes the unmatched ground truth with the highest IoU. Reaching the
/// threshold makes it a TP (or `Ignored` if that ground truth is ignored) and
/// consumes the ground truth; otherwise it is an FP.
pub fn match_greedy<F>(dets: &[Detection<f64>], gts: &[Box3<f64>], ignored: &[bool], iou: F, threshold: f64) -> Vec<MatchLabel>
where
    F: Fn(&Box3<f64>, &Box3<f64>) -> f64,
{
    assert_eq!(gts.len(), ignored.len(), "one ignore flag per ground truth");
    let mut used = vec![false; gts.len()];
    let mut labels = vec![MatchLabel::Fp; dets.len()];
    for d in score_order(dets.iter().map(|d| d.score)) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= threshold {
                used[g] = true;
                labels[d] = if ignored[g] { MatchLabel::Ignored } else { MatchLabel::Tp };
            }
        }
    }
    labels
}

/// Indices sorted by descending score, stable for ties.
fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let s: Vec<f64> = scores.collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// `(k/40, interpolated precision)` for `k = 1..=40`.
    pub pr_curve: Vec<(f64, f64)>,
    pub threshold: f64,
    pub mode: EvalMode,
    pub difficulty: Difficulty,
}

/// AP over labelled detections; `Ignored` entries are dropped.
///
/// The mode, threshold and difficulty fields of the result are placeholders
/// (`3d`, `0`, `all`) for callers to fill in.
pub fn average_precision(scores: &[f64], labels: &[MatchLabel], num_gt: usize) -> Result<ApResult> {
    if num_gt == 0 {
        return Err(Error::UndefinedMetric("AP needs at least one ground truth".into()));
    }
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let mut points: Vec<(usize, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in score_order(scores.iter().copied()) {
        match labels[i] {
            MatchLabel::Tp => tp += 1,
            MatchLabel::Fp => fp += 1,
            MatchLabel::Ignored => continue,
        }
        points.push((tp, tp as f64 / (tp + fp) as f64));
    }
    // suffix maximum of precision, so the lookup below is monotone
    let mut best = vec![0.0; points.len() + 1];
    for p in (0..points.len()).rev() {
        best[p] = f64::max(best[p + 1], points[p].1);
    }
    let mut pr_curve = Vec::with_capacity(RECALL_POSITIONS);
    let mut cursor = 0;
    for k in 1..=RECALL_POSITIONS {
        // first operating point with recall tp/num_gt >= k/40, exactly in integers
        while cursor < points.len() && points[cursor].0 * RECALL_POSITIONS < k * num_gt {
            cursor += 1;
        }
        pr_curve.push((k as f64 / RECALL_POSITIONS as f64, best[cursor]));
    }
    let ap = pr_curve.iter().map(|p| p.1).sum::<f64>() / RECALL_POSITIONS as f64;
    Ok(ApResult { ap, pr_curve, threshold: 0.0, mode: EvalMode::ThreeD, difficulty: Difficulty::All })
}

/// Scores and labels pooled over scenes, with the count of non-ignored ground truths.
pub fn pooled_matches(
    dets: &BTreeMap<u64, Vec<Detection<f64>>>,
    gts: &BTreeMap<u64, Vec<GroundTruth>>,
    mode: EvalMode,
    threshold: f64,
    difficulty: Difficulty,
) -> Result<(Vec<f64>, Vec<MatchLabel>, usize)> {
    if let Some(id) = dets.keys().find(|id| !gts.contains_key(id)) {
        return Err(Error::Input(format!("detections reference unknown scene {id}")));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut num_gt = 0;
    for (id, scene_gts) in gts {
        let boxes: Vec<Box3<f64>> = scene_gts.iter().map(|g| g.bbox).collect();
        let ignored: Vec<bool> = scene_gts.iter().map(|g| !difficulty.admits(g.meta.as_ref())).collect();
        num_gt += ignored.iter().filter(|i| !**i).count();
        let Some(scene_dets) = dets.get(id) else { continue };
        let l = match_greedy(scene_dets, &boxes, &ignored, |a, b| mode.iou(a, b), threshold);
        scores.extend(scene_dets.iter().map(|d| d.score));
        labels.extend(l);
    }
    Ok((scores, labels, num_gt))
}

/// AP for every `(mode, threshold, difficulty)` combination, in that nesting order.
pub fn evaluate(
    dets: &BTreeMap<u64, Vec<Detection<f64>>>,
    gts: &BTreeMap<u64, Vec<GroundTruth>>,
    modes: &[EvalMode],
    thresholds: &[f64],
    difficulties: &[Difficulty],
) -> Result<Vec<ApResult>> {
    let mut out = Vec::new();
    for &mode in modes {
        for &threshold in thresholds {
            for &difficulty in difficulties {
                let (scores, labels, num_gt) = pooled_matches(dets, gts, mode, threshold, difficulty)?;
                let mut r = average_precision(&scores, &labels, num_gt)?;
                r.mode = mode;
                r.threshold = threshold;
                r.difficulty = difficulty;
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// Relative change `(refined - initial) / initial`; `+inf` when only the
/// initial AP is zero, `0` when both are.
pub fn relative_gain(initial: f64, refined: f64) -> f64 {
    if initial == 0.0 {
        if refined == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(refined)
        }
    } else {
        (refined - initial) / initial
    }
}

/// `mode,threshold,difficulty,AP,r1,p1,...,r40,p40`.
pub fn results_csv(results: &[ApResult], comment: &str) -> String {
    let mut header: Vec<String> = vec!["mode".into(), "threshold".into(), "difficulty".into(), "AP".into()];
    for k in 1..=RECALL_POSITIONS {
        header.push(format!("r{k}"));
        header.push(format!("p{k}"));
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = crate::csv::CsvText::new(comment, &refs);
    for r in results {
        let mut row = vec![r.mode.to_string(), format!("{}", r.threshold), r.difficulty.to_string(), crate::csv::fmt_f64(r.ap)];
        for (rec, p) in &r.pr_curve {
            row.push(format!("{rec}"));
            row.push(crate::csv::fmt_f64(*p));
        }
        out.row(row);
    }
    out.finish()
}
