//! Detection AP with greedy VOC matching, orientation accuracy, PR curves.

mod io;

use std::collections::{BTreeMap, HashSet};

pub use io::{emit_pr_curve, format_detections, format_metrics, parse_detections, read_detections, read_pr_csv, render_svg, write_pr_csv};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Quad};
use crate::orientation::{orientation_from_quad, orientation_loss, Angle};
use crate::scalar::Scalar;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const ORIENTATION_THRESHOLDS_DEG: [f64; 3] = [10.0, 20.0, 30.0];

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult<T> {
    pub id: usize,
    pub image_id: String,
    pub bbox: AxisBox<T>,
    pub score: T,
    pub orientation: Option<Angle<T>>,
}

impl<T: Scalar> DetectionResult<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_valid() {
            return Err(Error::Usage(format!("detection {} has an empty box", self.id)));
        }
        if !self.score.is_finite() {
            return Err(Error::Usage(format!("detection {} has a non-finite score", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthBox<T> {
    pub image_id: String,
    pub bbox: AxisBox<T>,
    pub orientation: Angle<T>,
}

impl<T: Scalar> GroundTruthBox<T> {
    /// Axis-aligned box from the quadrilateral's corner extents.
    pub fn from_quad(image_id: impl Into<String>, quad: &Quad<T>, wrist_side: usize) -> Result<Self> {
        Ok(Self {
            image_id: image_id.into(),
            bbox: quad.bounding_box(),
            orientation: orientation_from_quad(quad, wrist_side)?,
        })
    }
}

pub fn iou<T: Scalar>(a: &AxisBox<T>, b: &AxisBox<T>) -> T {
    a.iou(b)
}

/// Indices of `scores` by descending score; equal scores keep input order.
pub fn rank_by_score<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Outcome of greedy matching. Per-detection vectors are indexed like the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub order: Vec<usize>,
    pub is_tp: Vec<bool>,
    pub matched_gt: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

impl Matching {
    /// TP/FP labels in rank order.
    pub fn ranked_labels(&self) -> Vec<bool> {
        self.order.iter().map(|&d| self.is_tp[d]).collect()
    }
}

/// VOC greedy matching: in descending score order, each detection claims its
/// best-IoU unmatched ground truth in the same image if that IoU reaches
/// `iou_thresh`.
pub fn match_detections<T: Scalar>(
    dets: &[DetectionResult<T>],
    gts: &[GroundTruthBox<T>],
    iou_thresh: T,
) -> Result<Matching> {
    let mut seen = HashSet::new();
    for d in dets {
        if !seen.insert(d.id) {
            return Err(Error::Usage(format!("duplicate detection id {}", d.id)));
        }
        d.validate()?;
    }
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (g, gt) in gts.iter().enumerate() {
        by_image.entry(gt.image_id.as_str()).or_default().push(g);
    }

    let scores: Vec<T> = dets.iter().map(|d| d.score).collect();
    let order = rank_by_score(&scores);
    let mut is_tp = vec![false; dets.len()];
    let mut matched_gt = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for &d in &order {
        let Some(candidates) = by_image.get(dets[d].image_id.as_str()) else {
            continue;
        };
        let mut best: Option<(usize, T)> = None;
        for &g in candidates {
            if gt_matched[g] {
                continue;
            }
            let o = dets[d].bbox.iou(&gts[g].bbox);
            if best.map_or(true, |(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, o)) = best {
            if o >= iou_thresh {
                is_tp[d] = true;
                matched_gt[d] = Some(g);
                gt_matched[g] = true;
            }
        }
    }
    Ok(Matching {
        order,
        is_tp,
        matched_gt,
        gt_matched,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Interpolation {
    /// Area under the full precision envelope.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-points" | "all" => Ok(Self::AllPoints),
            "11-point" | "eleven" => Ok(Self::ElevenPoint),
            _ => Err(Error::Config(format!("unknown AP interpolation `{s}`"))),
        }
    }
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AllPoints => "all-points",
            Self::ElevenPoint => "11-point",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve<T> {
    /// `(recall, precision)` after each score cut.
    pub points: Vec<(T, T)>,
    pub ap: T,
}

impl<T: Scalar> PrCurve<T> {
    pub fn validate(&self) -> Result<()> {
        let mut prev = T::zero();
        for &(r, p) in &self.points {
            if r < prev || !(T::zero()..=T::one()).contains(&p) || r > T::one() {
                return Err(Error::Usage(format!("invalid curve point ({r}, {p})")));
            }
            prev = r;
        }
        Ok(())
    }

    /// Envelope precision at `recall`: best precision at any point with recall ≥ it.
    pub fn precision_at(&self, recall: T) -> T {
        self.points
            .iter()
            .filter(|(r, _)| *r >= recall)
            .map(|&(_, p)| p)
            .fold(T::zero(), T::max)
    }
}

/// Precision/recall after each cut of a ranked TP/FP list.
pub fn precision_recall<T: Scalar>(ranked_labels: &[bool], total_gt: usize) -> Vec<(T, T)> {
    let mut tp = 0usize;
    ranked_labels
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            (T::of(tp as f64 / total_gt as f64), T::of(tp as f64 / (k + 1) as f64))
        })
        .collect()
}

/// AP of a ranked TP/FP list against `total_gt` ground truths.
pub fn average_precision_ranked<T: Scalar>(ranked_labels: &[bool], total_gt: usize, mode: Interpolation) -> Result<PrCurve<T>> {
    if total_gt == 0 {
        return Err(Error::UndefinedMetric("AP needs at least one ground truth".into()));
    }
    let points = precision_recall::<T>(ranked_labels, total_gt);
    let ap = match mode {
        Interpolation::AllPoints => {
            let mut rec = vec![T::zero()];
            let mut pre = vec![T::zero()];
            rec.extend(points.iter().map(|p| p.0));
            pre.extend(points.iter().map(|p| p.1));
            for i in (0..pre.len() - 1).rev() {
                pre[i] = pre[i].max(pre[i + 1]);
            }
            (1..rec.len())
                .filter(|&i| rec[i] != rec[i - 1])
                .map(|i| (rec[i] - rec[i - 1]) * pre[i])
                .sum()
        }
        Interpolation::ElevenPoint => {
            let curve = PrCurve { points: points.clone(), ap: T::zero() };
            (0..=10).map(|t| curve.precision_at(T::of(t as f64 / 10.0))).sum::<T>() / T::of(11.0)
        }
    };
    // an empty sum is -0.0
    Ok(PrCurve { points, ap: ap + T::zero() })
}

/// AP from `(score, is_tp)` pairs, ranked by descending score with ties in input order.
pub fn average_precision<T: Scalar>(scored: &[(T, bool)], total_gt: usize, mode: Interpolation) -> Result<PrCurve<T>> {
    let scores: Vec<T> = scored.iter().map(|s| s.0).collect();
    let labels: Vec<bool> = rank_by_score(&scores).into_iter().map(|i| scored[i].1).collect();
    average_precision_ranked(&labels, total_gt, mode)
}

/// Fraction of pairs whose angular error is within each threshold (degrees, inclusive).
pub fn orientation_accuracy<T: Scalar>(pairs: &[(Angle<T>, Angle<T>)], thresholds_deg: &[T]) -> Result<Vec<T>> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("orientation accuracy over zero matched hands".into()));
    }
    let errors: Vec<T> = pairs
        .iter()
        .map(|(p, g)| orientation_loss(p.radians(), g.radians()))
        .collect();
    Ok(thresholds_deg
        .iter()
        .map(|t| {
            let limit = t.to_radians();
            let hits = errors.iter().filter(|&&e| e <= limit).count();
            T::of(hits as f64 / pairs.len() as f64)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    pub orientation_thresholds_deg: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            interpolation: Interpolation::AllPoints,
            orientation_thresholds_deg: ORIENTATION_THRESHOLDS_DEG.to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!("IoU threshold must be in (0, 1], got {}", self.iou_threshold)));
        }
        if self.orientation_thresholds_deg.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("orientation thresholds must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation<T> {
    pub curve: PrCurve<T>,
    pub detections: usize,
    pub ground_truths: usize,
    pub true_positives: usize,
    /// `None` when no true positive carries a predicted orientation.
    pub orientation: Option<Vec<T>>,
}

/// Matching, AP, and orientation accuracy over true positives.
pub fn evaluate<T: Scalar>(dets: &[DetectionResult<T>], gts: &[GroundTruthBox<T>], cfg: &EvalConfig) -> Result<Evaluation<T>> {
    cfg.validate()?;
    let m = match_detections(dets, gts, T::of(cfg.iou_threshold))?;
    let curve = average_precision_ranked(&m.ranked_labels(), gts.len(), cfg.interpolation)?;
    let pairs: Vec<_> = m
        .order
        .iter()
        .filter_map(|&d| Some((dets[d].orientation?, gts[m.matched_gt[d]?].orientation)))
        .collect();
    let thresholds: Vec<T> = cfg.orientation_thresholds_deg.iter().map(|&t| T::of(t)).collect();
    Ok(Evaluation {
        curve,
        detections: dets.len(),
        ground_truths: gts.len(),
        true_positives: m.is_tp.iter().filter(|&&t| t).count(),
        orientation: if pairs.is_empty() { None } else { Some(orientation_accuracy(&pairs, &thresholds)?) },
    })
}
