//! Per-patch performance of the perception output against ground truth.
//!
//! Segmentation scores exclude cells whose ground truth holds the ignore
//! ID, unlike patch similarity which keeps the full denominator. Detection
//! scores are per ground-truth box, with predictions consumed greedily in
//! descending confidence so no prediction satisfies two boxes at once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{DetSample, DetectionBox, LabelMap, IGNORE_ID};
use crate::error::{Error, Result};
use crate::similarity::PatchView;

/// What a score value measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    PixelAccuracy,
    MeanIou,
    ClassIou(u16),
    DetectionHit,
    DetectionIou,
}

/// User-selectable per-patch metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    PixelAccuracy,
    MeanIou,
    DetectionHit,
    DetectionIou,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MetricKind::PixelAccuracy => "pixel_accuracy",
            MetricKind::MeanIou => "mean_iou",
            MetricKind::DetectionHit => "detection_hit",
            MetricKind::DetectionIou => "detection_iou",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pixel_accuracy" => Ok(MetricKind::PixelAccuracy),
            "mean_iou" => Ok(MetricKind::MeanIou),
            "detection_hit" => Ok(MetricKind::DetectionHit),
            "detection_iou" => Ok(MetricKind::DetectionIou),
            other => Err(format!(
                "unknown metric {other:?}; expected pixel_accuracy, mean_iou, \
                 detection_hit, or detection_iou"
            )),
        }
    }
}

/// One performance score in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfScore {
    pub value: f64,
    pub kind: ScoreKind,
    /// Cells with non-ignore ground truth (segmentation kinds only).
    pub valid_cells: Option<u64>,
}

/// Per-class cell counts of one patch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

/// Confusion totals of a patch, over cells with non-ignore ground truth.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    per_class: BTreeMap<u16, ClassCounts>,
    valid_cells: u64,
}

impl ConfusionCounts {
    pub fn valid_cells(&self) -> u64 {
        self.valid_cells
    }

    /// Classes present in ground truth or prediction on valid cells,
    /// ascending by ID.
    pub fn classes(&self) -> impl Iterator<Item = (u16, &ClassCounts)> {
        self.per_class.iter().map(|(&c, counts)| (c, counts))
    }

    pub fn class_iou(&self, class: u16) -> Option<f64> {
        let c = self.per_class.get(&class)?;
        let denom = c.true_pos + c.false_pos + c.false_neg;
        if denom == 0 {
            None
        } else {
            Some(c.true_pos as f64 / denom as f64)
        }
    }
}

/// Fraction of valid cells predicted correctly; None when the patch has no
/// valid cells (callers drop such patches and count them).
pub fn patch_pixel_accuracy(gt: &LabelMap, pred: &LabelMap) -> Result<Option<PerfScore>> {
    check_dims(gt, pred)?;
    Ok(pixel_accuracy_views(
        &PatchView::Grid(gt),
        &PatchView::Grid(pred),
    ))
}

pub(crate) fn pixel_accuracy_views(gt: &PatchView, pred: &PatchView) -> Option<PerfScore> {
    let (_, h) = gt.dims();
    let mut valid: u64 = 0;
    let mut correct: u64 = 0;
    for r in 0..h {
        for (&g, &p) in gt.row(r).iter().zip(pred.row(r)) {
            if g == IGNORE_ID {
                continue;
            }
            valid += 1;
            if g == p {
                correct += 1;
            }
        }
    }
    if valid == 0 {
        return None;
    }
    Some(PerfScore {
        value: correct as f64 / valid as f64,
        kind: ScoreKind::PixelAccuracy,
        valid_cells: Some(valid),
    })
}

/// Per-class confusion totals over valid cells. A wrong prediction adds a
/// false negative for the ground-truth class and, unless the prediction is
/// the ignore ID, a false positive for the predicted class.
pub fn confusion_counts(gt: &LabelMap, pred: &LabelMap) -> Result<ConfusionCounts> {
    check_dims(gt, pred)?;
    Ok(confusion_views(
        &PatchView::Grid(gt),
        &PatchView::Grid(pred),
    ))
}

pub(crate) fn confusion_views(gt: &PatchView, pred: &PatchView) -> ConfusionCounts {
    let (_, h) = gt.dims();
    let mut counts = ConfusionCounts::default();
    for r in 0..h {
        for (&g, &p) in gt.row(r).iter().zip(pred.row(r)) {
            if g == IGNORE_ID {
                continue;
            }
            counts.valid_cells += 1;
            if g == p {
                counts.per_class.entry(g).or_default().true_pos += 1;
            } else {
                counts.per_class.entry(g).or_default().false_neg += 1;
                if p != IGNORE_ID {
                    counts.per_class.entry(p).or_default().false_pos += 1;
                }
            }
        }
    }
    counts
}

/// Per-class IoU scores plus their mean, ascending by class ID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouBreakdown {
    pub per_class: Vec<(u16, PerfScore)>,
    /// None when the patch has no valid cells.
    pub mean: Option<PerfScore>,
}

/// Intersection over union per class present in gt or pred on valid cells,
/// and the unweighted mean across those classes.
pub fn patch_iou(gt: &LabelMap, pred: &LabelMap) -> Result<IouBreakdown> {
    check_dims(gt, pred)?;
    Ok(iou_views(&PatchView::Grid(gt), &PatchView::Grid(pred)))
}

pub(crate) fn iou_views(gt: &PatchView, pred: &PatchView) -> IouBreakdown {
    let counts = confusion_views(gt, pred);
    let mut per_class = Vec::new();
    let mut sum = 0.0;
    for (class, _) in counts.classes() {
        // every present class has a nonzero denominator by construction
        let iou = counts.class_iou(class).expect("present class has cells");
        per_class.push((
            class,
            PerfScore {
                value: iou,
                kind: ScoreKind::ClassIou(class),
                valid_cells: Some(counts.valid_cells()),
            },
        ));
        sum += iou;
    }
    let mean = if per_class.is_empty() {
        None
    } else {
        Some(PerfScore {
            value: sum / per_class.len() as f64,
            kind: ScoreKind::MeanIou,
            valid_cells: Some(counts.valid_cells()),
        })
    };
    IouBreakdown { per_class, mean }
}

fn check_dims(gt: &LabelMap, pred: &LabelMap) -> Result<()> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::ShapeMismatch(
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height(),
        ));
    }
    Ok(())
}

/// Intersection area over union area of two axis-aligned boxes.
pub fn box_iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    // areas from the same rounded corner coordinates as the intersection,
    // so identical boxes land on exactly 1.0
    let (ax2, ay2) = (a.x + a.w, a.y + a.h);
    let (bx2, by2) = (b.x + b.w, b.y + b.h);
    let ix = ax2.min(bx2) - a.x.max(b.x);
    let iy = ay2.min(by2) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let area_a = (ax2 - a.x) * (ay2 - a.y);
    let area_b = (bx2 - b.x) * (by2 - b.y);
    inter / (area_a + area_b - inter)
}

/// Matching thresholds for detection scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Minimum overlap for a prediction to satisfy a ground-truth box.
    pub iou_min: f64,
    /// Minimum confidence for a prediction to participate.
    pub conf_min: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            iou_min: 0.5,
            conf_min: 0.25,
        }
    }
}

/// Assign predictions to ground-truth boxes: predictions in descending
/// confidence (file order on ties) each take the still-free same-class box
/// they overlap most, requiring confidence >= conf_min and IoU >= iou_min.
/// Returns, per ground-truth box, the consuming prediction and its IoU.
pub fn greedy_assignment(
    gt_boxes: &[DetectionBox],
    preds: &[DetectionBox],
    params: &DetectionParams,
) -> Vec<Option<(usize, f64)>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut assigned: Vec<Option<(usize, f64)>> = vec![None; gt_boxes.len()];
    for &pi in &order {
        let pred = &preds[pi];
        if pred.confidence < params.conf_min {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gt_boxes.iter().enumerate() {
            if assigned[gi].is_some() || gt.class_id != pred.class_id {
                continue;
            }
            let iou = box_iou(gt, pred);
            if iou < params.iou_min {
                continue;
            }
            // strict comparison keeps the first box on IoU ties
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, iou)) = best {
            assigned[gi] = Some((pi, iou));
        }
    }
    assigned
}

/// Score a single ground-truth box against a prediction list in isolation.
/// detection_hit: 1.0 when any prediction with the box's class, sufficient
/// confidence, and sufficient overlap exists. detection_iou: the best such
/// overlap, 0.0 when none qualifies.
pub fn detection_anchor_score(
    anchor: &DetectionBox,
    preds: &[DetectionBox],
    params: &DetectionParams,
    kind: MetricKind,
) -> PerfScore {
    let best = preds
        .iter()
        .filter(|p| p.class_id == anchor.class_id && p.confidence >= params.conf_min)
        .map(|p| box_iou(anchor, p))
        .filter(|&iou| iou >= params.iou_min)
        .fold(None::<f64>, |acc, iou| {
            Some(acc.map_or(iou, |a| a.max(iou)))
        });
    score_from_match(best, kind)
}

/// Score every ground-truth box of one image under the greedy assignment;
/// output order follows the ground-truth file order (the patch order).
/// detection_iou reports the overlap of the consuming prediction, so the
/// one-prediction-per-box rule holds for both kinds.
pub fn detection_patch_scores(
    sample: &DetSample,
    params: &DetectionParams,
    kind: MetricKind,
) -> Vec<PerfScore> {
    let assigned = greedy_assignment(&sample.gt_boxes, &sample.pred_boxes, params);
    assigned
        .into_iter()
        .map(|a| score_from_match(a.map(|(_, iou)| iou), kind))
        .collect()
}

fn score_from_match(iou: Option<f64>, kind: MetricKind) -> PerfScore {
    match kind {
        MetricKind::DetectionHit => PerfScore {
            value: if iou.is_some() { 1.0 } else { 0.0 },
            kind: ScoreKind::DetectionHit,
            valid_cells: None,
        },
        MetricKind::DetectionIou => PerfScore {
            value: iou.unwrap_or(0.0),
            kind: ScoreKind::DetectionIou,
            valid_cells: None,
        },
        other => panic!("{other} is not a detection metric"),
    }
}
