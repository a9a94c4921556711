//! COCO-style detection metrics: 101-point interpolated AP over IoU
//! thresholds 0.50:0.05:0.95, AP50, AP75, and AR overall and by size bucket.
//!
//! Metrics are computed per class and then averaged over classes. A class
//! that only appears in the predictions scores AP 0; AR averages only over
//! classes with ground truth in the requested area range.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::postprocess::{Detection, DetectionSet, ImageId};
use crate::preprocess::LabeledBox;

/// Ground-truth boxes keyed by image.
pub type GroundTruth = BTreeMap<ImageId, Vec<LabeledBox>>;

pub const NUM_IOU_THRESHOLDS: usize = 10;
pub const RECALL_POINTS: usize = 101;
pub const DEFAULT_MAX_DETS: usize = 100;
/// Reported in place of a recall for an area bucket without ground truth.
pub const EMPTY_BUCKET: f64 = -1.0;

/// `0.50, 0.55, ..., 0.95`, each the nearest double to its decimal value.
pub fn iou_thresholds() -> [f64; NUM_IOU_THRESHOLDS] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Half-open pixel-area interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub lo: f64,
    pub hi: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange {
        lo: 0.0,
        hi: f64::INFINITY,
    };
    pub const SMALL: AreaRange = AreaRange { lo: 0.0, hi: 1024.0 };
    pub const MEDIUM: AreaRange = AreaRange { lo: 1024.0, hi: 9216.0 };
    pub const LARGE: AreaRange = AreaRange {
        lo: 9216.0,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.lo && area < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Aligned with the input predictions.
    pub tp: Vec<bool>,
    pub gt_matched: Vec<bool>,
}

fn greedy_match(order: &[usize], ious: &[Vec<f64>], n_gt: usize, thresh: f64) -> (Vec<bool>, Vec<bool>) {
    let mut tp = vec![false; ious.len()];
    let mut taken = vec![false; n_gt];
    for &p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &v) in ious[p].iter().enumerate() {
            if !taken[g] && v >= thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[p] = true;
        }
    }
    (tp, taken)
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching: predictions in descending score order each claim the
/// unmatched ground truth with the highest IoU at or above `iou_thresh`.
pub fn match_detections(preds: &[Detection], gts: &[BBox], iou_thresh: f64) -> MatchResult {
    let ious: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| gts.iter().map(|g| iou(&p.bbox, g)).collect())
        .collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let (tp, gt_matched) = greedy_match(&descending(&scores), &ious, gts.len(), iou_thresh);
    MatchResult { tp, gt_matched }
}

/// 101-point interpolated precision at recalls `0.00, 0.01, ..., 1.00`.
/// `None` when there is no ground truth.
pub fn interpolated_precision(scores: &[f64], tp: &[bool], total_gt: usize) -> Option<[f64; RECALL_POINTS]> {
    if total_gt == 0 {
        return None;
    }
    let order = descending(scores);
    let mut tps = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut cum_tp = 0usize;
    for (k, &i) in order.iter().enumerate() {
        cum_tp += usize::from(tp[i]);
        tps.push(cum_tp);
        precision.push(cum_tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut out = [0.0; RECALL_POINTS];
    let mut k = 0;
    for (r, slot) in out.iter_mut().enumerate() {
        // first rank whose recall tp / total_gt reaches r / 100
        while k < tps.len() && tps[k] * 100 < r * total_gt {
            k += 1;
        }
        if k < tps.len() {
            *slot = precision[k];
        }
    }
    Some(out)
}

/// Area under the interpolated precision-recall curve. With no ground truth
/// the result is 0 if anything was predicted and 1 otherwise.
pub fn average_precision(scores: &[f64], tp: &[bool], total_gt: usize) -> f64 {
    match interpolated_precision(scores, tp, total_gt) {
        Some(curve) => curve.iter().sum::<f64>() / RECALL_POINTS as f64,
        None if scores.is_empty() => 1.0,
        None => 0.0,
    }
}

/// Matching state of one class in one image across all IoU thresholds.
#[derive(Debug, Clone)]
pub struct ImageClassMatches {
    pub scores: Vec<f64>,
    /// `tp[t][i]` for threshold `t` and prediction `i`.
    pub tp: Vec<Vec<bool>>,
    pub gt_areas: Vec<f64>,
    pub gt_matched: Vec<Vec<bool>>,
}

/// Keeps the `max_dets` best predictions and matches them at every threshold.
pub fn match_image_class(preds: &[Detection], gts: &[BBox], max_dets: usize) -> ImageClassMatches {
    let all_scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let kept: Vec<&Detection> = descending(&all_scores)
        .into_iter()
        .take(max_dets)
        .map(|i| &preds[i])
        .collect();
    let ious: Vec<Vec<f64>> = kept
        .iter()
        .map(|p| gts.iter().map(|g| iou(&p.bbox, g)).collect())
        .collect();
    let order: Vec<usize> = (0..kept.len()).collect();
    let mut tp = Vec::with_capacity(NUM_IOU_THRESHOLDS);
    let mut gt_matched = Vec::with_capacity(NUM_IOU_THRESHOLDS);
    for t in iou_thresholds() {
        let (p, g) = greedy_match(&order, &ious, gts.len(), t);
        tp.push(p);
        gt_matched.push(g);
    }
    ImageClassMatches {
        scores: kept.iter().map(|p| p.score).collect(),
        tp,
        gt_areas: gts.iter().map(|g| g.area()).collect(),
        gt_matched,
    }
}

/// Recall of ground truth inside `range`, averaged over thresholds; per-image
/// matches must come from [`match_image_class`] (which applies `max_dets`).
/// Returns `None` when the range holds no ground truth.
pub fn average_recall(matches: &[&ImageClassMatches], range: AreaRange) -> Option<f64> {
    let total = matches
        .iter()
        .map(|m| m.gt_areas.iter().filter(|&&a| range.contains(a)).count())
        .sum::<usize>();
    if total == 0 {
        return None;
    }
    let mut acc = 0.0;
    for t in 0..NUM_IOU_THRESHOLDS {
        let hit: usize = matches
            .iter()
            .map(|m| {
                m.gt_areas
                    .iter()
                    .zip(&m.gt_matched[t])
                    .filter(|(a, hit)| **hit && range.contains(**a))
                    .count()
            })
            .sum();
        acc += hit as f64 / total as f64;
    }
    Some(acc / NUM_IOU_THRESHOLDS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub iou_thresh: f64,
    /// Class-averaged interpolated precision at recall `r / 100`.
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
    pub ar_small: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
    pub per_threshold_ap: [f64; NUM_IOU_THRESHOLDS],
    pub curves: Vec<PrCurve>,
}

impl EvalReport {
    /// The seven headline columns in display order.
    pub fn columns(&self) -> [(&'static str, f64); 7] {
        [
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("AR", self.ar),
            ("ARs", self.ar_small),
            ("ARm", self.ar_medium),
            ("ARl", self.ar_large),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.columns() {
            s.push_str(&format!("{name:<5} {v:.6}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub max_dets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_dets: DEFAULT_MAX_DETS,
        }
    }
}

fn by_class<T: Copy>(items: &[T], class: impl Fn(&T) -> u32) -> BTreeMap<u32, Vec<T>> {
    let mut out: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for it in items {
        out.entry(class(it)).or_default().push(*it);
    }
    out
}

/// Full report for a prediction set against ground truth. Every predicted
/// image must exist in the ground truth.
pub fn full_report(preds: &DetectionSet, gts: &GroundTruth, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.max_dets == 0 {
        return Err(Error::param("max_dets must be >= 1"));
    }
    if let Some(id) = preds.keys().find(|id| !gts.contains_key(*id)) {
        return Err(Error::parse(
            "predictions",
            format!("image `{id}` has no ground-truth entry"),
        ));
    }
    let mut classes: BTreeSet<u32> = BTreeSet::new();
    let mut per_class: BTreeMap<u32, Vec<ImageClassMatches>> = BTreeMap::new();
    let empty = Vec::new();
    for (id, gt) in gts {
        let gt_by = by_class(gt, |b| b.class_id);
        let pred_by = by_class(preds.get(id).unwrap_or(&empty), |d| d.class_id);
        let image_classes: BTreeSet<u32> = gt_by.keys().chain(pred_by.keys()).copied().collect();
        for c in image_classes {
            let g: Vec<BBox> = gt_by
                .get(&c)
                .map(|v| v.iter().map(|b| b.bbox).collect())
                .unwrap_or_default();
            let p = pred_by.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            per_class
                .entry(c)
                .or_default()
                .push(match_image_class(p, &g, cfg.max_dets));
            classes.insert(c);
        }
    }

    let mut per_threshold_ap = [0.0; NUM_IOU_THRESHOLDS];
    let mut curves = Vec::with_capacity(NUM_IOU_THRESHOLDS);
    for (t, thresh) in iou_thresholds().into_iter().enumerate() {
        let mut ap_sum = 0.0;
        let mut curve_sum = [0.0; RECALL_POINTS];
        for c in &classes {
            let ms = &per_class[c];
            let scores: Vec<f64> = ms.iter().flat_map(|m| m.scores.iter().copied()).collect();
            let tp: Vec<bool> = ms.iter().flat_map(|m| m.tp[t].iter().copied()).collect();
            let total_gt: usize = ms.iter().map(|m| m.gt_areas.len()).sum();
            ap_sum += average_precision(&scores, &tp, total_gt);
            if let Some(curve) = interpolated_precision(&scores, &tp, total_gt) {
                for (a, v) in curve_sum.iter_mut().zip(curve) {
                    *a += v;
                }
            }
        }
        let n = classes.len().max(1) as f64;
        per_threshold_ap[t] = if classes.is_empty() { 1.0 } else { ap_sum / n };
        curves.push(PrCurve {
            iou_thresh: thresh,
            precision: curve_sum.iter().map(|v| v / n).collect(),
        });
    }

    let recall_for = |range: AreaRange| -> f64 {
        let vals: Vec<f64> = classes
            .iter()
            .filter_map(|c| average_recall(&per_class[c].iter().collect::<Vec<_>>(), range))
            .collect();
        if vals.is_empty() {
            EMPTY_BUCKET
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };

    Ok(EvalReport {
        ap: per_threshold_ap.iter().sum::<f64>() / NUM_IOU_THRESHOLDS as f64,
        ap50: per_threshold_ap[0],
        ap75: per_threshold_ap[5],
        ar: recall_for(AreaRange::ALL),
        ar_small: recall_for(AreaRange::SMALL),
        ar_medium: recall_for(AreaRange::MEDIUM),
        ar_large: recall_for(AreaRange::LARGE),
        per_threshold_ap,
        curves,
    })
}
