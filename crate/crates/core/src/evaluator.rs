//! COCO-style average precision and recall over a detection dataset:
//! greedy score-ordered matching, 101-point interpolated AP averaged over
//! the 0.50:0.05:0.95 IoU thresholds, and the NMS recall ceiling used by
//! the crowded-scene experiment.
//!
//! Detection score ties are broken by input order everywhere, so results
//! are exact and reproducible.

use crate::geometry::iou;
use crate::postprocess::{nms, Detection};
use crate::scenegen::GroundTruth;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version of the CSV/JSON result schema.
pub const EVAL_SCHEMA: u32 = 1;

/// The ten COCO IoU thresholds 0.50:0.05:0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("image id mismatch: {dets} detection lists vs {gts} ground-truth lists")]
    ImageCountMismatch { dets: usize, gts: usize },
}

/// Per-class slice of an evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEval {
    pub class_id: usize,
    /// Mean AP over the ten IoU thresholds.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub gt_count: usize,
}

/// Dataset-level evaluation summary. All values live in [0, 1]; display
/// conventionally multiplies by 100.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub schema: u32,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Mean AP per IoU threshold, aligned with [`coco_thresholds`].
    pub per_threshold: Vec<f64>,
    /// Fraction of ground truths recalled at IoU 0.5 by the top-k
    /// detections per image.
    pub recall_at_k: f64,
    pub k: usize,
    pub per_class: Vec<ClassEval>,
}

impl EvalResult {
    pub fn csv_header(num_classes: usize) -> String {
        let mut cols = vec![
            "schema".to_string(),
            "ap".to_string(),
            "ap50".to_string(),
            "ap75".to_string(),
            "recall_at_k".to_string(),
            "k".to_string(),
        ];
        for t in coco_thresholds() {
            cols.push(format!("ap_thr{:.0}", t * 100.0));
        }
        for c in 0..num_classes {
            cols.push(format!("class{c}_ap"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self, num_classes: usize) -> String {
        let mut cols = vec![
            self.schema.to_string(),
            format!("{:.6}", self.ap),
            format!("{:.6}", self.ap50),
            format!("{:.6}", self.ap75),
            format!("{:.6}", self.recall_at_k),
            self.k.to_string(),
        ];
        for v in &self.per_threshold {
            cols.push(format!("{v:.6}"));
        }
        for c in 0..num_classes {
            let ap = self
                .per_class
                .iter()
                .find(|pc| pc.class_id == c)
                .map(|pc| pc.ap)
                .unwrap_or(f64::NAN);
            cols.push(format!("{ap:.6}"));
        }
        cols.join(",")
    }
}

/// Greedy matching of score-sorted detections against ground truths of one
/// image: a detection is a true positive when its best-IoU unmatched
/// same-class ground truth clears the threshold; each ground truth matches
/// at most once. Returns one TP flag per detection, in input order.
///
/// Detections must arrive sorted by descending score (ties in input order);
/// the greedy order is the scoring order.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> Vec<bool> {
    debug_assert!(
        dets.windows(2).all(|w| w[0].score >= w[1].score),
        "detections must be sorted by descending score"
    );
    let mut gt_taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for (d, det) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] || gt.class_id != det.class_id {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if v >= iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_taken[g] = true;
            flags[d] = true;
        }
    }
    flags
}

/// 101-point interpolated average precision from (score, is-TP) pairs.
///
/// Returns `None` when there is nothing to evaluate (no ground truths and no
/// detections); zero ground truths with detections present scores 0.
pub fn average_precision(scored_flags: &[(f64, bool)], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return if scored_flags.is_empty() {
            None
        } else {
            Some(0.0)
        };
    }
    if scored_flags.is_empty() {
        return Some(0.0);
    }
    let mut order: Vec<usize> = (0..scored_flags.len()).collect();
    order.sort_by(|&a, &b| scored_flags[b].0.partial_cmp(&scored_flags[a].0).unwrap());

    let mut precisions = Vec::with_capacity(order.len());
    let mut recalls = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if scored_flags[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / gt_count as f64);
    }

    // Walk recall levels from 1.00 down; recall is nondecreasing along the
    // sorted order, so the points clearing each level form a suffix and
    // max_prec carries their best precision.
    let mut ap = 0.0;
    let mut max_prec = 0.0;
    let mut idx = precisions.len();
    for level in (0..=100).rev() {
        let r = level as f64 / 100.0;
        while idx > 0 && recalls[idx - 1] >= r {
            idx -= 1;
            if precisions[idx] > max_prec {
                max_prec = precisions[idx];
            }
        }
        ap += max_prec;
    }
    Some(ap / 101.0)
}

/// Sorts a copy of one image's detections by descending score, input order
/// on ties, truncated to `k`.
fn topk_sorted(dets: &[Detection], k: usize) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    order.truncate(k);
    order.into_iter().map(|i| dets[i]).collect()
}

/// Evaluates a whole dataset: detections and ground truths are parallel
/// per-image lists. Classes with zero ground truths are excluded from every
/// average.
pub fn evaluate(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<GroundTruth>],
    k: usize,
) -> Result<EvalResult, EvalError> {
    if dets_per_image.len() != gts_per_image.len() {
        return Err(EvalError::ImageCountMismatch {
            dets: dets_per_image.len(),
            gts: gts_per_image.len(),
        });
    }
    let thresholds = coco_thresholds();

    let mut classes: Vec<usize> = gts_per_image
        .iter()
        .flatten()
        .map(|g| g.class_id)
        .collect();
    classes.sort_unstable();
    classes.dedup();

    let capped: Vec<Vec<Detection>> = dets_per_image
        .iter()
        .map(|dets| topk_sorted(dets, k))
        .collect();

    let mut per_class = Vec::with_capacity(classes.len());
    let mut per_threshold_acc = vec![0.0; thresholds.len()];
    let mut recalled = 0usize;
    let mut total_gts = 0usize;

    for &class_id in &classes {
        let gt_count: usize = gts_per_image
            .iter()
            .map(|g| g.iter().filter(|gt| gt.class_id == class_id).count())
            .sum();
        let mut thr_aps = Vec::with_capacity(thresholds.len());
        for (t_idx, &thr) in thresholds.iter().enumerate() {
            let mut scored_flags: Vec<(f64, bool)> = Vec::new();
            let mut matched_this_thr = 0usize;
            for (dets, gts) in capped.iter().zip(gts_per_image) {
                let class_dets: Vec<Detection> = dets
                    .iter()
                    .filter(|d| d.class_id == class_id)
                    .cloned()
                    .collect();
                let class_gts: Vec<GroundTruth> = gts
                    .iter()
                    .filter(|g| g.class_id == class_id)
                    .cloned()
                    .collect();
                let flags = match_detections(&class_dets, &class_gts, thr);
                matched_this_thr += flags.iter().filter(|&&f| f).count();
                scored_flags.extend(
                    class_dets
                        .iter()
                        .zip(&flags)
                        .map(|(d, &f)| (d.score, f)),
                );
            }
            let ap = average_precision(&scored_flags, gt_count).unwrap_or(0.0);
            thr_aps.push(ap);
            per_threshold_acc[t_idx] += ap;
            if (thr - 0.5).abs() < 1e-9 {
                recalled += matched_this_thr;
            }
        }
        let mean_ap = thr_aps.iter().sum::<f64>() / thr_aps.len() as f64;
        per_class.push(ClassEval {
            class_id,
            ap: mean_ap,
            ap50: thr_aps[0],
            ap75: thr_aps[5],
            gt_count,
        });
        total_gts += gt_count;
    }

    let nc = classes.len().max(1) as f64;
    let per_threshold: Vec<f64> = per_threshold_acc.iter().map(|v| v / nc).collect();
    let (ap, ap50, ap75) = if per_class.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            per_class.iter().map(|c| c.ap).sum::<f64>() / nc,
            per_threshold[0],
            per_threshold[5],
        )
    };
    Ok(EvalResult {
        schema: EVAL_SCHEMA,
        ap,
        ap50,
        ap75,
        per_threshold,
        recall_at_k: if total_gts == 0 {
            0.0
        } else {
            recalled as f64 / total_gts as f64
        },
        k,
        per_class,
    })
}

/// Fraction of one image's ground truths surviving class-aware NMS at the
/// threshold, with every box scored 1.0 (ties resolved by input order).
/// This is the recall ceiling of any NMS-based detector on that image; the
/// top-k path has no such ceiling.
pub fn recall_after_nms_on_gt(gts: &[GroundTruth], iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return 1.0;
    }
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection {
            bbox: g.bbox,
            score: 1.0,
            class_id: g.class_id,
        })
        .collect();
    nms(&dets, iou_threshold, true).len() as f64 / gts.len() as f64
}

/// Dataset-level NMS recall ceiling: surviving boxes over all boxes.
pub fn recall_ceiling(gts_per_image: &[Vec<GroundTruth>], iou_threshold: f64) -> f64 {
    let total: usize = gts_per_image.iter().map(|g| g.len()).sum();
    if total == 0 {
        return 1.0;
    }
    let kept: f64 = gts_per_image
        .iter()
        .map(|g| recall_after_nms_on_gt(g, iou_threshold) * g.len() as f64)
        .sum();
    kept / total as f64
}
