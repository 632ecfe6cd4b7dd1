//! Inference-time selection: NMS-free top-k scoring (the end-to-end path)
//! and classical greedy NMS (the comparison path).

use crate::geometry::{iou, BBox};
use serde::{Deserialize, Serialize};

/// A scored box, the unit of evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: usize,
}

/// Raw per-slot outputs of one head on one image, before any selection.
/// For anchor-based heads a slot is one anchor; otherwise one grid location.
#[derive(Debug, Clone)]
pub struct HeadCandidates {
    /// Row-major `[slots, K]` class logits.
    pub cls_logits: Vec<f64>,
    /// Decoded box per slot.
    pub boxes: Vec<BBox>,
    /// Center-ness logit per slot, when the head predicts one.
    pub ctr_logits: Option<Vec<f64>>,
    pub num_classes: usize,
}

/// How a candidate's score is computed from the head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `sigmoid(class logit)`.
    Cls,
    /// `sigmoid(class logit) * sigmoid(center-ness logit)`; FCOS-style heads.
    ClsTimesCtr,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Flattens all (slot, class) candidates, scores them, and keeps the top-k
/// with score strictly above `score_floor`, sorted by descending score.
/// No suppression of any kind: two identical boxes with different classes
/// (or from different slots) are both kept. Ties preserve slot-major input
/// order.
pub fn select_topk(
    preds: &HeadCandidates,
    k: usize,
    score_floor: f64,
    score_mode: ScoreMode,
) -> Vec<Detection> {
    assert!(k >= 1, "select_topk needs k >= 1");
    let kc = preds.num_classes;
    assert_eq!(preds.cls_logits.len(), preds.boxes.len() * kc);
    if let Some(ctr) = &preds.ctr_logits {
        assert_eq!(ctr.len(), preds.boxes.len());
    }

    let mut candidates: Vec<Detection> = Vec::with_capacity(preds.cls_logits.len());
    for (slot, bbox) in preds.boxes.iter().enumerate() {
        let ctr_factor = match (score_mode, &preds.ctr_logits) {
            (ScoreMode::ClsTimesCtr, Some(ctr)) => sigmoid(ctr[slot]),
            _ => 1.0,
        };
        for class_id in 0..kc {
            let score = sigmoid(preds.cls_logits[slot * kc + class_id]) * ctr_factor;
            if score > score_floor {
                candidates.push(Detection {
                    bbox: *bbox,
                    score,
                    class_id,
                });
            }
        }
    }
    candidates.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    candidates.truncate(k);
    candidates
}

/// Greedy non-maximum suppression: repeatedly keep the highest-scored
/// remaining detection and drop others (of the same class when
/// `class_aware`) whose IoU with it is strictly greater than the threshold.
/// Score ties break by input order.
pub fn nms(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Vec<Detection> {
    assert!(
        iou_threshold > 0.0 && iou_threshold <= 1.0,
        "nms threshold must be in (0, 1]"
    );
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());

    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i]);
        for &j in &order[rank + 1..] {
            if suppressed[j] {
                continue;
            }
            if class_aware && dets[i].class_id != dets[j].class_id {
                continue;
            }
            if iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, score: f64, class_id: usize) -> Detection {
        Detection {
            bbox: BBox::new(x1, y1, x2, y2),
            score,
            class_id,
        }
    }

    fn candidates_from_scores(scores: &[f64], k: usize) -> HeadCandidates {
        // One box per slot, one class; logits are logit(score).
        HeadCandidates {
            cls_logits: scores.iter().map(|&s: &f64| (s / (1.0 - s)).ln()).collect(),
            boxes: (0..scores.len())
                .map(|i| BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0))
                .collect(),
            ctr_logits: None,
            num_classes: k,
        }
    }

    #[test]
    fn topk_keeps_everything_when_k_large() {
        let preds = candidates_from_scores(&[0.1, 0.5, 0.9], 1);
        let dets = select_topk(&preds, 100, 0.0, ScoreMode::Cls);
        assert_eq!(dets.len(), 3);
        assert!(dets[0].score > dets[1].score && dets[1].score > dets[2].score);
    }

    #[test]
    fn topk_never_suppresses_identical_boxes() {
        let preds = HeadCandidates {
            cls_logits: vec![2.0, 1.5],
            boxes: vec![BBox::new(0.0, 0.0, 4.0, 4.0)],
            ctr_logits: None,
            num_classes: 2,
        };
        let dets = select_topk(&preds, 10, 0.0, ScoreMode::Cls);
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].bbox, dets[1].bbox);
        assert_ne!(dets[0].class_id, dets[1].class_id);
    }

    #[test]
    fn topk_ordering_matches_full_sort_oracle() {
        let scores = [0.31, 0.77, 0.05, 0.77, 0.5, 0.9, 0.11, 0.66];
        let preds = candidates_from_scores(&scores, 1);
        let dets = select_topk(&preds, 5, 0.0, ScoreMode::Cls);

        // Oracle: sort every candidate and take the prefix.
        let mut all: Vec<(f64, usize)> = scores.iter().cloned().zip(0..).collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (d, (s, slot)) in dets.iter().zip(all.iter().take(5)) {
            assert!((d.score - s).abs() < 1e-12);
            assert_eq!(d.bbox.x1 as usize, *slot);
        }
    }

    #[test]
    fn topk_centerness_multiplies_score() {
        let preds = HeadCandidates {
            cls_logits: vec![0.0, 0.0],
            boxes: vec![BBox::new(0.0, 0.0, 1.0, 1.0), BBox::new(1.0, 0.0, 2.0, 1.0)],
            ctr_logits: Some(vec![10.0, -10.0]),
            num_classes: 1,
        };
        let cls_only = select_topk(&preds, 2, 0.0, ScoreMode::Cls);
        assert!((cls_only[0].score - cls_only[1].score).abs() < 1e-12);
        let with_ctr = select_topk(&preds, 2, 0.0, ScoreMode::ClsTimesCtr);
        assert!(with_ctr[0].score > 4.0 * with_ctr[1].score);
    }

    #[test]
    fn nms_keeps_best_of_identical_pair() {
        let dets = vec![
            det(0.0, 0.0, 2.0, 2.0, 0.9, 0),
            det(0.0, 0.0, 2.0, 2.0, 0.8, 0),
        ];
        let kept = nms(&dets, 0.5, true);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_boxes() {
        let dets = vec![
            det(0.0, 0.0, 2.0, 2.0, 0.9, 0),
            det(5.0, 5.0, 7.0, 7.0, 0.8, 0),
            det(10.0, 0.0, 12.0, 2.0, 0.7, 0),
        ];
        assert_eq!(nms(&dets, 0.5, true).len(), 3);
    }

    #[test]
    fn nms_matches_hand_trace_on_cluster() {
        // Six boxes; 0, 1, 2 form an overlap cluster, 3 and 4 overlap each
        // other, 5 stands alone. Greedy trace at threshold 0.4:
        //  - keep 2 (0.95): suppresses 0 (iou 0.6) and 1 (iou 0.45)
        //  - keep 3 (0.80): suppresses 4 (iou 0.6)
        //  - keep 5 (0.60)
        let dets = vec![
            det(0.0, 0.0, 10.0, 10.0, 0.90, 0),
            det(1.0, 0.0, 11.0, 10.0, 0.85, 0),
            det(0.0, 0.0, 10.0, 12.5, 0.95, 0),
            det(20.0, 20.0, 30.0, 30.0, 0.80, 0),
            det(20.0, 22.5, 30.0, 32.5, 0.75, 0),
            det(50.0, 50.0, 55.0, 55.0, 0.60, 0),
        ];
        assert!(iou(&dets[2].bbox, &dets[0].bbox) > 0.4);
        assert!(iou(&dets[2].bbox, &dets[1].bbox) > 0.4);
        assert!(iou(&dets[3].bbox, &dets[4].bbox) > 0.4);
        let kept = nms(&dets, 0.4, true);
        let scores: Vec<f64> = kept.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.95, 0.80, 0.60]);
    }

    #[test]
    fn nms_is_class_aware_when_asked() {
        let dets = vec![
            det(0.0, 0.0, 2.0, 2.0, 0.9, 0),
            det(0.0, 0.0, 2.0, 2.0, 0.8, 1),
        ];
        assert_eq!(nms(&dets, 0.5, true).len(), 2);
        assert_eq!(nms(&dets, 0.5, false).len(), 1);
    }

    #[test]
    fn nms_threshold_one_removes_nothing() {
        // IoU can never strictly exceed 1, so even exact duplicates survive;
        // only-exact-duplicates is the outer bound of what threshold 1 may touch.
        let dets = vec![
            det(0.0, 0.0, 2.0, 2.0, 0.9, 0),
            det(0.0, 0.0, 2.0, 2.0, 0.8, 0),
            det(1.0, 1.0, 3.0, 3.0, 0.7, 0),
        ];
        assert_eq!(nms(&dets, 1.0, true).len(), 3);
    }

    #[test]
    fn nms_is_idempotent_and_subset() {
        let dets = vec![
            det(0.0, 0.0, 10.0, 10.0, 0.9, 0),
            det(1.0, 1.0, 11.0, 11.0, 0.8, 0),
            det(2.0, 2.0, 12.0, 12.0, 0.7, 1),
            det(30.0, 30.0, 40.0, 40.0, 0.6, 0),
            det(0.0, 0.0, 10.0, 10.0, 0.5, 0),
        ];
        let once = nms(&dets, 0.5, true);
        let twice = nms(&once, 0.5, true);
        assert_eq!(once, twice);
        for d in &once {
            assert!(dets.contains(d));
        }
    }

    #[test]
    fn nms_tie_break_by_input_order() {
        let dets = vec![
            det(0.0, 0.0, 2.0, 2.0, 0.8, 0),
            det(0.1, 0.0, 2.1, 2.0, 0.8, 0),
        ];
        let kept = nms(&dets, 0.5, true);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox, dets[0].bbox);
    }
}
