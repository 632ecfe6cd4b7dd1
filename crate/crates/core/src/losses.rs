//! Loss functions of both branches and their weighted combination.
//!
//! Each loss exists in two forms: a closed-form scalar function (the
//! reference definition, used directly in tests and small tools) and a
//! graph builder composing [`Tape`] ops (the form the trainer
//! differentiates). Tests pin the two against each other.
//!
//! Component values reported by the branch builders are the raw normalized
//! sums before alpha/beta weighting; branch totals carry the weights.

use crate::assignment::{AssignmentResult, SampleLabel};
use crate::geometry::{BBox, Ltrb, Point};
use crate::scenegen::GroundTruth;
use crate::tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-6;

/// Which flavor of one-to-many branch is being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum O2mStyle {
    Fcos,
    Retina,
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("FCOS-style one-to-many loss needs center-ness predictions and targets")]
    MissingCenterness,
}

/// Every scalar weight of the dual objective and the two branch losses.
///
/// The branch weights follow the configurations of the detectors the
/// branches imitate (the one-to-one defaults come from the OneNet/DETR cost
/// family, the one-to-many ones from RetinaNet/FCOS); none of them are
/// contributions of this crate and all are configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_o2o: f64,
    pub lambda_o2m: f64,
    pub alpha_cls: f64,
    pub alpha_reg: f64,
    pub alpha_iou: f64,
    pub beta_cls: f64,
    pub beta_reg: f64,
    /// 0 for the RetinaNet-style branch, which has no center-ness head.
    pub beta_ctr: f64,
    pub focal_alpha_t: f64,
    pub focal_gamma: f64,
}

impl LossWeights {
    /// Dual training with an FCOS-style one-to-many branch.
    pub fn dual_fcos() -> Self {
        Self {
            lambda_o2o: 1.0,
            lambda_o2m: 1.0,
            alpha_cls: 2.0,
            alpha_reg: 5.0,
            alpha_iou: 2.0,
            beta_cls: 1.0,
            beta_reg: 1.0,
            beta_ctr: 1.0,
            focal_alpha_t: 0.25,
            focal_gamma: 2.0,
        }
    }

    /// Dual training with a RetinaNet-style one-to-many branch.
    pub fn dual_retina() -> Self {
        Self {
            lambda_o2m: 2.0,
            beta_ctr: 0.0,
            ..Self::dual_fcos()
        }
    }
}

/// Binary focal loss for one (probability, 0/1 target) pair:
/// `-alpha_bal * (1 - p_t)^gamma * ln(p_t)`.
pub fn focal_loss(p: f64, target: bool, alpha_t: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let p_t = if target { p } else { 1.0 - p };
    let alpha_bal = if target { alpha_t } else { 1.0 - alpha_t };
    -alpha_bal * (1.0 - p_t).powf(gamma) * p_t.ln()
}

/// Binary cross entropy with a possibly soft target.
pub fn bce_loss(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Mean absolute difference over the four distance components.
pub fn l1_loss(pred: &Ltrb, target: &Ltrb) -> f64 {
    ((pred.left - target.left).abs()
        + (pred.top - target.top).abs()
        + (pred.right - target.right).abs()
        + (pred.bottom - target.bottom).abs())
        / 4.0
}

/// `1 - giou`, in `[0, 2]`.
pub fn giou_loss(pred: &BBox, gt: &BBox) -> f64 {
    1.0 - crate::geometry::giou(pred, gt)
}

/// The dual objective: `lambda_o2o * l_o2o + lambda_o2m * l_o2m`.
pub fn dual_loss(l_o2o: f64, l_o2m: f64, w: &LossWeights) -> f64 {
    w.lambda_o2o * l_o2o + w.lambda_o2m * l_o2m
}

/// Every component of one training step's objective. Branch components are
/// the unweighted normalized sums; `l_o2o`, `l_o2m` and `l_da` carry the
/// alpha/beta/lambda weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_o2o_cls: f64,
    pub l_o2o_reg: f64,
    pub l_o2o_iou: f64,
    pub l_o2m_cls: f64,
    pub l_o2m_reg: f64,
    pub l_o2m_ctr: f64,
    pub l_o2o: f64,
    pub l_o2m: f64,
    pub l_da: f64,
}

/// Sum over all elements of `weight * (1 - p_t)^gamma * (-ln p_t)` with
/// `p = sigmoid(logits)`. `targets` must be 0/1; `weight` folds the alpha
/// balancing and any exclusion mask (0 drops an element entirely).
pub fn focal_loss_sum(
    tape: &mut Tape,
    logits: Var,
    targets: &Tensor,
    weight: &Tensor,
    gamma: f64,
) -> Var {
    let t = tape.constant(targets.clone());
    let omt = {
        let data = targets.data().iter().map(|&v| 1.0 - v).collect();
        tape.constant(Tensor::new(targets.shape().to_vec(), data))
    };
    let w = tape.constant(weight.clone());

    let p = tape.sigmoid(logits);
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let p_pos = tape.mul(p, t);
    let one_minus_p = tape.affine(p, -1.0, 1.0);
    let p_neg = tape.mul(one_minus_p, omt);
    let p_t = tape.add(p_pos, p_neg);

    let one_minus_pt = tape.affine(p_t, -1.0, 1.0);
    let focal_w = tape.pow_scalar(one_minus_pt, gamma);
    let log_pt = tape.log(p_t);
    let neg_log = tape.affine(log_pt, -1.0, 0.0);

    let elem = tape.mul(focal_w, neg_log);
    let elem = tape.mul(elem, w);
    tape.sum(elem)
}

/// Sum over rows of `-(t ln p + (1-t) ln(1-p))` with `p = sigmoid(logits)`.
pub fn bce_loss_sum(tape: &mut Tape, logits: Var, targets: &Tensor) -> Var {
    let t = tape.constant(targets.clone());
    let omt = {
        let data = targets.data().iter().map(|&v| 1.0 - v).collect();
        tape.constant(Tensor::new(targets.shape().to_vec(), data))
    };
    let p = tape.sigmoid(logits);
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = tape.log(p);
    let one_minus_p = tape.affine(p, -1.0, 1.0);
    let log_omp = tape.log(one_minus_p);
    let pos = tape.mul(t, log_p);
    let neg = tape.mul(omt, log_omp);
    let s = tape.add(pos, neg);
    let total = tape.sum(s);
    tape.affine(total, -1.0, 0.0)
}

/// Sum over positives of `1 - giou(decoded pred box, gt box)`.
///
/// `pred_ltrb` is the [N,4] positive-row slice of the head's pixel-space
/// distances; boxes are decoded around each row's grid location in-graph so
/// gradients flow into all four distances.
pub fn giou_loss_sum(
    tape: &mut Tape,
    pred_ltrb: Var,
    locations: &[Point],
    gt_boxes: &[BBox],
) -> Var {
    let n = locations.len();
    assert_eq!(gt_boxes.len(), n);
    assert_eq!(tape.value(pred_ltrb).shape(), &[n, 4]);

    let cx = tape.constant(Tensor::new(vec![n], locations.iter().map(|p| p.x).collect()));
    let cy = tape.constant(Tensor::new(vec![n], locations.iter().map(|p| p.y).collect()));
    let gx1 = tape.constant(Tensor::new(vec![n], gt_boxes.iter().map(|b| b.x1).collect()));
    let gy1 = tape.constant(Tensor::new(vec![n], gt_boxes.iter().map(|b| b.y1).collect()));
    let gx2 = tape.constant(Tensor::new(vec![n], gt_boxes.iter().map(|b| b.x2).collect()));
    let gy2 = tape.constant(Tensor::new(vec![n], gt_boxes.iter().map(|b| b.y2).collect()));
    let g_area = tape.constant(Tensor::new(
        vec![n],
        gt_boxes.iter().map(crate::geometry::area).collect(),
    ));

    let l = tape.column(pred_ltrb, 0);
    let t = tape.column(pred_ltrb, 1);
    let r = tape.column(pred_ltrb, 2);
    let b = tape.column(pred_ltrb, 3);
    let px1 = tape.sub(cx, l);
    let py1 = tape.sub(cy, t);
    let px2 = tape.add(cx, r);
    let py2 = tape.add(cy, b);

    let ix1 = tape.maximum(px1, gx1);
    let iy1 = tape.maximum(py1, gy1);
    let ix2 = tape.minimum(px2, gx2);
    let iy2 = tape.minimum(py2, gy2);
    let iw = tape.sub(ix2, ix1);
    let iw = tape.relu(iw);
    let ih = tape.sub(iy2, iy1);
    let ih = tape.relu(ih);
    let inter = tape.mul(iw, ih);

    let pw = tape.sub(px2, px1);
    let ph = tape.sub(py2, py1);
    let p_area = tape.mul(pw, ph);
    let areas = tape.add(p_area, g_area);
    let union = tape.sub(areas, inter);

    let hx1 = tape.minimum(px1, gx1);
    let hy1 = tape.minimum(py1, gy1);
    let hx2 = tape.maximum(px2, gx2);
    let hy2 = tape.maximum(py2, gy2);
    let hw = tape.sub(hx2, hx1);
    let hh = tape.sub(hy2, hy1);
    let hull = tape.mul(hw, hh);

    let iou = tape.div(inter, union);
    let slack = tape.sub(hull, union);
    let penalty = tape.div(slack, hull);
    let giou = tape.sub(iou, penalty);
    let loss = tape.affine(giou, -1.0, 1.0);
    tape.sum(loss)
}

/// Result of one branch-loss build: graph handles for the weighted total
/// and each raw component.
#[derive(Debug, Clone, Copy)]
pub struct BranchLoss {
    pub total: Var,
    pub cls: Var,
    pub reg: Var,
    /// GIoU component for the one-to-one branch, center-ness BCE for the
    /// FCOS-style one-to-many branch, 0 otherwise.
    pub aux: Var,
}

/// Builds the 0/1 class targets and the focal weight mask ([rows, K]).
/// Ignored slots get weight 0 in every class column.
fn cls_targets(
    assignment: &AssignmentResult,
    gts: &[GroundTruth],
    rows: usize,
    num_classes: usize,
    alpha_t: f64,
) -> (Tensor, Tensor) {
    let mut targets = vec![0.0; rows * num_classes];
    let mut weights = vec![1.0 - alpha_t; rows * num_classes];
    for (slot, label) in assignment.labels.iter().enumerate() {
        match label {
            SampleLabel::Positive { gt } => {
                let c = gts[*gt].class_id;
                targets[slot * num_classes + c] = 1.0;
                weights[slot * num_classes + c] = alpha_t;
            }
            SampleLabel::Ignore => {
                for k in 0..num_classes {
                    weights[slot * num_classes + k] = 0.0;
                }
            }
            SampleLabel::Negative => {}
        }
    }
    (
        Tensor::new(vec![rows, num_classes], targets),
        Tensor::new(vec![rows, num_classes], weights),
    )
}

/// One-to-one branch loss:
/// `alpha_cls * cls + alpha_reg * reg + alpha_iou * iou`, each component
/// normalized by `max(N, 1)`. Classification runs over every location;
/// regression and IoU only over the matched positives. The L1 regression
/// distances are normalized by the image size, DETR-style, which is the
/// scale the `alpha_reg` default expects.
#[allow(clippy::too_many_arguments)]
pub fn branch_loss_o2o(
    tape: &mut Tape,
    cls_logits: Var,
    ltrb: Var,
    locations: &[Point],
    assignment: &AssignmentResult,
    gts: &[GroundTruth],
    w: &LossWeights,
    image_size: f64,
) -> BranchLoss {
    let rows = locations.len();
    let num_classes = tape.value(cls_logits).shape()[1];
    let n = assignment.positive_count;
    let norm = 1.0 / n.max(1) as f64;

    let (targets, weights) = cls_targets(assignment, gts, rows, num_classes, w.focal_alpha_t);
    let cls_sum = focal_loss_sum(tape, cls_logits, &targets, &weights, w.focal_gamma);
    let cls = tape.scale(cls_sum, norm);

    let (reg, iou) = if n == 0 {
        (tape.constant_scalar(0.0), tape.constant_scalar(0.0))
    } else {
        let pos: Vec<(usize, usize)> = assignment.positives().collect();
        let idx: Vec<usize> = pos.iter().map(|&(s, _)| s).collect();
        let pos_locs: Vec<Point> = idx.iter().map(|&s| locations[s]).collect();
        let gt_boxes: Vec<BBox> = pos.iter().map(|&(_, g)| gts[g].bbox).collect();

        let pred_pos = tape.select_rows(ltrb, &idx);

        // L1 on image-size-normalized distances.
        let mut target_data = Vec::with_capacity(idx.len() * 4);
        for (&slot, gt_box) in idx.iter().zip(&gt_boxes) {
            let d = crate::geometry::ltrb_encode(locations[slot], gt_box);
            target_data.extend_from_slice(&[d.left, d.top, d.right, d.bottom]);
        }
        let target =
            tape.constant(Tensor::new(vec![idx.len(), 4], target_data));
        let pred_scaled = tape.scale(pred_pos, 1.0 / image_size);
        let target_scaled = tape.scale(target, 1.0 / image_size);
        let diff = tape.sub(pred_scaled, target_scaled);
        let abs = tape.abs(diff);
        let l1_sum = tape.sum(abs);
        let reg = tape.scale(l1_sum, norm / 4.0);

        let giou_sum = giou_loss_sum(tape, pred_pos, &pos_locs, &gt_boxes);
        let iou = tape.scale(giou_sum, norm);
        (reg, iou)
    };

    let wc = tape.scale(cls, w.alpha_cls);
    let wr = tape.scale(reg, w.alpha_reg);
    let wi = tape.scale(iou, w.alpha_iou);
    let partial = tape.add(wc, wr);
    let total = tape.add(partial, wi);
    BranchLoss {
        total,
        cls,
        reg,
        aux: iou,
    }
}

/// One-to-many branch loss:
/// `beta_cls * cls + beta_reg * reg + beta_ctr * ctr`, same normalization
/// scheme as the one-to-one branch. The regression term follows the branch
/// it imitates: GIoU for FCOS, image-size-normalized L1 for RetinaNet.
/// Ignored anchors are excluded from the classification sum; the center-ness
/// term exists only for the FCOS style and is exactly 0 otherwise.
#[allow(clippy::too_many_arguments)]
pub fn branch_loss_o2m(
    tape: &mut Tape,
    cls_logits: Var,
    ltrb: Var,
    centerness_logits: Option<Var>,
    slot_locations: &[Point],
    assignment: &AssignmentResult,
    gts: &[GroundTruth],
    w: &LossWeights,
    style: O2mStyle,
    image_size: f64,
) -> Result<BranchLoss, LossError> {
    let rows = slot_locations.len();
    let num_classes = tape.value(cls_logits).shape()[1];
    let n = assignment.positive_count;
    let norm = 1.0 / n.max(1) as f64;

    if style == O2mStyle::Fcos
        && (centerness_logits.is_none() || assignment.centerness.is_none())
    {
        return Err(LossError::MissingCenterness);
    }

    let (targets, weights) = cls_targets(assignment, gts, rows, num_classes, w.focal_alpha_t);
    let cls_sum = focal_loss_sum(tape, cls_logits, &targets, &weights, w.focal_gamma);
    let cls = tape.scale(cls_sum, norm);

    let (reg, ctr) = if n == 0 {
        (tape.constant_scalar(0.0), tape.constant_scalar(0.0))
    } else {
        let pos: Vec<(usize, usize)> = assignment.positives().collect();
        let idx: Vec<usize> = pos.iter().map(|&(s, _)| s).collect();
        let pos_locs: Vec<Point> = idx.iter().map(|&s| slot_locations[s]).collect();
        let gt_boxes: Vec<BBox> = pos.iter().map(|&(_, g)| gts[g].bbox).collect();
        let pred_pos = tape.select_rows(ltrb, &idx);

        let reg = match style {
            O2mStyle::Fcos => {
                let giou_sum = giou_loss_sum(tape, pred_pos, &pos_locs, &gt_boxes);
                tape.scale(giou_sum, norm)
            }
            O2mStyle::Retina => {
                let mut target_data = Vec::with_capacity(idx.len() * 4);
                for (loc, gt_box) in pos_locs.iter().zip(&gt_boxes) {
                    let d = crate::geometry::ltrb_encode(*loc, gt_box);
                    target_data.extend_from_slice(&[d.left, d.top, d.right, d.bottom]);
                }
                let target = tape.constant(Tensor::new(vec![idx.len(), 4], target_data));
                let pred_scaled = tape.scale(pred_pos, 1.0 / image_size);
                let target_scaled = tape.scale(target, 1.0 / image_size);
                let diff = tape.sub(pred_scaled, target_scaled);
                let abs = tape.abs(diff);
                let l1_sum = tape.sum(abs);
                tape.scale(l1_sum, norm / 4.0)
            }
        };

        let ctr = match style {
            O2mStyle::Fcos => {
                let ctr_logits = centerness_logits.unwrap();
                let ctr_pos = tape.select_rows(ctr_logits, &idx);
                let ctr_targets = assignment.centerness.as_ref().unwrap();
                let t = Tensor::new(
                    vec![idx.len(), 1],
                    idx.iter().map(|&s| ctr_targets[s]).collect(),
                );
                let bce = bce_loss_sum(tape, ctr_pos, &t);
                tape.scale(bce, norm)
            }
            O2mStyle::Retina => tape.constant_scalar(0.0),
        };
        (reg, ctr)
    };

    let beta_ctr = match style {
        O2mStyle::Fcos => w.beta_ctr,
        O2mStyle::Retina => 0.0,
    };
    let wc = tape.scale(cls, w.beta_cls);
    let wr = tape.scale(reg, w.beta_reg);
    let wt = tape.scale(ctr, beta_ctr);
    let partial = tape.add(wc, wr);
    let total = tape.add(partial, wt);
    Ok(BranchLoss {
        total,
        cls,
        reg,
        aux: ctr,
    })
}

/// Graph form of Eq.-style dual combination. Skipped branches contribute
/// nothing to the graph, making the lambda = 0 degeneration literal.
pub fn dual_loss_var(
    tape: &mut Tape,
    l_o2o: Option<Var>,
    l_o2m: Option<Var>,
    w: &LossWeights,
) -> Var {
    match (l_o2o, l_o2m) {
        (Some(a), Some(b)) => {
            let wa = tape.scale(a, w.lambda_o2o);
            let wb = tape.scale(b, w.lambda_o2m);
            tape.add(wa, wb)
        }
        (Some(a), None) => tape.scale(a, w.lambda_o2o),
        (None, Some(b)) => tape.scale(b, w.lambda_o2m),
        (None, None) => tape.constant_scalar(0.0),
    }
}
