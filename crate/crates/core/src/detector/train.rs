//! The training loop wiring both assignments together: forward, per-image
//! assignment, branch losses, the weighted dual loss, backward and the
//! AdamW update. One trainer owns one model and one thread; parallelism
//! happens across independent runs.

use super::{AdamW, DetectorError, HeadKind, Model, OptimizerConfig};
use crate::assignment::{
    assign_o2m_fcos, assign_o2m_retina, assign_o2o, generate_anchors, AnchorConfig,
    FcosAssignerConfig, O2OAssignerConfig, O2oCandidates,
};
use crate::evaluator::{evaluate, EvalResult};
use crate::geometry::{ltrb_decode, BBox, Ltrb, Point};
use crate::losses::{
    branch_loss_o2m, branch_loss_o2o, dual_loss_var, LossReport, LossWeights, O2mStyle,
};
use crate::postprocess::{nms, select_topk, ScoreMode};
use crate::scenegen::{Dataset, GroundTruth};
use crate::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Step learning-rate decay at fractions of the total iteration budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    /// Fractions of the run at which the rate drops.
    pub milestones: Vec<f64>,
    pub factor: f64,
}

impl StepDecay {
    /// The classic two-drop schedule (at 8/12 and 11/12 of the run).
    pub fn one_x() -> Self {
        Self {
            milestones: vec![8.0 / 12.0, 11.0 / 12.0],
            factor: 0.1,
        }
    }

    fn scale_at(&self, iter: usize, total: usize) -> f64 {
        let progress = iter as f64 / total.max(1) as f64;
        let drops = self.milestones.iter().filter(|&&m| progress >= m).count();
        self.factor.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Seeds batch sampling; model initialization is seeded separately by
    /// the caller (conventionally with the same value).
    pub seed: u64,
    pub weights: LossWeights,
    pub o2o_assigner: O2OAssignerConfig,
    pub fcos_assigner: FcosAssignerConfig,
    pub anchor_config: AnchorConfig,
    pub optimizer: OptimizerConfig,
    pub lr_decay: Option<StepDecay>,
    /// Evaluate the one-to-one head on the eval set every this many
    /// iterations (0 disables snapshots).
    pub eval_interval: usize,
    pub eval_topk: usize,
}

impl TrainConfig {
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self {
            iterations,
            batch_size: 4,
            seed,
            weights: LossWeights::dual_fcos(),
            o2o_assigner: O2OAssignerConfig::default(),
            fcos_assigner: FcosAssignerConfig::two_level_default(),
            anchor_config: AnchorConfig::two_level_default(),
            optimizer: OptimizerConfig::default(),
            lr_decay: None,
            eval_interval: 0,
            eval_topk: 100,
        }
    }
}

/// Everything observable about one optimization step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: usize,
    pub report: LossReport,
    pub gt_count: usize,
    pub o2o_positives: usize,
    pub o2o_duplicate_free: bool,
    pub o2m_positives: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub iter: usize,
    pub result: EvalResult,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub history: Vec<StepRecord>,
    pub evals: Vec<EvalSnapshot>,
}

/// The graph and bookkeeping of one step, before the optimizer runs.
struct StepComputation {
    tape: Tape,
    loss: Var,
    param_vars: Vec<Var>,
    report: LossReport,
    gt_count: usize,
    o2o_positives: usize,
    o2o_duplicate_free: bool,
    o2m_positives: usize,
}

fn decode_boxes(ltrb: &Tensor, locations: &[Point]) -> Vec<BBox> {
    let d = ltrb.data();
    locations
        .iter()
        .enumerate()
        .map(|(i, p)| {
            ltrb_decode(
                *p,
                &Ltrb::new(d[i * 4], d[i * 4 + 1], d[i * 4 + 2], d[i * 4 + 3]),
            )
        })
        .collect()
}

fn sigmoid_values(logits: &Tensor) -> Vec<f64> {
    logits.data().iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect()
}

/// Forward + assignment + losses for one batch. Branches with zero lambda
/// are skipped entirely, making the weighted-sum degeneration literal.
fn training_forward(
    model: &Model,
    batch: &[(Tensor, Vec<GroundTruth>)],
    cfg: &TrainConfig,
    grids: &[Vec<Point>],
    anchors: &[BBox],
) -> Result<StepComputation, DetectorError> {
    let need_o2o = cfg.weights.lambda_o2o > 0.0 && model.config.has_o2o();
    let need_o2m = cfg.weights.lambda_o2m > 0.0 && model.config.has_o2m();
    let image_size = model.config.input_size as f64;
    let b = batch.len();
    let inv_b = 1.0 / b as f64;

    let mut tape = Tape::new();
    let param_vars = model.insert_params(&mut tape);

    let mut o2o_totals: Vec<Var> = Vec::new();
    let mut o2m_totals: Vec<Var> = Vec::new();
    let mut report = LossReport::default();
    let mut gt_count = 0;
    let mut o2o_positives = 0;
    let mut o2o_duplicate_free = true;
    let mut o2m_positives = 0;

    for (image, gts) in batch {
        let fwd = model.forward(&mut tape, &param_vars, image);
        gt_count += gts.len();

        if need_o2o {
            let flat = model
                .flatten_branch(&mut tape, &fwd, HeadKind::O2o)
                .expect("o2o head present");
            let probs = sigmoid_values(tape.value(flat.cls_logits));
            let boxes = decode_boxes(tape.value(flat.ltrb), &flat.slot_locations);
            let assignment = assign_o2o(
                &O2oCandidates {
                    cls_probs: &probs,
                    boxes: &boxes,
                    locations: &flat.slot_locations,
                    num_classes: model.config.num_classes,
                },
                gts,
                &cfg.o2o_assigner,
            )?;
            o2o_positives += assignment.positive_count;
            if assignment.positive_count != gts.len() {
                o2o_duplicate_free = false;
            }
            let mut slots: Vec<usize> = assignment.positives().map(|(s, _)| s).collect();
            slots.sort_unstable();
            slots.dedup();
            if slots.len() != assignment.positive_count {
                o2o_duplicate_free = false;
            }

            let branch = branch_loss_o2o(
                &mut tape,
                flat.cls_logits,
                flat.ltrb,
                &flat.slot_locations,
                &assignment,
                gts,
                &cfg.weights,
                image_size,
            );
            report.l_o2o_cls += tape.value(branch.cls).item() * inv_b;
            report.l_o2o_reg += tape.value(branch.reg).item() * inv_b;
            report.l_o2o_iou += tape.value(branch.aux).item() * inv_b;
            o2o_totals.push(branch.total);
        }

        if need_o2m {
            let flat = model
                .flatten_branch(&mut tape, &fwd, HeadKind::O2m)
                .expect("o2m head present");
            let assignment = match model.config.o2m_style {
                O2mStyle::Fcos => assign_o2m_fcos(grids, gts, &cfg.fcos_assigner)?,
                O2mStyle::Retina => assign_o2m_retina(anchors, gts, &cfg.anchor_config)?,
            };
            o2m_positives += assignment.positive_count;
            let branch = branch_loss_o2m(
                &mut tape,
                flat.cls_logits,
                flat.ltrb,
                flat.centerness,
                &flat.slot_locations,
                &assignment,
                gts,
                &cfg.weights,
                model.config.o2m_style,
                image_size,
            )?;
            report.l_o2m_cls += tape.value(branch.cls).item() * inv_b;
            report.l_o2m_reg += tape.value(branch.reg).item() * inv_b;
            report.l_o2m_ctr += tape.value(branch.aux).item() * inv_b;
            o2m_totals.push(branch.total);
        }
    }

    let mean = |tape: &mut Tape, parts: Vec<Var>| -> Option<Var> {
        let mut iter = parts.into_iter();
        let first = iter.next()?;
        let sum = iter.fold(first, |acc, v| tape.add(acc, v));
        Some(tape.scale(sum, inv_b))
    };
    let l_o2o = mean(&mut tape, o2o_totals);
    let l_o2m = mean(&mut tape, o2m_totals);
    let loss = dual_loss_var(&mut tape, l_o2o, l_o2m, &cfg.weights);

    report.l_o2o = l_o2o.map_or(0.0, |v| tape.value(v).item());
    report.l_o2m = l_o2m.map_or(0.0, |v| tape.value(v).item());
    report.l_da = tape.value(loss).item();

    Ok(StepComputation {
        tape,
        loss,
        param_vars,
        report,
        gt_count,
        o2o_positives,
        o2o_duplicate_free,
        o2m_positives,
    })
}

/// Owns one model, one optimizer and the datasets of one training run.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    opt: AdamW,
    train_data: Dataset,
    eval_data: Option<Dataset>,
    grids: Vec<Vec<Point>>,
    anchors: Vec<BBox>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        model: Model,
        config: TrainConfig,
        train_data: Dataset,
        eval_data: Option<Dataset>,
    ) -> Result<Self, DetectorError> {
        if train_data.is_empty() {
            return Err(DetectorError::InvalidConfig("empty training dataset".into()));
        }
        if train_data.config.image_size != model.config.input_size {
            return Err(DetectorError::InvalidConfig(format!(
                "dataset image size {} vs model input size {}",
                train_data.config.image_size, model.config.input_size
            )));
        }
        if train_data.config.num_classes > model.config.num_classes {
            return Err(DetectorError::InvalidConfig(format!(
                "dataset has {} classes, model only {}",
                train_data.config.num_classes, model.config.num_classes
            )));
        }
        if config.batch_size == 0 || config.iterations == 0 {
            return Err(DetectorError::InvalidConfig(
                "batch size and iterations must be positive".into(),
            ));
        }
        let grids = model.config.level_grids();
        if model.config.has_o2m() && model.config.o2m_style == O2mStyle::Fcos {
            config.fcos_assigner.validate()?;
            if config.fcos_assigner.ranges.len() != grids.len() {
                return Err(DetectorError::InvalidConfig(format!(
                    "{} regression ranges for {} pyramid levels",
                    config.fcos_assigner.ranges.len(),
                    grids.len()
                )));
            }
        }
        let anchors = if model.config.has_o2m() && model.config.o2m_style == O2mStyle::Retina {
            config.anchor_config.validate()?;
            if config.anchor_config.anchors_per_location() != model.config.anchors_per_loc {
                return Err(DetectorError::InvalidConfig(format!(
                    "anchor config yields {} anchors per location, model expects {}",
                    config.anchor_config.anchors_per_location(),
                    model.config.anchors_per_loc
                )));
            }
            generate_anchors(&grids, &config.anchor_config)
        } else {
            Vec::new()
        };
        let opt = AdamW::new(config.optimizer, model.params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            opt,
            train_data,
            eval_data,
            grids,
            anchors,
            rng,
        })
    }

    fn sample_batch(&mut self) -> Vec<(Tensor, Vec<GroundTruth>)> {
        (0..self.config.batch_size)
            .map(|_| {
                let idx = self.rng.gen_range(0..self.train_data.len());
                (
                    self.train_data.render(idx),
                    self.train_data.entries[idx].gts.clone(),
                )
            })
            .collect()
    }

    /// One optimization step: forward, assign, losses, backward, update.
    pub fn step(&mut self, iter: usize) -> Result<StepRecord, DetectorError> {
        let batch = self.sample_batch();
        let comp = training_forward(&self.model, &batch, &self.config, &self.grids, &self.anchors)?;
        let grads = comp.tape.backward(comp.loss);
        let grad_refs: Vec<Option<&Tensor>> =
            comp.param_vars.iter().map(|&v| grads.get(v)).collect();
        let lr_scale = self
            .config
            .lr_decay
            .as_ref()
            .map_or(1.0, |d| d.scale_at(iter, self.config.iterations));
        self.opt.step(self.model.params_mut(), &grad_refs, lr_scale);
        Ok(StepRecord {
            iter,
            report: comp.report,
            gt_count: comp.gt_count,
            o2o_positives: comp.o2o_positives,
            o2o_duplicate_free: comp.o2o_duplicate_free,
            o2m_positives: comp.o2m_positives,
        })
    }

    /// Runs the configured iteration budget, recording per-step losses and
    /// periodic one-to-one-head evaluations.
    pub fn run(&mut self) -> Result<TrainOutcome, DetectorError> {
        let mut outcome = TrainOutcome::default();
        for iter in 0..self.config.iterations {
            outcome.history.push(self.step(iter)?);
            let due = self.config.eval_interval > 0
                && (iter + 1) % self.config.eval_interval == 0;
            if due {
                if let Some(eval) = &self.eval_data {
                    let result = evaluate_model(
                        &self.model,
                        eval,
                        HeadKind::O2o,
                        None,
                        self.config.eval_topk,
                    )?;
                    outcome.evals.push(EvalSnapshot {
                        iter: iter + 1,
                        result,
                    });
                }
            }
        }
        Ok(outcome)
    }
}

/// Full-dataset evaluation of one head, optionally through class-aware NMS.
pub fn evaluate_model(
    model: &Model,
    data: &Dataset,
    head: HeadKind,
    nms_threshold: Option<f64>,
    topk: usize,
) -> Result<EvalResult, DetectorError> {
    let mut dets_per_image = Vec::with_capacity(data.len());
    let mut gts_per_image = Vec::with_capacity(data.len());
    for (idx, entry) in data.entries.iter().enumerate() {
        let image = data.render(idx);
        let cands = model.predict(&image, head)?;
        let mode = if cands.ctr_logits.is_some() {
            ScoreMode::ClsTimesCtr
        } else {
            ScoreMode::Cls
        };
        let mut dets = select_topk(&cands, topk, 0.0, mode);
        if let Some(thr) = nms_threshold {
            dets = nms(&dets, thr, true);
        }
        dets_per_image.push(dets);
        gts_per_image.push(entry.gts.clone());
    }
    Ok(evaluate(&dets_per_image, &gts_per_image, topk)?)
}
