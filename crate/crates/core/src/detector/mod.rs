//! The toy detector: a small stride-2 conv trunk feeding a two-level
//! feature pyramid, shared classification/regression subnets, and two
//! prediction branches — a one-to-one head (kept for inference) and a
//! one-to-many head (FCOS- or RetinaNet-style, dropped after training).
//!
//! Everything is double precision and deterministic in the seed.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_SCHEMA};
pub use optim::{AdamW, OptimizerConfig};
pub use train::{
    evaluate_model, EvalSnapshot, StepDecay, StepRecord, TrainConfig, TrainOutcome, Trainer,
};

use crate::assignment::AssignError;
use crate::evaluator::EvalError;
use crate::geometry::{ltrb_decode, Ltrb, Point};
use crate::losses::{LossError, O2mStyle};
use crate::postprocess::HeadCandidates;
use crate::scenegen::ScenegenError;
use crate::tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Classification head bias for an initial foreground probability of 0.01.
const PRIOR_PROB: f64 = 0.01;

/// Regression raw outputs are clamped here before `exp`; keeps boxes finite
/// even under pathological weights.
const REG_RAW_LIMIT: f64 = 10.0;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint has no {head} head")]
    HeadAbsent { head: &'static str },
    #[error("unsupported checkpoint schema {found} (expected {expected})")]
    CheckpointSchema { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Scene(#[from] ScenegenError),
}

/// Which prediction branches a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSet {
    Both,
    O2oOnly,
    O2mOnly,
}

/// Which head to read at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    O2o,
    O2m,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square input side; must be divisible by every stride.
    pub input_size: usize,
    pub in_channels: usize,
    /// Channels after each stride-2 trunk conv; the last entry must equal
    /// `subnet_channels` and the length must be log2 of the first stride.
    pub trunk_channels: Vec<usize>,
    /// Pyramid strides, each double the previous.
    pub strides: Vec<usize>,
    pub subnet_depth: usize,
    pub subnet_channels: usize,
    pub num_classes: usize,
    pub o2m_style: O2mStyle,
    /// 1 for FCOS-style; ratios x scales for the anchor-based style.
    pub anchors_per_loc: usize,
    /// Share the two subnets between branches (the default); separate
    /// subnets add parameters but can score higher.
    pub share_subnets: bool,
    pub heads: HeadSet,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            in_channels: 1,
            trunk_channels: vec![12, 24, 48],
            strides: vec![8, 16],
            subnet_depth: 2,
            subnet_channels: 48,
            num_classes: 3,
            o2m_style: O2mStyle::Fcos,
            anchors_per_loc: 1,
            share_subnets: true,
            heads: HeadSet::Both,
        }
    }
}

impl ModelConfig {
    /// Smallest config that still exercises every code path; for gradient
    /// checks and fast tests. One 8x8 level on a 16x16 input.
    pub fn tiny() -> Self {
        Self {
            input_size: 16,
            trunk_channels: vec![4, 6],
            strides: vec![4],
            subnet_depth: 1,
            subnet_channels: 6,
            num_classes: 2,
            ..Self::default()
        }
    }

    pub fn retina(anchors_per_loc: usize) -> Self {
        Self {
            o2m_style: O2mStyle::Retina,
            anchors_per_loc,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let err = |m: String| Err(DetectorError::InvalidConfig(m));
        if self.strides.is_empty() {
            return err("at least one pyramid level required".into());
        }
        let s0 = self.strides[0];
        if !s0.is_power_of_two() || s0 < 2 {
            return err(format!("first stride {s0} must be a power of two >= 2"));
        }
        for w in self.strides.windows(2) {
            if w[1] != 2 * w[0] {
                return err(format!("strides must double per level, got {:?}", self.strides));
            }
        }
        for &s in &self.strides {
            if self.input_size % s != 0 {
                return err(format!("stride {s} does not divide input size {}", self.input_size));
            }
        }
        let trunk_convs = s0.trailing_zeros() as usize;
        if self.trunk_channels.len() != trunk_convs {
            return err(format!(
                "{} trunk channels given but stride {} needs {} stride-2 convs",
                self.trunk_channels.len(),
                s0,
                trunk_convs
            ));
        }
        if *self.trunk_channels.last().unwrap() != self.subnet_channels {
            return err("last trunk channel count must equal subnet_channels".into());
        }
        if self.num_classes == 0 {
            return err("need at least one class".into());
        }
        if self.subnet_depth == 0 {
            return err("subnets need at least one conv".into());
        }
        if self.anchors_per_loc == 0 {
            return err("anchors_per_loc must be >= 1".into());
        }
        if self.o2m_style == O2mStyle::Fcos && self.anchors_per_loc != 1 {
            return err("FCOS-style branch predicts one box per location".into());
        }
        Ok(())
    }

    pub fn has_o2o(&self) -> bool {
        matches!(self.heads, HeadSet::Both | HeadSet::O2oOnly)
    }

    pub fn has_o2m(&self) -> bool {
        matches!(self.heads, HeadSet::Both | HeadSet::O2mOnly)
    }

    /// Grid side length per level.
    pub fn grid_sizes(&self) -> Vec<usize> {
        self.strides.iter().map(|s| self.input_size / s).collect()
    }

    /// Head locations per level, row-major, at cell centers.
    pub fn level_grids(&self) -> Vec<Vec<Point>> {
        self.strides
            .iter()
            .map(|&stride| {
                let cells = self.input_size / stride;
                let half = stride as f64 / 2.0;
                let mut points = Vec::with_capacity(cells * cells);
                for y in 0..cells {
                    for x in 0..cells {
                        points.push(Point::new(
                            x as f64 * stride as f64 + half,
                            y as f64 * stride as f64 + half,
                        ));
                    }
                }
                points
            })
            .collect()
    }

    /// Total location count over all levels.
    pub fn total_locations(&self) -> usize {
        self.grid_sizes().iter().map(|g| g * g).sum()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layers {
    trunk: Vec<ConvLayer>,
    downsample: Vec<ConvLayer>,
    cls_subnet: Vec<ConvLayer>,
    reg_subnet: Vec<ConvLayer>,
    /// Separate one-to-many subnets when subnets are not shared.
    o2m_cls_subnet: Option<Vec<ConvLayer>>,
    o2m_reg_subnet: Option<Vec<ConvLayer>>,
    o2o_cls: Option<ConvLayer>,
    o2o_reg: Option<ConvLayer>,
    o2m_cls: Option<ConvLayer>,
    o2m_reg: Option<ConvLayer>,
    o2m_ctr: Option<ConvLayer>,
}

/// The detector: a config, a flat parameter store and the layer wiring.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    params: Vec<Tensor>,
    names: Vec<String>,
    layers: Layers,
}

/// Builds and initializes a model deterministically from a seed.
/// Classification output biases start at `ln(p/(1-p))` with p = 0.01 so the
/// initial foreground probability is small.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model, DetectorError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<Tensor> = Vec::new();
    let mut names: Vec<String> = Vec::new();

    let prior_bias = (PRIOR_PROB / (1.0 - PRIOR_PROB)).ln();
    let add_conv = |name: &str,
                        c_in: usize,
                        c_out: usize,
                        k: usize,
                        stride: usize,
                        padding: usize,
                        head_init: bool,
                        bias_init: f64,
                        rng: &mut ChaCha8Rng,
                        params: &mut Vec<Tensor>,
                        names: &mut Vec<String>|
     -> ConvLayer {
        let fan_in = (c_in * k * k) as f64;
        let std = if head_init {
            0.01
        } else {
            (2.0 / fan_in).sqrt()
        };
        let normal = Normal::new(0.0, std).unwrap();
        let w: Vec<f64> = (0..c_out * c_in * k * k)
            .map(|_| normal.sample(rng))
            .collect();
        params.push(Tensor::new(vec![c_out, c_in, k, k], w));
        names.push(format!("{name}.weight"));
        params.push(Tensor::new(vec![c_out], vec![bias_init; c_out]));
        names.push(format!("{name}.bias"));
        ConvLayer {
            weight: params.len() - 2,
            bias: params.len() - 1,
            stride,
            padding,
        }
    };

    let c = cfg.subnet_channels;
    let mut trunk = Vec::new();
    let mut prev = cfg.in_channels;
    for (i, &ch) in cfg.trunk_channels.iter().enumerate() {
        trunk.push(add_conv(
            &format!("trunk.{i}"),
            prev,
            ch,
            3,
            2,
            1,
            false,
            0.0,
            &mut rng,
            &mut params,
            &mut names,
        ));
        prev = ch;
    }
    let mut downsample = Vec::new();
    for i in 1..cfg.strides.len() {
        downsample.push(add_conv(
            &format!("downsample.{i}"),
            c,
            c,
            3,
            2,
            1,
            false,
            0.0,
            &mut rng,
            &mut params,
            &mut names,
        ));
    }

    let subnet = |name: &str, rng: &mut ChaCha8Rng, params: &mut Vec<Tensor>, names: &mut Vec<String>| {
        (0..cfg.subnet_depth)
            .map(|i| {
                add_conv(
                    &format!("{name}.{i}"),
                    c,
                    c,
                    3,
                    1,
                    1,
                    false,
                    0.0,
                    rng,
                    params,
                    names,
                )
            })
            .collect::<Vec<_>>()
    };
    let cls_subnet = subnet("cls_subnet", &mut rng, &mut params, &mut names);
    let reg_subnet = subnet("reg_subnet", &mut rng, &mut params, &mut names);
    let (o2m_cls_subnet, o2m_reg_subnet) = if !cfg.share_subnets && cfg.has_o2m() && cfg.has_o2o()
    {
        (
            Some(subnet("o2m_cls_subnet", &mut rng, &mut params, &mut names)),
            Some(subnet("o2m_reg_subnet", &mut rng, &mut params, &mut names)),
        )
    } else {
        (None, None)
    };

    let (o2o_cls, o2o_reg) = if cfg.has_o2o() {
        (
            Some(add_conv("o2o_cls", c, cfg.num_classes, 3, 1, 1, true, prior_bias, &mut rng, &mut params, &mut names)),
            Some(add_conv("o2o_reg", c, 4, 3, 1, 1, true, 0.0, &mut rng, &mut params, &mut names)),
        )
    } else {
        (None, None)
    };
    let (o2m_cls, o2m_reg, o2m_ctr) = if cfg.has_o2m() {
        let a = cfg.anchors_per_loc;
        let cls = add_conv("o2m_cls", c, a * cfg.num_classes, 3, 1, 1, true, prior_bias, &mut rng, &mut params, &mut names);
        let reg = add_conv("o2m_reg", c, a * 4, 3, 1, 1, true, 0.0, &mut rng, &mut params, &mut names);
        let ctr = match cfg.o2m_style {
            O2mStyle::Fcos => Some(add_conv("o2m_ctr", c, 1, 3, 1, 1, true, 0.0, &mut rng, &mut params, &mut names)),
            O2mStyle::Retina => None,
        };
        (Some(cls), Some(reg), ctr)
    } else {
        (None, None, None)
    };

    Ok(Model {
        config: cfg.clone(),
        params,
        names,
        layers: Layers {
            trunk,
            downsample,
            cls_subnet,
            reg_subnet,
            o2m_cls_subnet,
            o2m_reg_subnet,
            o2o_cls,
            o2o_reg,
            o2m_cls,
            o2m_reg,
            o2m_ctr,
        },
    })
}

/// One head's graph outputs for one pyramid level.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// `[slots, K]` class logits.
    pub cls_logits: Var,
    /// `[slots, 4]` decoded pixel distances (already through exp * stride).
    pub ltrb: Var,
    /// `[locations, 1]` center-ness logits, FCOS-style one-to-many only.
    pub centerness: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct LevelVars {
    pub stride: usize,
    pub locations: Vec<Point>,
    pub o2o: Option<HeadVars>,
    pub o2m: Option<HeadVars>,
}

/// Graph handles of one image's forward pass.
#[derive(Debug, Clone)]
pub struct ImageForward {
    pub levels: Vec<LevelVars>,
}

/// A branch's predictions flattened across levels, plus per-slot locations;
/// the shape assignment and losses operate on.
#[derive(Debug, Clone)]
pub struct FlatBranch {
    pub cls_logits: Var,
    pub ltrb: Var,
    pub centerness: Option<Var>,
    pub slot_locations: Vec<Point>,
    pub anchors_per_loc: usize,
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Parameter count of the named head's exclusive layers.
    pub fn head_param_count(&self, head: HeadKind) -> usize {
        let convs: Vec<Option<&ConvLayer>> = match head {
            HeadKind::O2o => vec![self.layers.o2o_cls.as_ref(), self.layers.o2o_reg.as_ref()],
            HeadKind::O2m => vec![
                self.layers.o2m_cls.as_ref(),
                self.layers.o2m_reg.as_ref(),
                self.layers.o2m_ctr.as_ref(),
            ],
        };
        let mut count: usize = convs
            .iter()
            .flatten()
            .map(|cl| self.params[cl.weight].len() + self.params[cl.bias].len())
            .sum();
        for subnet in [&self.layers.o2m_cls_subnet, &self.layers.o2m_reg_subnet] {
            if head == HeadKind::O2m {
                if let Some(list) = subnet {
                    count += list
                        .iter()
                        .map(|cl| self.params[cl.weight].len() + self.params[cl.bias].len())
                        .sum::<usize>();
                }
            }
        }
        count
    }

    /// Registers all parameters on a tape as differentiable leaves.
    pub fn insert_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    fn apply_conv(&self, tape: &mut Tape, pvars: &[Var], layer: &ConvLayer, x: Var) -> Var {
        tape.conv2d(x, pvars[layer.weight], pvars[layer.bias], layer.stride, layer.padding)
    }

    fn apply_subnet(&self, tape: &mut Tape, pvars: &[Var], layers: &[ConvLayer], mut x: Var) -> Var {
        for layer in layers {
            x = self.apply_conv(tape, pvars, layer, x);
            x = tape.relu(x);
        }
        x
    }

    /// `[C, h, w]` feature map to `[h*w, C]` rows (row-major locations).
    fn to_rows(&self, tape: &mut Tape, x: Var) -> Var {
        let shape = tape.value(x).shape().to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let r = tape.reshape(x, vec![c, h * w]);
        tape.transpose(r)
    }

    /// Clamp, exp, scale by stride: raw regression outputs to pixel distances.
    fn decode_ltrb(&self, tape: &mut Tape, raw: Var, stride: usize) -> Var {
        let clamped = tape.clamp(raw, -REG_RAW_LIMIT, REG_RAW_LIMIT);
        let e = tape.exp(clamped);
        tape.scale(e, stride as f64)
    }

    /// Forward pass of one image (shape `[in_channels, H, W]`).
    pub fn forward(&self, tape: &mut Tape, pvars: &[Var], image: &Tensor) -> ImageForward {
        assert_eq!(
            image.shape(),
            &[self.config.in_channels, self.config.input_size, self.config.input_size],
            "image shape mismatch"
        );
        let grids = self.config.level_grids();
        let mut x = tape.constant(image.clone());
        for conv in &self.layers.trunk {
            x = self.apply_conv(tape, pvars, conv, x);
            x = tape.relu(x);
        }
        let mut feats = vec![x];
        for conv in &self.layers.downsample {
            let d = self.apply_conv(tape, pvars, conv, *feats.last().unwrap());
            feats.push(tape.relu(d));
        }

        let k = self.config.num_classes;
        let a = self.config.anchors_per_loc;
        let mut levels = Vec::with_capacity(feats.len());
        for (li, feat) in feats.iter().enumerate() {
            let stride = self.config.strides[li];
            let cls_f = self.apply_subnet(tape, pvars, &self.layers.cls_subnet, *feat);
            let reg_f = self.apply_subnet(tape, pvars, &self.layers.reg_subnet, *feat);

            let o2o = match (&self.layers.o2o_cls, &self.layers.o2o_reg) {
                (Some(cls), Some(reg)) => {
                    let logits_map = self.apply_conv(tape, pvars, cls, cls_f);
                    let cls_logits = self.to_rows(tape, logits_map);
                    let reg_map = self.apply_conv(tape, pvars, reg, reg_f);
                    let raw = self.to_rows(tape, reg_map);
                    let ltrb = self.decode_ltrb(tape, raw, stride);
                    Some(HeadVars {
                        cls_logits,
                        ltrb,
                        centerness: None,
                    })
                }
                _ => None,
            };

            let o2m = match (&self.layers.o2m_cls, &self.layers.o2m_reg) {
                (Some(cls), Some(reg)) => {
                    let (cls_in, reg_in) = match (&self.layers.o2m_cls_subnet, &self.layers.o2m_reg_subnet) {
                        (Some(cs), Some(rs)) => (
                            self.apply_subnet(tape, pvars, cs, *feat),
                            self.apply_subnet(tape, pvars, rs, *feat),
                        ),
                        _ => (cls_f, reg_f),
                    };
                    let locs = grids[li].len();
                    let logits_map = self.apply_conv(tape, pvars, cls, cls_in);
                    let rows = self.to_rows(tape, logits_map); // [locs, a*K]
                    let cls_logits = tape.reshape(rows, vec![locs * a, k]);
                    let reg_map = self.apply_conv(tape, pvars, reg, reg_in);
                    let rraw = self.to_rows(tape, reg_map); // [locs, a*4]
                    let raw = tape.reshape(rraw, vec![locs * a, 4]);
                    let ltrb = self.decode_ltrb(tape, raw, stride);
                    let centerness = self.layers.o2m_ctr.as_ref().map(|ctr| {
                        let m = self.apply_conv(tape, pvars, ctr, reg_in);
                        self.to_rows(tape, m) // [locs, 1]
                    });
                    Some(HeadVars {
                        cls_logits,
                        ltrb,
                        centerness,
                    })
                }
                _ => None,
            };

            levels.push(LevelVars {
                stride,
                locations: grids[li].clone(),
                o2o,
                o2m,
            });
        }
        ImageForward { levels }
    }

    /// Concatenates one branch across levels into flat `[slots, _]` tensors.
    pub fn flatten_branch(
        &self,
        tape: &mut Tape,
        fwd: &ImageForward,
        head: HeadKind,
    ) -> Option<FlatBranch> {
        let a = match head {
            HeadKind::O2o => 1,
            HeadKind::O2m => self.config.anchors_per_loc,
        };
        let mut cls_parts = Vec::new();
        let mut ltrb_parts = Vec::new();
        let mut ctr_parts = Vec::new();
        let mut slot_locations = Vec::new();
        for level in &fwd.levels {
            let hv = match head {
                HeadKind::O2o => level.o2o.as_ref()?,
                HeadKind::O2m => level.o2m.as_ref()?,
            };
            cls_parts.push(hv.cls_logits);
            ltrb_parts.push(hv.ltrb);
            if let Some(c) = hv.centerness {
                ctr_parts.push(c);
            }
            for p in &level.locations {
                for _ in 0..a {
                    slot_locations.push(*p);
                }
            }
        }
        let cls_logits = tape.concat_rows(&cls_parts);
        let ltrb = tape.concat_rows(&ltrb_parts);
        let centerness = if ctr_parts.len() == fwd.levels.len() {
            Some(tape.concat_rows(&ctr_parts))
        } else {
            None
        };
        Some(FlatBranch {
            cls_logits,
            ltrb,
            centerness,
            slot_locations,
            anchors_per_loc: a,
        })
    }

    /// Removes the other branch's output layers (and its private subnets),
    /// keeping parameter values. The result equals a never-dual model of the
    /// same config in both structure and outputs.
    pub fn strip_branch(&self, keep: HeadKind) -> Model {
        let mut cfg = self.config.clone();
        cfg.heads = match keep {
            HeadKind::O2o => HeadSet::O2oOnly,
            HeadKind::O2m => HeadSet::O2mOnly,
        };
        cfg.share_subnets = true;

        let mut params = Vec::new();
        let mut names = Vec::new();
        let remap = |layer: &ConvLayer, params: &mut Vec<Tensor>, names: &mut Vec<String>| -> ConvLayer {
            params.push(self.params[layer.weight].clone());
            names.push(self.names[layer.weight].clone());
            params.push(self.params[layer.bias].clone());
            names.push(self.names[layer.bias].clone());
            ConvLayer {
                weight: params.len() - 2,
                bias: params.len() - 1,
                stride: layer.stride,
                padding: layer.padding,
            }
        };

        let trunk: Vec<ConvLayer> = self.layers.trunk.iter().map(|l| remap(l, &mut params, &mut names)).collect();
        let downsample: Vec<ConvLayer> = self.layers.downsample.iter().map(|l| remap(l, &mut params, &mut names)).collect();
        // The kept branch's subnets become THE subnets.
        let (cls_src, reg_src) = match (keep, &self.layers.o2m_cls_subnet, &self.layers.o2m_reg_subnet) {
            (HeadKind::O2m, Some(cs), Some(rs)) => (cs.clone(), rs.clone()),
            _ => (self.layers.cls_subnet.clone(), self.layers.reg_subnet.clone()),
        };
        let cls_subnet: Vec<ConvLayer> = cls_src.iter().map(|l| remap(l, &mut params, &mut names)).collect();
        let reg_subnet: Vec<ConvLayer> = reg_src.iter().map(|l| remap(l, &mut params, &mut names)).collect();

        let mut layers = Layers {
            trunk,
            downsample,
            cls_subnet,
            reg_subnet,
            o2m_cls_subnet: None,
            o2m_reg_subnet: None,
            o2o_cls: None,
            o2o_reg: None,
            o2m_cls: None,
            o2m_reg: None,
            o2m_ctr: None,
        };
        match keep {
            HeadKind::O2o => {
                layers.o2o_cls = self.layers.o2o_cls.as_ref().map(|l| remap(l, &mut params, &mut names));
                layers.o2o_reg = self.layers.o2o_reg.as_ref().map(|l| remap(l, &mut params, &mut names));
            }
            HeadKind::O2m => {
                layers.o2m_cls = self.layers.o2m_cls.as_ref().map(|l| remap(l, &mut params, &mut names));
                layers.o2m_reg = self.layers.o2m_reg.as_ref().map(|l| remap(l, &mut params, &mut names));
                layers.o2m_ctr = self.layers.o2m_ctr.as_ref().map(|l| remap(l, &mut params, &mut names));
            }
        }
        Model {
            config: cfg,
            params,
            names,
            layers,
        }
    }

    /// Inference: raw candidates of one head on one image, values only.
    pub fn predict(&self, image: &Tensor, head: HeadKind) -> Result<HeadCandidates, DetectorError> {
        let present = match head {
            HeadKind::O2o => self.config.has_o2o(),
            HeadKind::O2m => self.config.has_o2m(),
        };
        if !present {
            return Err(DetectorError::HeadAbsent {
                head: match head {
                    HeadKind::O2o => "o2o",
                    HeadKind::O2m => "o2m",
                },
            });
        }
        let mut tape = Tape::new();
        // Inference does not differentiate; constants keep the tape light.
        let pvars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let fwd = self.forward(&mut tape, &pvars, image);
        let flat = self
            .flatten_branch(&mut tape, &fwd, head)
            .expect("head presence checked above");

        let cls_logits = tape.value(flat.cls_logits).data().to_vec();
        let ltrb = tape.value(flat.ltrb).data();
        let boxes = flat
            .slot_locations
            .iter()
            .enumerate()
            .map(|(i, p)| {
                ltrb_decode(
                    *p,
                    &Ltrb::new(ltrb[i * 4], ltrb[i * 4 + 1], ltrb[i * 4 + 2], ltrb[i * 4 + 3]),
                )
            })
            .collect();
        let ctr_logits = flat.centerness.map(|c| {
            // Per-location logits replicated per slot.
            let vals = tape.value(c).data();
            let a = flat.anchors_per_loc;
            let mut out = Vec::with_capacity(vals.len() * a);
            for &v in vals {
                for _ in 0..a {
                    out.push(v);
                }
            }
            out
        });
        Ok(HeadCandidates {
            cls_logits,
            boxes,
            ctr_logits,
            num_classes: self.config.num_classes,
        })
    }
}
