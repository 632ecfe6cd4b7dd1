//! Dual-assignment training for end-to-end, NMS-free convolutional
//! detection at desk scale.
//!
//! The crate trains a toy fully convolutional detector on procedurally
//! generated scenes with two label-assignment branches at once: a
//! one-to-one branch (exact Hungarian matching under a POTO quality) that
//! enables duplicate-free inference without NMS, and a one-to-many branch
//! (FCOS- or RetinaNet-style) that supplies the dense supervision the
//! one-to-one branch lacks. The two branch losses are combined by a
//! weighted sum; only the one-to-one head is kept for inference.

pub mod assignment;
pub mod geometry;
pub mod losses;
pub mod detector;
pub mod evaluator;
pub mod pareto;
pub mod postprocess;
pub mod scenegen;
pub mod tensor;

pub use assignment::{
    assign_o2m_fcos, assign_o2m_retina, assign_o2o, generate_anchors, hungarian, AnchorConfig,
    AssignmentResult, CostMatrix, FcosAssignerConfig, Matching, O2OAssignerConfig, SampleLabel,
};
pub use geometry::{BBox, Ltrb, Point};
pub use losses::{LossReport, LossWeights, O2mStyle};
pub use scenegen::{Dataset, GroundTruth, Scene, SceneConfig};
pub use tensor::{grad_check, Tape, Tensor, Var};
