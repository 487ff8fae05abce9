//! Semantic-aware block compressed sensing.
//!
//! Images are split into non-overlapping `B x B x 3` blocks. Every block is
//! sensed with a fixed number of base measurements; a policy network looks at
//! those and decides, per block, which rows of a second sensing matrix to add.
//! Reconstruction is a learned linear stage followed by a refinement network.
//! Everything is differentiable through a small reverse-mode tape, so the
//! sensing matrices, policy and decoders are trained jointly.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod error;
pub mod io;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod oracle;
pub mod params;
pub mod policy;
pub mod recon;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;

pub use blocks::{
    average_measurements, average_ratio, merge_blocks, select_rows, sense_base, sense_conv,
    sense_full, sense_matmul, split_blocks, BlockGeometry, BlockMeasurements, MeasurementMatrix,
    MeasurementSet, SensingBank,
};
pub use error::{Error, Result};
pub use kernels::Padding;
pub use model::{
    AnyModel, BcsModel, Decoded, FixBcs, Forward, ForwardOptions, MaskSource, ModelConfig,
    ModelKind, SemBcs, WeightSource,
};
pub use params::{Adam, BoundParams, ParamId, ParamStore};
pub use policy::{apply_mask, binarize, BlockMask, PolicyNet};
pub use recon::{psnr, DeepReconNet, DnetLayout, InitBank, WeightGenNet};
pub use tape::{Tape, Var};
pub use tensor::{ImageTensor, Tensor};
pub use training::{
    calibrate_gamma, evaluate, fit, rd_loss, train, train_calibrated, train_fixbcs, Calibration,
    Dataset, DistortionTarget, EvalStats, RunConfig, TrainReport,
};
