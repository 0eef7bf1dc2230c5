//! Dense numerical kernel: MLPs with explicit backprop, Adam, gradient clipping and a
//! finite-difference checker.

mod adam;
pub mod checkpoint;
mod compute;
mod grad;
mod mlp;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use compute::ComputeRecord;
pub use grad::{clip_grad_norm, clip_grad_norm_joint, finite_diff_check};
pub use mlp::{Activation, ForwardCache, GradBundle, Layer, LayerGrad, MlpParams};

use crate::error::Result;
use std::path::Path;

pub const MLP_CHECKPOINT: &str = "digiq-mlp";

pub fn save_mlp(params: &MlpParams, path: &Path) -> Result<()> {
    checkpoint::save(MLP_CHECKPOINT, params, path)
}

pub fn load_mlp(path: &Path) -> Result<MlpParams> {
    let p: MlpParams = checkpoint::load(MLP_CHECKPOINT, path)?;
    p.validate()?;
    Ok(p)
}
