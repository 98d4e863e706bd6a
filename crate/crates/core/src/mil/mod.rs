//! Attention-based bag classifiers and their training loop.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, read_checkpoint, write_checkpoint};
pub use model::{
    admil_forward, amil_forward, attention_leaky, attention_tanh, hybrid_forward, Architecture, AttentionParams,
    BagClassifierParams, BagOutput, HeadParams, LeakyAttentionParams, MilModel, ModelDims, PatchScoreParams,
    TanhAttentionParams,
};
pub use train::{
    derive_seed, fit, predict, repeat_protocol, run_protocol, train_model, CrossValidation, FoldResult, ProtocolRun,
    TrainConfig,
};

use crate::diff::{grad_check, GradCheckOptions, GradCheckReport, Tensor2D};
use crate::error::Result;

/// Reverse-mode vs central-difference check of the full bag loss.
pub fn model_grad_check(
    model: &MilModel,
    instances: &Tensor2D,
    label: f64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let params: Vec<_> = model.params().into_iter().cloned().collect();
    grad_check(
        &params,
        |tape, leaves| {
            let h = tape.leaf(instances.clone());
            let rec = model.record(tape, leaves, h)?;
            tape.bce(rec.prob, label)
        },
        opts,
    )
}
