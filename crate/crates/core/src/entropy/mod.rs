//! Entropy models for inference-layer residuals.
//!
//! The learned model maps a batch of descriptors to contexts with a small
//! unmasked attention encoder, then predicts 511-way residual distributions
//! per channel. Color channels are chained: the Co head also sees the luma
//! residual and the Cg head sees both. The baseline is an order-0 adaptive
//! model needing no training.

mod baseline;
mod config;
mod network;
mod params;
mod real;
mod train;

pub use baseline::BaselineModel;
pub use config::{channel_kinds, ModelConfig};
pub use network::{batch_loss, contexts, head_input, head_probs, loss_and_grad, TrainingBatch, LN_EPS};
pub use params::{Block, Head, Params};
pub use real::Real;
pub use train::{init_output_bias, Adam, Checkpoint, TrainConfig, Trainer};

pub(crate) use params::{decode_config, encode_config};

/// Residual alphabet size: `r ∈ [-255, 255]`.
pub const ALPHABET: usize = 511;
/// Symbol index of residual `r` is `r + SYMBOL_OFFSET`.
pub const SYMBOL_OFFSET: i32 = 255;

/// Symbol index of a residual already clamped to `[-255, 255]`.
pub fn symbol_of(r: i32) -> usize {
    debug_assert!(r.abs() <= SYMBOL_OFFSET);
    (r + SYMBOL_OFFSET) as usize
}

pub fn residual_of(symbol: usize) -> i32 {
    symbol as i32 - SYMBOL_OFFSET
}
