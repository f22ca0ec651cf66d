//! Decoder-only transformer with shared, partially separated or fully
//! separated docstring/code embeddings.

mod checkpoint;
mod config;
mod infer;
mod mask;
mod params;
mod transformer;

pub use checkpoint::{Checkpoint, CheckpointMeta, OptimizerState, Phase};
pub use config::{ModelConfig, Separation};
pub use infer::Session;
pub use mask::{build_attention_mask, AttentionMask, AttentionRegime, Block};
pub use params::{EmbeddingTables, Layer, Parameters};
pub use transformer::{embed, forward, loss, loss_and_grad, target_nll, Sequence};
