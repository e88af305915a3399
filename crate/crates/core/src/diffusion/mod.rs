//! Shared denoising-diffusion machinery: the noise schedule and forward
//! process, the deterministic reverse sampler, the grammar-vocabulary text
//! encoder, the generic training loop and the checkpoint format used by all
//! three generators.

mod checkpoint;
mod sampler;
mod schedule;
mod text;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, save_optimizer, load_optimizer, CheckpointManifest};
pub use sampler::{sample, sample_timesteps, standard_normal};
pub use schedule::{forward_diffuse, make_schedule, NoiseSchedule};
pub use text::{vocab, vocab_sha256, TextEmbedding, TextEncoder};
pub use train::{train_epochs, DiffusionTask, EpochStats, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule domain: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged: loss {0} at epoch {1}")]
    Divergence(f64, usize),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint rejected: {0}")]
    Corrupt(String),
}
