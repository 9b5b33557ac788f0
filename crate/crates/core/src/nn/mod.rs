//! Minimal differentiable-network substrate: named parameter stores, a
//! reverse-mode tape over f64 tensors, rotary position embeddings, MLP and
//! transformer building blocks, AdamW, and EMA shadows.

pub mod adamw;
pub mod ema;
pub mod layers;
pub mod model;
pub mod params;
pub mod rope;
pub mod tape;

pub use adamw::AdamW;
pub use ema::Ema;
pub use model::{Activation, DiffModel, MlpConfig};
pub use params::ParamStore;
pub use rope::{assign_position_indices, rope_apply, time_embedding, PositionIndexing};
pub use tape::{NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch for `{name}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGrad { name: String },
    #[error("unknown parameter `{name}`")]
    UnknownParam { name: String },
    #[error("duplicate parameter `{name}`")]
    DuplicateParam { name: String },
}
