//! Minimal neural-network toolkit: a reverse-mode tape over `f64` matrices,
//! transformer blocks with an optional condition path, a pointer head,
//! Adam, and a binary checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, Tensor};
pub use layers::{pointer_distribution, pointer_logits, softmax, Block, Linear, Mlp, Norm, Transformer, TransformerConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
