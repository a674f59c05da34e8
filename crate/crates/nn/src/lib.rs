//! Dense `f64` autodiff and the handful of layers needed to build small
//! transformer encoders, decoders and CRF taggers on the CPU.

pub mod attention;
pub mod crf;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod transformer;

pub use attention::{causal_mask, Attended, MultiHeadAttention};
pub use crf::{Constraints, Crf};
pub use graph::{Gradients, Graph, Matrix, Var};
pub use layers::{Embedding, FeedForward, LayerNorm, Linear, Tape};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Init, ParamId, ParamStore};
pub use transformer::{assign_windows, plan_windows, TransformerConfig, TransformerDecoder, TransformerEncoder};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights format error: {0}")]
    Format(String),
}
