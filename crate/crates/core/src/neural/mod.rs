//! Feature extraction and the multi-head Q-network.

mod features;
mod model;
mod network;
mod optimizer;

use thiserror::Error;

pub use features::{symbol, FeatureEncoder, FeatureVector, Space, AFFIX, HISTORY, STACK_DEPTH, WINDOW};
pub use model::{read_word_vectors, Model, ModelHeader, MODEL_FORMAT_VERSION};
pub use network::{
    cross_entropy, head_slot, smooth_l1, Dense, ForwardCache, Gradients, NetDims, NetShape, QNetwork, Scalar,
};
pub use optimizer::{
    q_target, supervised_gradient, supervised_update, td_gradient, td_update, Optimizer, OptimizerConfig,
};

use crate::machine::State;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("feature vector has {found} slots, network expects {expected}")]
    Layout { expected: usize, found: usize },
    #[error("symbol {id} outside the {rows}-row {space:?} table")]
    Symbol { space: Space, id: u32, rows: usize },
    #[error("network has no head for state {0:?}")]
    NoHead(State),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
