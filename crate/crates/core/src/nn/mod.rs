//! Layers, parameter storage and the classification loss.

mod layers;
mod params;

pub use layers::{
    cross_entropy, layer_norm, linear, AttentionOutput, ClassifierMlp, FeedForward, LayerNorm,
    Linear, MultiHeadAttention, TransformerBlock, LAYER_NORM_EPS,
};
pub use params::{BoundParams, ParamEntry, ParamRegistry, MANIFEST_FILE};
