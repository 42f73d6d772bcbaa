//! Minimal dense tensors with reverse-mode autodiff, and the neural layers
//! the completion network is assembled from.

mod graph;
pub mod gradcheck;
mod kernels;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{CdVariant, Graph, Var};
pub use layers::{
    FeedForward, LayerNorm, Linear, MultiHeadAttention, Neighborhood, VectorAttention, DEFAULT_DROPOUT,
    LAYER_NORM_EPS,
};
pub use optim::{optimizer_step, AdamW, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};
pub use params::{fnv1a64, Bound, ParamId, Parameter, ParameterStore, CHECKPOINT_MAGIC};
pub use tensor::Tensor;

pub(crate) use graph::mix_seed;
