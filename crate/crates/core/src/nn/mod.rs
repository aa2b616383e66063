//! Function approximators and optimization primitives.

mod dist;
mod gradcheck;
mod layers;
mod matrix;
mod memory;
mod optim;
mod params;
mod tape;

pub use dist::{
    bernoulli_bce, categorical_probs, gaussian_nll, sample_categorical, sample_gaussian,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use layers::{mlp_forward, Linear, Mlp, MlpSpec};
pub use matrix::{dot, Matrix};
pub use memory::{AttentionMemory, HistoryBatch, MemorySpec};
pub use optim::{clip_grad_norm, clip_grad_norm_all, Adam, AdamConfig};
pub use params::{ParamId, ParameterSet};
pub use tape::{sigmoid, Gradients, Tape, Var};
