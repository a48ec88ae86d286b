//! Minimal pre-norm decoder-only transformer exposing attention maps,
//! next-token probabilities and context-free embeddings.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod optim;
pub mod params;

pub use config::ModelConfig;
pub use forward::{
    build_graph, embed, forward, greedy_generate, loss_and_grad, loss_value, next_token_probs,
    ForwardTrace,
};
pub use optim::{optimizer_step, OptState, OptimHyper, OptimizerMode};
pub use params::{ModelParams, Slot};
