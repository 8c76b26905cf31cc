//! Minimal deterministic differentiable-computation substrate.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use gru::{gru_step, GruParams, GruVars};
pub use layers::{bce_loss, conv2d, dense, global_avg_pool, sigmoid, Padding};
pub use params::ParamSet;
pub use tensor::Tensor;
