//! Dense arrays, reverse-mode gradients, MLPs and Adam.

mod adam;
mod array;
mod graph;
mod mlp;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use array::DenseArray;
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use mlp::{
    forward_mlp, forward_one, loss_and_gradients, Activation, Layer, MlpParams, MlpVars,
    SIGMOID_INPUT_CLAMP,
};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error at node {node}: {detail}")]
    Domain { node: usize, detail: String },
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
