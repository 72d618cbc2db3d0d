//! Minimal dense tensors with reverse-mode differentiation: exactly the
//! operations the parser needs, plus optimizer, checkpoints and a
//! finite-difference gradient checker.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, Evaluation, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{Graph, Var};
pub use optim::{learning_rate, Adam, AdamConfig};
pub use params::{uniform, unit_uniform, xavier, Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}")]
    Data(String),
    #[error("non-finite values in {0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("architecture mismatch: {}", .0.join("; "))]
    Architecture(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
