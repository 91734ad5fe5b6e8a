//! Dense tensors, a reverse-mode tape, optimizers and the NTSR container.

mod gradcheck;
pub mod kernels;
mod ntsr;
mod optim;
mod params;
pub mod rng;
mod tape;
mod tensor;

pub use gradcheck::{compare_gradients, finite_difference_gradients, relative_error, GradComparison};
pub use ntsr::{read_ntsr, read_ntsr_file, write_ntsr, write_ntsr_file, NtsrError, NTSR_MAGIC, NTSR_VERSION};
pub use optim::{optimizer_step, OptimKind, OptimState, OptimizerConfig};
pub use params::ParamStore;
pub use tape::{Gradients, NodeId, Op, Tape};
pub use tensor::{Precision, Real, Tensor};

pub(crate) use tape::bce_from_logits;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{0}")]
    InvalidShape(String),
    #[error("conv2d: kernel {kernel:?} larger than padded input {padded:?}")]
    KernelTooLarge { kernel: Vec<usize>, padded: Vec<usize> },
    #[error("loss must be a single element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(f64),
    #[error("no gradient supplied for parameter `{0}`")]
    MissingGradient(String),
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}
