//! Small dense/recurrent building blocks with analytic gradients.

mod cell;
mod dropout;
mod ops;
mod optim;
mod params;
mod tensor;

pub use cell::{CellCache, CellInputGrads, CellKind, CellParams, CellState};
pub use dropout::dropout_mask;
pub use ops::{sigmoid, softmax, softmax_backward, tanh_backward, Dense};
pub use optim::{sgd_step, Adam, Optimizer, OptimizerKind};
pub use params::{GradBuffer, ParamId, ParamStore};
pub use tensor::Tensor2;
