//! Reverse-mode automatic differentiation over dense `f64` tensors, with the
//! dense/LSTM layers and the Adam optimizer used by the hedging trainers.

mod adam;
mod error;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use error::{AutodiffError, Result};
pub use gradcheck::{finite_difference_check, GradCheck, Probe};
pub use layers::{glorot_uniform, DenseLayer, DenseStack, LstmCell, LstmState};
pub use params::{flatten_trainable_grads, Bound, ParamId, ParamStore};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
