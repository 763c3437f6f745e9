//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Gradients through the ODE solver are obtained by unrolling the recorded
//! RK4 stages (discretize-then-optimize).

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, relative_error, GradcheckReport, RELATIVE_ERROR_FLOOR};
pub use params::{load_checkpoint, save_checkpoint, BoundParams, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;
