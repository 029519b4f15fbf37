//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use params::{Bound, ParamSet};
pub use tape::{Elementwise, Gradients, Tape, Var};
pub use tensor::Tensor;
