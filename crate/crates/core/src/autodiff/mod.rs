//! Reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;

pub use gradcheck::{
    grad_check, grad_check_at, grad_check_deep, grad_check_with, Floor, GradCheckOptions,
    GradCheckReport, ScalarFn, DEFAULT_FLOOR, ROUNDING_ULPS,
};
pub use kernels::{conv1d_depthwise, conv_output_len, matmul, softmax, transpose};
pub use tape::{Gradients, Tape, Var};
