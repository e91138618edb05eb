//! Dense tensors, their kernels, and reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_guarded, finite_diff_check_many, relative_error, GradCheck};
pub use kernels::{LAYER_NORM_EPS, LEAKY_SLOPE};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
