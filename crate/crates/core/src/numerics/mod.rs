//! Dense f64 arrays, a gradient tape for the tiny LM's op set, and
//! finite-difference checking.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_sampled, relative_error};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{log_softmax, log_softmax_slice, matmul, softmax, softmax_slice, Tensor};
