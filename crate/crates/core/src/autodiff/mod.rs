//! Dense tensors with reverse-mode differentiation.

mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use rng::{derive_seed, seeded_rng, NoiseKey};
pub use tape::{OpKind, OpParams, Sigma, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{huber_value, log_softmax_row, matmul_raw, softmax_row};
