//! Dense matrices, a reverse-mode tape over the attention-path primitives, and
//! the Gram-matrix projection used to pull attention importance back into query space.

pub mod linalg;
mod matrix;
mod tape;

pub use linalg::{pinv_project, GRAM_CONDITION_LIMIT};
pub use matrix::{AttentionMask, Matrix};
pub use tape::{log_softmax_at, Adjoints, Tape, ValueId};
