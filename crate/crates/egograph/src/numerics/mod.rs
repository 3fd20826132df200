//! Dense kernels, the reverse-mode gradient engine, seeded randomness,
//! and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod rng;
pub mod store;
pub mod tape;

pub use adam::{adam_step, OptimizerState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use matrix::{cosine, dot, Matrix};
pub use rng::{mix_seed, RandomStream};
pub use store::ParameterStore;
pub use tape::{sigmoid, softplus, Binding, Tape, ValueId};
