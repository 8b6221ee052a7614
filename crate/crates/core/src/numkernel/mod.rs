//! Deterministic numeric primitives shared by all training code.

mod adam;
mod gradcheck;
mod rng;
mod scalar;
mod schedule;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use rng::RandomStream;
pub use scalar::{log_sigmoid, log_softmax, mean, sigmoid, softmax, softplus, std_dev};
pub use schedule::LrSchedule;
