//! Dense-array substrate: tensors, deterministic RNG, named parameters,
//! reverse-mode autodiff, and finite-difference gradient checking.

pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use params::{Init, ParamId, ParamSet, Parameter};
pub use rng::Rng;
pub use tape::{sample_dropout_mask, Gradients, NodeId, Tape};
pub use tensor::{max_abs_diff, Precision, Tensor};

#[cfg(test)]
mod tests;
