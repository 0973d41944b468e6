//! Temporal contrastive learning for semi-supervised sequence
//! classification, with a small reverse-mode autodiff core.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
