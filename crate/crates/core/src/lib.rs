// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod controller;
pub mod error;
pub mod evaluator;
pub mod exec;
pub mod io;
pub mod objective;
pub mod optim;
pub mod rd;
pub mod rng;
pub mod rollout;
pub mod spectral;
pub mod sweep;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
