//! Character-level Japanese→Chinese translation with radical input features.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pick `f64`, which is what the CLI and checkpoints use.

pub mod cli;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod numerics;
pub mod radicals;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type Tape = numerics::Tape<f64>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type Model = model::Model<f64>;
pub type Checkpoint = model::Checkpoint<f64>;
pub type Model32 = model::Model<f32>;
