//! Dense tensors, a reverse-mode tape, parameter storage and gradient utilities.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_EPS};
pub use params::{clip_by_global_norm, ParamId, ParamStore, Parameter};
pub use tape::{Axis, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;

pub const INIT_LOW: f64 = -0.1;
pub const INIT_HIGH: f64 = 0.1;

/// I.i.d. uniform values in `[low, high)`, deterministic for a seeded `rng`.
pub fn uniform_init<S: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    low: f64,
    high: f64,
    rng: &mut R,
) -> Result<Tensor<S>> {
    Tensor::uniform(shape, low, high, rng)
}

/// Inverted-dropout keep mask: each entry kept with probability `1 - drop_p`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, drop_p: f64, rng: &mut R) -> Vec<bool> {
    (0..len).map(|_| rng.gen::<f64>() >= drop_p).collect()
}
