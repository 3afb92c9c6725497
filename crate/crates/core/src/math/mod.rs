//! Dense matrices and the seedable random stream.

mod matrix;
mod rng;

pub use matrix::{Axis, ElementwiseFn, Matrix};
pub use rng::RngState;
