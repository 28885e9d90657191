//! Dense `f64` matrices and seeded random streams.

mod matrix;
mod rng;

pub use matrix::{gaussian, Matrix};
pub use rng::{streams, SeededRng};
