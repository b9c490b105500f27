//! Complex linear algebra and seeded randomness.

mod matrix;
mod rng;
mod svd;

pub use matrix::{inner, norm, unit_modulus, unit_normalize, ComplexMatrix, C64};
pub use rng::Rng;
pub use svd::{least_squares, svd, top_singular_pair, SingularPair, SvdResult, CONVERGENCE_TOL};

/// `10 log10(x)`.
pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
