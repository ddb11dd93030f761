//! Seeded random sources shared by generators, recovery and tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The single RNG type used everywhere; a seed fully determines its stream.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // fill row by row so the stream order matches the row-major JSON layout
    let data: Vec<f64> = (0..rows * cols).map(|_| gaussian(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn gaussian_vector(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| gaussian(rng)))
}
