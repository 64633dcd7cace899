//! Layout-independent pseudo-random matrices.
//!
//! Row `i` of the matrix for `seed` is drawn from ChaCha8 stream `i` of key
//! `seed`, so any process that owns row `i` generates the same values no
//! matter how rows are split across workers or client processes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::DenseMatrix;

/// Fill `out` with row `row` of the uniform `[0, 1)` matrix keyed by `seed`.
pub fn uniform_row(seed: u64, row: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    for x in out.iter_mut() {
        *x = rng.gen::<f64>();
    }
}

pub fn uniform_matrix(seed: u64, rows: usize, cols: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        uniform_row(seed, i as u64, m.row_mut(i));
    }
    m
}
