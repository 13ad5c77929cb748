//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tensordg::basis::{Matrix1D, Op1D};

/// Reproducible values in `[-1, 1)`.
pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// A `k x k` operator with the centro-symmetry the even-odd kernels need.
pub fn symmetric_op(k: usize, seed: u64) -> Op1D {
    let v = random_vector(k * k, seed);
    Op1D::new(Matrix1D::from_fn(k, k, |i, j| v[i * k + j] + v[(k - 1 - i) * k + (k - 1 - j)]), 1.0)
}
