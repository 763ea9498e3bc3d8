//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replab_core::{ActivationCapture, Matrix};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sizes agree")
}

/// ReLU-like capture: roughly half the entries are exactly zero.
pub fn relu_capture(samples: usize, units: usize, classes: usize, seed: u64) -> ActivationCapture {
    let z = random_matrix(samples, units, seed).map(|v| v.max(0.0));
    ActivationCapture {
        layer: 1,
        h: z.clone(),
        z,
        labels: (0..samples).map(|i| i % classes).collect(),
    }
}
