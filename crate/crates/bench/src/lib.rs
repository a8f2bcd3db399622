//! Shared fixtures for the criterion benchmarks.

use d2s_core::{Rng, Tensor};

/// Deterministic standard-normal input of the given shape.
pub fn random_input(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal() as f32).collect()).expect("valid shape")
}
