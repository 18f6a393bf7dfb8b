//! Fixtures shared by the benchmarks.

use affinity_core::{simulate_gaussian, DiscreteMarginal, GaussianQuadraticSpec, MatchedSample};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random `m × m` utility table with random positive marginals on `0..m`.
pub fn ipfp_instance(m: usize, seed: u64) -> (Array2<f64>, DiscreteMarginal, DiscreteMarginal) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = Array2::from_shape_fn((m, m), |_| rng.gen_range(-2.0..2.0));
    let grid = Array2::from_shape_fn((m, 1), |(i, _)| i as f64);
    let mut marginal = || {
        DiscreteMarginal::from_masses(Array1::from_shape_fn(m, |_| rng.gen_range(0.1..1.0)), grid.clone()).unwrap()
    };
    let p = marginal();
    let q = marginal();
    (phi, p, q)
}

/// Gaussian couples with a diagonal `d × d` affinity.
pub fn gaussian_sample(d: usize, n: usize, seed: u64) -> MatchedSample {
    let b = Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 / (i + 1) as f64 } else { 0.0 });
    simulate_gaussian(&GaussianQuadraticSpec { b_matrix: b, n, seed }).unwrap()
}
