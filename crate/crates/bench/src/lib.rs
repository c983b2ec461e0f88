//! Input generators shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Exponential survival times with roughly 30% censoring.
pub fn survival(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let risks: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let times = risks
        .iter()
        .map(|r: &f64| -rng.random::<f64>().ln() / r.exp())
        .collect();
    let events = (0..n).map(|_| rng.random::<f64>() < 0.7).collect();
    (times, events, risks)
}
