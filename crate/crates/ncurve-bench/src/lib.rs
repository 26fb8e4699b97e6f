//! Benchmark-only crate; see `benches/core_ops.rs`. Shared fixture builders
//! live here so the bench target stays focused on measurement.

use nalgebra::{DMatrix, DVector};
use ncurve::*;
use rand::Rng;

/// A degree-`controls - 1` curve in `d` dimensions with deterministic,
/// well-conditioned Gaussian controls.
pub fn fixture_curve(controls: usize, d: usize) -> NCurve {
    let mut rng = rng_from_seed(17);
    let points: Vec<GaussianDist> = (0..controls)
        .map(|i| {
            let mean = DVector::from_fn(d, |a, _| i as f64 + 0.3 * a as f64);
            let mut cov = DMatrix::zeros(d, d);
            for a in 0..d {
                cov[(a, a)] = 0.5 + rng.random_range(0.0..1.0);
            }
            GaussianDist::new(mean, cov).expect("diagonal covariance")
        })
        .collect();
    NCurve::new(points).expect("fixture curve")
}

/// A K-component mixture of `fixture_curve`-style curves with equal weights.
pub fn fixture_mixture(k: usize, controls: usize, d: usize) -> NCurveMixture {
    let components: Vec<NCurve> = (0..k).map(|_| fixture_curve(controls, d)).collect();
    NCurveMixture::new(vec![1.0 / k as f64; k], components).expect("fixture mixture")
}

/// `m` sequences of `n` points in `d` dimensions, drawn once with a fixed
/// seed so every run benchmarks identical data.
pub fn fixture_sequences(m: usize, n: usize, d: usize) -> Vec<Vec<DVector<f64>>> {
    let mut rng = rng_from_seed(19);
    (0..m)
        .map(|_| (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..4.0))).collect())
        .collect()
}
