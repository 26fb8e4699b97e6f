//! Microbenchmarks for the hot paths: basis evaluation, pointwise moments,
//! mixture likelihood + gradient, and realization sampling.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ncurve::*;
use ncurve_bench::{fixture_curve, fixture_mixture, fixture_sequences};

fn bench_bernstein(c: &mut Criterion) {
    let mut group = c.benchmark_group("bernstein_row");
    for degree in [3usize, 10, 20] {
        group.bench_function(format!("degree_{degree}"), |b| {
            let mut out = vec![0.0; degree + 1];
            b.iter(|| {
                bernstein_row_into(black_box(degree), black_box(0.37), &mut out).unwrap();
                black_box(&out);
            });
        });
    }
    group.finish();
}

fn bench_curve_at(c: &mut Criterion) {
    let curve = fixture_curve(4, 2);
    c.bench_function("curve_at/controls_4_d_2", |b| {
        b.iter(|| black_box(curve.at(black_box(0.37)).unwrap()));
    });
}

fn bench_log_density(c: &mut Criterion) {
    let mixture = fixture_mixture(2, 4, 2);
    let x = nalgebra::DVector::from_row_slice(&[1.0, 2.0]);
    c.bench_function("mixture_log_density/k_2_controls_4_d_2", |b| {
        b.iter(|| black_box(mixture.log_density_at(black_box(0.37), black_box(&x)).unwrap()));
    });
}

fn bench_nll_and_gradient(c: &mut Criterion) {
    let layout = ParamLayout::new(2, 4, 2, CovMode::Full).unwrap();
    let grid = IndexGrid::uniform(25).unwrap();
    let data = fixture_sequences(64, 25, 2);
    let theta: Vec<f64> = (0..layout.len()).map(|i| 0.1 * (i as f64).sin()).collect();
    let mixture = layout.realize(&theta).unwrap();

    c.bench_function("mixture_nll/k_2_controls_4_m_64_n_25", |b| {
        b.iter(|| {
            black_box(
                mixture_nll(&mixture, &grid, &data, LossReduction::SumOverSteps).unwrap(),
            )
        });
    });
    c.bench_function("gradient/k_2_controls_4_m_64_n_25", |b| {
        b.iter(|| {
            black_box(
                gradient(&layout, &theta, &grid, &data, LossReduction::SumOverSteps).unwrap(),
            )
        });
    });
}

fn bench_sampling(c: &mut Criterion) {
    let curve = fixture_curve(4, 2);
    let grid = IndexGrid::uniform(25).unwrap();
    c.bench_function("sample_realization/controls_4_d_2_n_25", |b| {
        let mut rng = rng_from_seed(23);
        b.iter(|| black_box(curve.sample_realization(&grid, &mut rng).unwrap()));
    });
}

criterion_group!(
    benches,
    bench_bernstein,
    bench_curve_at,
    bench_log_density,
    bench_nll_and_gradient,
    bench_sampling
);
criterion_main!(benches);
