//! Rayon pool against a single worker on the hot paths.
//!
//! `cargo bench -p lmc-core` compares the default pool with a one-thread pool.
//! `cargo bench -p lmc-core --no-default-features` times the sequential build.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lmc_core::assignment::pairwise_sq_dist;
use lmc_core::experiments::{empirical_rate, RowLaw};
use lmc_core::interpolation::barrier_curve;
use lmc_core::network::{init_weights, Activation, Architecture, InitScheme, LossKind, Mlp, Targets};
use lmc_core::numerics::{CovarianceSpec, Matrix, RngState};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngState::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn mlp(seed: u64) -> Mlp {
    let arch = Architecture::new(vec![16, 256, 256, 4], Activation::Relu, true).unwrap();
    init_weights(&arch, &InitScheme::GaussianIid, &mut RngState::new(seed)).unwrap()
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("rayon", None), ("one_thread", Some(one))]
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn run<T: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run<T>(_: &Option<()>, f: impl FnOnce() -> T) -> T {
    f()
}

fn bench_pairwise(c: &mut Criterion) {
    let mut g = c.benchmark_group("pairwise_sq_dist");
    let (x, y) = (gaussian(1024, 32, 1), gaussian(1024, 32, 2));
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::new(name, 1024), |b| {
            b.iter(|| run(&pool, || pairwise_sq_dist(black_box(&x), black_box(&y)).unwrap()))
        });
    }
    g.finish();
}

fn bench_rate_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("empirical_rate");
    g.sample_size(10);
    let law = RowLaw::Gaussian { spec: CovarianceSpec::new(vec![4], vec![1.0]).unwrap() };
    let ms = [32, 64, 128, 256];
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::new(name, "32..256x8"), |b| {
            b.iter(|| run(&pool, || empirical_rate(&law, &ms, 8, 3).unwrap()))
        });
    }
    g.finish();
}

fn bench_barrier(c: &mut Criterion) {
    let mut g = c.benchmark_group("barrier_curve");
    g.sample_size(10);
    let (a, b) = (mlp(4), mlp(5));
    let x = gaussian(16, 2000, 6);
    let y = Targets::Values(gaussian(4, 2000, 7));
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::new(name, 25), |bch| {
            bch.iter(|| run(&pool, || barrier_curve(&a, &b, &x, &y, LossKind::Mse, 25).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_pairwise, bench_rate_sweep, bench_barrier);
criterion_main!(benches);
