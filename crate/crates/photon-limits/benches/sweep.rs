//! Sweep throughput: rayon pool vs sequential execution.
//!
//! With the default `parallel` feature the `sequential` entries pin the
//! worker count to 1 and the `parallel` entries use every core; because
//! trial streams are derived from `(seed, N, pixel, trial)` both produce
//! identical curves. Built with `--no-default-features` the crate has no
//! rayon dependency and both entries measure the plain sequential path.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use photon_limits::experiment::{run_1d_sweep, run_2d_sweep, ExperimentConfig};
use photon_limits::scene::make_synthetic_depth_map;

fn bench_config(workers: Option<usize>) -> ExperimentConfig {
    ExperimentConfig {
        dx: 1.0 / 1024.0,
        dt: 1.0 / 128.0,
        n_list: vec![16, 32],
        trials: 24,
        seed: 7,
        workers,
        ..ExperimentConfig::default()
    }
}

fn sweep_1d(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep1d");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        let cfg = bench_config(Some(1));
        b.iter(|| black_box(run_1d_sweep(&cfg).unwrap()));
    });
    group.bench_function("parallel", |b| {
        let cfg = bench_config(None);
        b.iter(|| black_box(run_1d_sweep(&cfg).unwrap()));
    });
    group.finish();
}

fn sweep_2d(c: &mut Criterion) {
    let map = make_synthetic_depth_map(128).unwrap();
    let base = ExperimentConfig {
        alpha0: 1e5,
        sigma_t: 2.0,
        t_max: 30.0,
        n_list: vec![8, 16],
        trials: 16,
        seed: 7,
        ..ExperimentConfig::default()
    };
    let mut group = c.benchmark_group("sweep2d");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        let cfg = ExperimentConfig {
            workers: Some(1),
            ..base.clone()
        };
        b.iter(|| black_box(run_2d_sweep(&cfg, &map).unwrap()));
    });
    group.bench_function("parallel", |b| {
        let cfg = ExperimentConfig {
            workers: None,
            ..base.clone()
        };
        b.iter(|| black_box(run_2d_sweep(&cfg, &map).unwrap()));
    });
    group.finish();
}

criterion_group!(benches, sweep_1d, sweep_2d);
criterion_main!(benches);
