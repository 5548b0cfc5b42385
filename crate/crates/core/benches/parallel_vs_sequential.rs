use std::time::Duration;

use afunet_core::metrics::{evaluate_pairs, TonemapParams};
use afunet_core::oracle::{solve_batch, DegradationOp, OracleProblem, SolverConfig};
use afunet_core::{ExecMode, Image};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn image(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), lo: f64, hi: f64) -> Image {
    Image::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

fn oracle(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = (3, 64, 64);
    let problems: Vec<OracleProblem> = (0..16)
        .map(|_| {
            let ys = [0; 3].map(|_| image(&mut rng, shape, 0.0, 1.0));
            let ops = [0; 3].map(|_| DegradationOp::diagonal(image(&mut rng, shape, 0.25, 4.0)).unwrap());
            OracleProblem::new(ys, ops).unwrap()
        })
        .collect();
    let config = SolverConfig {
        max_iters: 20,
        tol: 0.0,
        ..SolverConfig::default()
    };
    let mut group = c.benchmark_group("solve_batch");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| solve_batch(&problems, &config, m))
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(String, Image, Image)> = (0..8)
        .map(|i| {
            let a = image(&mut rng, (3, 128, 128), 0.0, 1.0);
            let b = a.mapv(|v| (v + 0.05).min(1.0));
            (format!("s{i}"), a, b)
        })
        .collect();
    let tm = TonemapParams::default();
    let mut group = c.benchmark_group("evaluate_pairs");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &m| {
            b.iter(|| evaluate_pairs(&pairs, &tm, m).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(5));
    targets = oracle, metrics
}
criterion_main!(benches);
