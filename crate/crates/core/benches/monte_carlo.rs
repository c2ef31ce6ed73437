//! Sequential against rayon-parallel replications on a small design cell.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use interfx::sim::{run_monte_carlo, DgpConfig, Design, Execution, McConfig};

fn replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let mut cfg = McConfig::new(DgpConfig::new(Design::Dgp1, 30, 40, 7), 16);
        cfg.execution = execution;
        group.bench_with_input(
            BenchmarkId::new("dgp1_n30_t40_16reps", format!("{execution:?}").to_lowercase()),
            &cfg,
            |b, cfg| b.iter(|| run_monte_carlo(cfg).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);
