use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use otmap::admm::{fit_dense, fit_kr_stage};
use otmap::{Reduction, Structure};
use otmap_bench::{fixed_budget, laplace_problem};

fn kr_workers(c: &mut Criterion) {
    // N=1000, D=20 KRSV: the parallel consistency benchmark configuration.
    let (xs, q, basis) = laplace_problem(1000, 20, Structure::Krsv, 2);
    let mut group = c.benchmark_group("kr_stage_n1000_d20");
    group.sample_size(10);
    for workers in [1usize, 2, 4] {
        for reduction in [Reduction::Shard, Reduction::Strict] {
            let cfg = fixed_budget(20, workers, reduction);
            group.bench_with_input(
                BenchmarkId::new(format!("{reduction:?}").to_lowercase(), workers),
                &cfg,
                |b, cfg| b.iter(|| fit_kr_stage(&xs, &q, &basis, 0.0, cfg).unwrap()),
            );
        }
    }
    group.finish();
}

fn dense_iterations(c: &mut Criterion) {
    let mut group = c.benchmark_group("dense_fit");
    group.sample_size(10);
    for (dim, order) in [(2usize, 3usize), (5, 2), (5, 4)] {
        let (xs, q, basis) = laplace_problem(500, dim, Structure::Dense, order);
        let cfg = fixed_budget(20, 1, Reduction::Shard);
        group.bench_function(BenchmarkId::new("d_o", format!("{dim}_{order}")), |b| {
            b.iter(|| fit_dense(&xs, &q, &basis, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kr_workers, dense_iterations);
criterion_main!(benches);
