use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use otmap::map::InvertOptions;
use otmap::{Basis, MultiIndexSet, Structure, TransportMap, UnivariateFamily};

fn index_sets(c: &mut Criterion) {
    let mut group = c.benchmark_group("index_set");
    for (structure, dim, order) in [
        (Structure::Dense, 10, 4),
        (Structure::Kr, 10, 4),
        (Structure::Krsv, 100, 4),
    ] {
        group.bench_function(BenchmarkId::new(structure.name(), format!("{dim}_{order}")), |b| {
            b.iter(|| MultiIndexSet::new(structure, dim, order).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("eval_with_jacobian");
    for (structure, dim, order) in [
        (Structure::Dense, 5, 4),
        (Structure::Kr, 10, 3),
        (Structure::Krsv, 20, 4),
    ] {
        let basis = Basis::build(structure, dim, order, UnivariateFamily::Hermite).unwrap();
        let x: Vec<f64> = (0..dim).map(|i| 0.1 * i as f64 - 0.5).collect();
        group.bench_function(BenchmarkId::new(structure.name(), format!("{dim}_{order}")), |b| {
            b.iter(|| basis.eval_with_jacobian(black_box(&x)))
        });
    }
    group.finish();
}

fn inversion(c: &mut Criterion) {
    let basis = Basis::build(Structure::Kr, 5, 3, UnivariateFamily::Hermite).unwrap();
    let map = TransportMap::identity(basis).unwrap();
    let y = [0.3, -1.0, 0.7, 2.0, -0.2];
    let opts = InvertOptions::default();
    c.bench_function("invert_kr_d5_o3", |b| {
        b.iter(|| map.invert(black_box(&y), &opts).unwrap())
    });
}

criterion_group!(benches, index_sets, evaluation, inversion);
criterion_main!(benches);
