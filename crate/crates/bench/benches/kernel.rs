use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sdd_bench::{nicholson, pde_profile};
use sdd_core::operators::SineTransform;
use sdd_core::scenarios::{demo_integral_inner, demo_integral_outer, demo_nested_point, demo_sum_of_nested};
use sdd_core::{solve, EvolutionOperator, SolverConfig};

fn transforms(c: &mut Criterion) {
    let mut g = c.benchmark_group("dst");
    for n in [64, 256, 1024] {
        let t = SineTransform::new(n);
        let v = pde_profile(n);
        let mut out = vec![0.0; n];
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| t.forward(black_box(v.values()), &mut out))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("semigroup");
    for n in [64, 256] {
        let op = EvolutionOperator::build_dirichlet_laplacian(n, std::f64::consts::PI, 1.0, 0.0).unwrap();
        let v = pde_profile(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| op.semigroup_apply(black_box(0.01), &v).unwrap())
        });
    }
    g.finish();
}

fn delays(c: &mut Criterion) {
    let (_, phi) = nicholson(64, 1.0);
    let mut g = c.benchmark_group("delay_evaluate");
    let variants = [
        ("nested_point", demo_nested_point(1.0).unwrap()),
        ("sum_of_nested", demo_sum_of_nested(1.0).unwrap()),
        ("integral_outer", demo_integral_outer(1.0).unwrap()),
        ("integral_inner", demo_integral_inner(1.0).unwrap()),
    ];
    for (name, eta) in &variants {
        g.bench_function(*name, |b| b.iter(|| eta.evaluate(black_box(&phi)).unwrap()));
    }
    g.finish();
}

fn solves(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for n in [32, 64] {
        let (pde, phi) = nicholson(n, 1.0);
        let problem = pde.build(demo_nested_point(1.0).unwrap()).unwrap();
        let cfg = SolverConfig::new(1e-2, 1.0);
        g.bench_with_input(BenchmarkId::new("nicholson_pde_100_steps", n), &n, |b, _| {
            b.iter(|| solve(problem.clone(), &phi, &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, transforms, delays, solves);
criterion_main!(benches);
