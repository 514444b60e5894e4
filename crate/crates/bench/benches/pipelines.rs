use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use perron_chain::convergence::perron_root;
use perron_chain::matrix::{build_kernel, taboo_powers};
use perron_chain::mc::{estimate_left, McConfig};
use perron_chain::models::srw_line;
use perron_chain::series::{eigen_pair, left_vector_series, Horizon};
use perron_chain::{convergence_parameter_ladder, StateId};
use perron_chain_bench::{dense_fixture, sparse_fixture};

fn power_iteration(c: &mut Criterion) {
    let mut g = c.benchmark_group("perron_root");
    for n in [10, 50, 200] {
        let a = dense_fixture(n);
        g.bench_with_input(BenchmarkId::new("dense", n), &a, |b, a| b.iter(|| perron_root(a, 1e-13).unwrap()));
    }
    g.finish();
}

fn taboo(c: &mut Criterion) {
    let mut g = c.benchmark_group("taboo_powers");
    for n in [10, 50] {
        let a = dense_fixture(n);
        g.bench_with_input(BenchmarkId::new("dense_256_steps", n), &a, |b, a| {
            b.iter(|| taboo_powers(a, StateId(0), StateId(0), 256).unwrap())
        });
    }
    g.finish();
}

fn series(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigen_pair");
    g.sample_size(20);
    for (name, a) in [("dense", dense_fixture(50)), ("sparse", sparse_fixture(200))] {
        let r = 1.0 / perron_root(&a, 1e-13).unwrap().rho;
        g.bench_function(name, |b| b.iter(|| eigen_pair(&a, r, StateId(0), None, Horizon::adaptive(1e-10)).unwrap()));
    }
    g.finish();
}

fn random_walk(c: &mut Criterion) {
    let model = srw_line(0.3).unwrap();
    let a = model.matrix().unwrap().clone();
    let r = model.reference.r.unwrap();
    let states: Vec<StateId> = (-5..=5).map(StateId).collect();
    let mut g = c.benchmark_group("random_walk");
    g.sample_size(10);
    g.bench_function("ladder_8_to_64", |b| {
        b.iter(|| convergence_parameter_ladder(&a, StateId(0), &[8, 16, 32, 64], 1e-4).unwrap())
    });
    g.bench_function("series_1e-6", |b| {
        b.iter(|| left_vector_series(&a, r, StateId(0), &states, Horizon::adaptive(1e-6)).unwrap())
    });
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("estimate_left");
    g.sample_size(10);
    for n in [10, 50] {
        let a = dense_fixture(n);
        let r = 1.0 / perron_root(&a, 1e-13).unwrap().rho;
        let kernel = build_kernel(&a).unwrap();
        let cfg = McConfig::new(StateId(0), 32_000);
        g.bench_with_input(BenchmarkId::new("dense_32k_excursions", n), &kernel, |b, k| {
            b.iter(|| estimate_left(k, r, &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, power_iteration, taboo, series, random_walk, monte_carlo);
criterion_main!(benches);
