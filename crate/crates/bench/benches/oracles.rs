use std::hint::black_box;

use bsad_bench::{counterexample, random_333};
use bsad_core::harness::bootstrap_ci;
use bsad_core::mdp::optimal_policy_bruteforce;
use bsad_core::oracle::{exact_preference_probability, ExactPreference};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn preference_probability(c: &mut Criterion) {
    let (mdp, f) = counterexample();
    let opt = optimal_policy_bruteforce(&mdp, &f).unwrap();
    let mut group = c.benchmark_group("exact_preference");
    for m in [1usize, 64, 1220] {
        group.bench_with_input(BenchmarkId::new("counterexample", m), &m, |b, &m| {
            b.iter(|| exact_preference_probability(&mdp, &f, 0, 0, 0, 1, &opt, black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn preference_table(c: &mut Criterion) {
    let (mdp, f) = random_333();
    let exact = ExactPreference::new(&mdp, &f).unwrap();
    c.bench_function("preference_table/random_333_M4", |b| b.iter(|| exact.table(black_box(4)).unwrap()));
}

fn brute_force(c: &mut Criterion) {
    let (mdp, f) = random_333();
    c.bench_function("optimal_policy/random_333", |b| b.iter(|| optimal_policy_bruteforce(&mdp, &f).unwrap()));
}

fn bootstrap(c: &mut Criterion) {
    let values: Vec<f64> = (0..100).map(|i| (i % 7) as f64 * 0.3).collect();
    c.bench_function("bootstrap_ci/n100_r1e4", |b| b.iter(|| bootstrap_ci(black_box(&values), 10_000, 0).unwrap()));
}

criterion_group!(benches, preference_probability, preference_table, brute_force, bootstrap);
criterion_main!(benches);
