//! Parallel core against its sequential fallback, on the two places that
//! fan work out: the brute-force support scan and the campaign replicate
//! loop. The exact solver and the assignment tree run as single-thread
//! references. Build with --no-default-features to time the sequential
//! codepath of `map_indexed` itself.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use clusterreg::par;
use clusterreg::pipeline::{run_replicate, EvalOptions};
use clusterreg::simulator::{gen_dataset, EffectType, Preset, ScenarioConfig};
use clusterreg::solver::{
    brute_force_best_subset, brute_force_best_subset_seq, solve_outer_approximation, SolveOptions,
};
use clusterreg::tree::{fit_classification_tree, TreeOptions};
use clusterreg::{build_extended_design, ClusteredDataset, ExtendedDesign};

fn instance(preset: Preset, variance: f64, seed: u64) -> (ClusteredDataset, ExtendedDesign) {
    let mut cfg = ScenarioConfig::new(preset, EffectType::Gaussian { variance });
    cfg.n_per_cluster = 30;
    let (data, _) = gen_dataset(&cfg, seed, 0).unwrap();
    let q = if data.z.is_some() { 2 } else { 1 };
    let design =
        build_extended_design(&data.x, &data.assignment(), data.z.as_ref(), q).unwrap();
    (data, design)
}

/// 2^18 candidate supports: enough work for the chunked scan to matter.
fn oracle_scan(c: &mut Criterion) {
    let (data, design) = instance(Preset::Custom { p: 12, k: 9, q: 2 }, 25.0, 3);
    let budgets = vec![4, 4];
    let mut g = c.benchmark_group("oracle_scan_2^18");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter(|| brute_force_best_subset(&design, &data.y, black_box(&budgets), 1e-3).unwrap())
    });
    g.bench_function("sequential", |b| {
        b.iter(|| brute_force_best_subset_seq(&design, &data.y, black_box(&budgets), 1e-3).unwrap())
    });
    g.finish();
}

/// Eight replicate cells of a Low-preset scenario, fanned out the way the
/// campaign runner does versus a plain loop.
fn replicate_fanout(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::new(Preset::Low, EffectType::Gaussian { variance: 25.0 });
    cfg.n_per_cluster = 25;
    let opts = EvalOptions { grid: Some(vec![0, 2, 4]), ..EvalOptions::default() };
    let mut g = c.benchmark_group("replicate_fanout_8");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter(|| {
            par::map_indexed(8, |i| run_replicate(&cfg, 5, i as u64, &opts).unwrap().icc_true)
        })
    });
    g.bench_function("sequential", |b| {
        b.iter(|| {
            par::map_indexed_seq(8, |i| run_replicate(&cfg, 5, i as u64, &opts).unwrap().icc_true)
        })
    });
    g.finish();
}

fn exact_solve(c: &mut Criterion) {
    let (data, design) = instance(Preset::High, 50.0, 11);
    let budgets = vec![7];
    let opts = SolveOptions::default();
    c.bench_function("outer_approximation_high_preset", |b| {
        b.iter(|| {
            solve_outer_approximation(&design, &data.y, black_box(&budgets), 1e-3, &opts).unwrap()
        })
    });
}

fn tree_fit(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::new(Preset::High, EffectType::Gaussian { variance: 50.0 });
    cfg.n_per_cluster = 40;
    let (data, _) = gen_dataset(&cfg, 13, 0).unwrap();
    let opts = TreeOptions::default();
    c.bench_function("tree_fit_560x35", |b| {
        b.iter_batched(
            || (data.x.clone(), data.labels.clone()),
            |(x, labels)| fit_classification_tree(&x, &labels, data.k(), &opts).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, oracle_scan, replicate_fanout, exact_solve, tree_fit);
criterion_main!(benches);
