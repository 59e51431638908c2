use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mixflow_core::agent::{evaluate, Policy, QNetwork};
use mixflow_core::dynamics::EntryControl;
use mixflow_core::env::{EpisodeConfig, RewardParams};
use mixflow_core::experiment::evaluate_baseline;
use mixflow_core::parallel::PARALLEL_ENABLED;
use mixflow_core::topology::{builtin_fourway, fourway_demand};

const RUNS: usize = 8;

fn episode(rv_rate: f64) -> (Arc<mixflow_core::topology::Network>, EpisodeConfig) {
    let net = Arc::new(builtin_fourway(1));
    let demand = fourway_demand(&net, 700.0, 0.6, 0.2, rv_rate);
    let ep = EpisodeConfig {
        horizon: 200.0,
        ..EpisodeConfig::new(demand, 5)
    };
    (net, ep)
}

fn modes() -> Vec<(&'static str, bool)> {
    let mut m = vec![("sequential", false)];
    if PARALLEL_ENABLED {
        m.push(("parallel", true));
    }
    m
}

fn baseline(c: &mut Criterion) {
    let (net, ep) = episode(0.0);
    let mut g = c.benchmark_group("baseline_eval");
    g.sample_size(10);
    for (name, par) in modes() {
        g.bench_with_input(BenchmarkId::new(name, RUNS), &par, |b, &par| {
            b.iter(|| black_box(evaluate_baseline(net.clone(), &ep, &EntryControl::Unsignalized, RUNS, par).unwrap()))
        });
    }
    g.finish();
}

fn greedy(c: &mut Criterion) {
    let (net, ep) = episode(0.6);
    let q = QNetwork::new(
        net.observation_dim(),
        &[64, 64],
        true,
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    let policy = Policy::new(q, "bench");
    let mut g = c.benchmark_group("rl_eval");
    g.sample_size(10);
    for (name, par) in modes() {
        g.bench_with_input(BenchmarkId::new(name, RUNS), &par, |b, &par| {
            b.iter(|| black_box(evaluate(&policy, net.clone(), &ep, RewardParams::default(), RUNS, par).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, baseline, greedy);
criterion_main!(benches);
