use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dagcn::autodiff::Tape;
use dagcn::data::{generate_synthetic, SyntheticSpec};
use dagcn::model::{propagate, ModelConfig, ModelParams, ParamVars, PropagationPlan};
use dagcn::training::{loss_and_gradients, training_pairs, TrainingPair};
use dagcn::{build_cds_graph, GraphOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n_accounts: usize) -> dagcn::data::SyntheticCorpus {
    generate_synthetic(&SyntheticSpec {
        n_accounts,
        rng_seed: 1,
        ..Default::default()
    })
    .unwrap()
}

fn bench_propagate(c: &mut Criterion) {
    let mut group = c.benchmark_group("propagate");
    for n in [50, 200, 800] {
        let corpus = corpus(n);
        let graph = build_cds_graph(
            &corpus.sequences,
            corpus.vocab.sizes(),
            &GraphOptions::default(),
        )
        .unwrap();
        let config = ModelConfig {
            d: 32,
            d_prime: 32,
            ..Default::default()
        };
        let params = ModelParams::init(&config, graph.sizes(), &mut ChaCha8Rng::seed_from_u64(0));
        let plan = PropagationPlan::new(&graph, config.h);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let pv = ParamVars::register(&mut tape, &params);
                black_box(propagate(&mut tape, &plan, &pv, &config));
            })
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let corpus = corpus(200);
    let graph = build_cds_graph(
        &corpus.sequences,
        corpus.vocab.sizes(),
        &GraphOptions::default(),
    )
    .unwrap();
    let pairs = training_pairs(&corpus.sequences);
    let batch: Vec<&TrainingPair> = pairs.iter().take(128).collect();
    let mut group = c.benchmark_group("train_step");
    for h in [1, 2, 4] {
        let config = ModelConfig {
            d: 32,
            d_prime: 32,
            h,
            ..Default::default()
        };
        let params = ModelParams::init(&config, graph.sizes(), &mut ChaCha8Rng::seed_from_u64(0));
        let plan = PropagationPlan::new(&graph, h);
        group.bench_with_input(BenchmarkId::new("h", h), &h, |b, _| {
            b.iter(|| black_box(loss_and_gradients(&params, &plan, &config, &batch, 1.0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_propagate, bench_train_step);
criterion_main!(benches);
