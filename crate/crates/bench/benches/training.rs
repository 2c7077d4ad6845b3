use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dwalign::dwa;
use dwalign::fa_align;
use dwalign_bench::{dwa_config, dwa_model, fixture};

fn fa_e_step(c: &mut Criterion) {
    let fx = fixture(2000);
    let mut group = c.benchmark_group("fa");
    for threads in [1, 4] {
        group.bench_with_input(BenchmarkId::new("collect_counts", threads), &threads, |b, &t| {
            b.iter(|| fa_align::collect_counts(black_box(&fx.corpus), &fx.fa, t))
        });
    }
    group.finish();
}

fn dwa_sentence_gradient(c: &mut Criterion) {
    let fx = fixture(200);
    let null_id = fx.corpus.src_vocab().null_id().unwrap();
    let pair = &fx.corpus.pairs()[0];
    let gamma = dwa::frozen_posteriors(pair, &fx.fa, null_id);
    let mut group = c.benchmark_group("dwa_sentence_gradient");
    for (d, k) in [(16, 0), (100, 0), (100, 3)] {
        let model = dwa_model(&fx, d, k);
        group.bench_function(format!("d{d}_k{k}"), |b| {
            b.iter(|| dwa::sentence_gradient(black_box(pair), &gamma, &model.params, &model.classes, model.lambda))
        });
    }
    group.finish();
}

fn dwa_epoch(c: &mut Criterion) {
    let fx = fixture(2000);
    let mut group = c.benchmark_group("dwa_epoch");
    group.sample_size(10);
    for threads in [1, 4] {
        let cfg = dwalign::dwa::DwaTrainConfig {
            threads,
            ..dwa_config(16, 0, 1)
        };
        group.bench_with_input(BenchmarkId::new("d16", threads), &cfg, |b, cfg| {
            b.iter(|| dwa::train_dwa(black_box(&fx.corpus), &fx.fa, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fa_e_step, dwa_sentence_gradient, dwa_epoch);
criterion_main!(benches);
