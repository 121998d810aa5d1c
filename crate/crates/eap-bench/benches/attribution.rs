use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use eap_bench::{bench_pair, bench_spec, bench_weights};
use eap_core::attribution::{eap_scores, exact_patch_sweep};

fn bench_forward(c: &mut Criterion) {
    let weights = bench_weights();
    let pair = bench_pair();
    c.bench_function("forward", |b| {
        b.iter(|| weights.forward(black_box(&pair.clean)).unwrap())
    });
    c.bench_function("forward_captured_plus_backward", |b| {
        let spec = bench_spec();
        b.iter(|| {
            let run = weights.forward_captured(black_box(&pair.clean)).unwrap();
            let grad = spec.gradient(run.logits()).unwrap();
            weights.backward(&run, &grad).unwrap()
        })
    });
}

fn bench_eap_vs_oracle(c: &mut Criterion) {
    let weights = bench_weights();
    let pair = bench_pair();
    let spec = bench_spec();
    let pairs = vec![pair.clone()];
    c.bench_function("eap_scores_one_pair_46_edges", |b| {
        b.iter(|| eap_scores(&weights, black_box(&pairs), &spec).unwrap())
    });
    c.bench_function("exact_patch_sweep_46_edges", |b| {
        b.iter(|| exact_patch_sweep(&weights, black_box(&pair), &spec).unwrap())
    });
}

criterion_group!(benches, bench_forward, bench_eap_vs_oracle);
criterion_main!(benches);
