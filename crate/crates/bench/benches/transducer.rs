use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use tog_bench::{desk_model_and_input, random_labels, random_lattice};
use tog_core::decode::{beam_decode, greedy_decode, BeamOptions};
use tog_core::loss::{rnnt_nll, LossLattice};
use tog_core::model::transducer_loss_on_tape;
use tog_core::substrate::{Gradients, Tape};

fn loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("rnnt_loss");
    let k = 29;
    for &(t, u) in &[(50, 20), (150, 60)] {
        let (lp, labels) = random_lattice(t, u, k, 3);
        group.bench_with_input(BenchmarkId::new("nll", format!("{t}x{u}")), &(), |b, _| {
            b.iter(|| rnnt_nll(black_box(&lp), t, k, black_box(&labels)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("nll+grad", format!("{t}x{u}")), &(), |b, _| {
            b.iter(|| LossLattice::new(black_box(&lp), t, k, &labels).unwrap().grad_logits().unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let (model, x) = desk_model_and_input(160, 5);
    let labels = random_labels(&model, 30, 6);
    let mut group = c.benchmark_group("desk_model");
    group.sample_size(20);
    group.bench_function("encoder_forward", |b| b.iter(|| model.encode(black_box(&x)).unwrap()));
    group.bench_function("loss_and_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (loss, _) = transducer_loss_on_tape(&mut tape, &model.params, &model.ids, &x.frames, &labels).unwrap();
            let mut g = Gradients::for_store(&model.params);
            tape.backward(loss, &mut g).unwrap();
            g
        })
    });
    group.bench_function("greedy_decode", |b| b.iter(|| greedy_decode(&model, black_box(&x)).unwrap()));
    group.bench_function("beam_decode_4", |b| b.iter(|| beam_decode(&model, black_box(&x), BeamOptions::plain(4)).unwrap()));
    group.finish();
}

criterion_group!(benches, loss, model);
criterion_main!(benches);
