use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use linescribe::ctc::{ctc_logit_gradient, forward_backward};
use linescribe::decode::{beam_search_decode, best_path_decode, token_passing_decode, DecodeOptions};
use linescribe_bench as fx;

const FRAMES: usize = 57;
const CLASSES: usize = 37;

fn ctc(c: &mut Criterion) {
    let e = fx::emissions(FRAMES, CLASSES, 1);
    let y = fx::target(12, CLASSES, 2);
    c.bench_function("forward_backward 57x37 len 12", |b| {
        b.iter(|| forward_backward(black_box(&e), black_box(&y)).unwrap())
    });
    let logits: Vec<f64> = e.log_probs().to_vec();
    c.bench_function("ctc_logit_gradient 57x37 len 12", |b| {
        b.iter(|| ctc_logit_gradient(black_box(&logits), FRAMES, CLASSES, &y).unwrap())
    });
}

fn decoders(c: &mut Criterion) {
    let e = fx::emissions(FRAMES, CLASSES, 3);
    c.bench_function("best_path 57x37", |b| b.iter(|| best_path_decode(black_box(&e))));

    let lm = fx::language_model();
    let opts = DecodeOptions {
        beam_width: 32,
        candidate_count: 10,
        alpha: 1.0,
        lm: Some(&lm),
    };
    c.bench_function("beam N32 CN10 with 5-gram", |b| {
        b.iter(|| beam_search_decode(black_box(&e), &opts).unwrap())
    });

    let lexicon = fx::lexicon(1000);
    c.bench_function("token passing 1000 words", |b| {
        b.iter(|| token_passing_decode(black_box(&e), &lexicon, true).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let net = fx::desk_network();
    let windows = fx::line_windows();
    let mut group = c.benchmark_group("desk net");
    group.sample_size(20);
    group.bench_function("emissions for a 256-px line", |b| {
        b.iter(|| net.emissions_for_line(black_box(&windows)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, ctc, decoders, network);
criterion_main!(benches);
