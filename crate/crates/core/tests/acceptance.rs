//! Acceptance checks, one line per criterion. Pass criterion numbers as
//! arguments to run a subset.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use linescribe::charnet::{build_network, NetworkConfig, TrainSchedule};
use linescribe::ctc::{ctc_logit_gradient, forward_backward, label_log_prob_bruteforce, path_log_prob};
use linescribe::decode::{
    beam_search_decode, exhaustive_ranking, token_passing_decode, DecodeOptions, Lexicon,
};
use linescribe::harness::{accurate_rate, edit_counts, evaluate, DecoderConfig, Model, NetProfile, TrainConfig, Trainer};
use linescribe::lm::{CharLm, NGramModel};
use linescribe::synth::{generate_dataset, sample_transcripts, GlyphSet};
use linescribe::textline::{extract_windows, load_manifest, window_count, GrayImage, TextLineImage, WindowConfig};
use linescribe::{Alphabet, EmissionMatrix, Error, LabelSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Rows drawn as softmax of N(0, spread²) logits.
fn random_emissions(rng: &mut ChaCha8Rng, frames: usize, classes: usize, spread: f64) -> EmissionMatrix {
    let normal = Normal::new(0.0, spread).unwrap();
    let logits: Vec<f64> = (0..frames * classes).map(|_| normal.sample(rng)).collect();
    EmissionMatrix::from_logits(frames, classes, &logits).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, len: usize, classes: usize) -> LabelSequence {
    LabelSequence::new((0..len).map(|_| rng.gen_range(1..classes)).collect()).unwrap()
}

/// All label sequences over `1..classes` of length at most `max_len`.
fn all_sequences(classes: usize, max_len: usize) -> Vec<LabelSequence> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for k in 1..classes {
                let mut s: Vec<usize> = seq.clone();
                s.push(k);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out.into_iter().map(|s| LabelSequence::new(s).unwrap()).collect()
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn ctc_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let frames = rng.gen_range(1..=6);
        let classes = rng.gen_range(2..=4);
        let e = random_emissions(&mut rng, frames, classes, 1.5);
        let len = rng.gen_range(0..=frames);
        let y = random_labels(&mut rng, len, classes);
        let loss = forward_backward(&e, &y).unwrap().loss;
        let brute = label_log_prob_bruteforce(&e, &y).unwrap();
        if loss.is_infinite() && brute == f64::NEG_INFINITY {
            continue;
        }
        worst = worst.max((loss + brute).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 5.0,
        format!("max |loss + log P| = {worst:.2e}, {secs:.2} s"),
    )
}

fn ctc_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let frames = rng.gen_range(1..=5);
        let classes = rng.gen_range(2..=3);
        let e = random_emissions(&mut rng, frames, classes, 1.5);
        let total: f64 = all_sequences(classes, frames)
            .iter()
            .map(|y| (-forward_backward(&e, y).unwrap().loss).exp())
            .sum();
        worst = worst.max((total - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("max |sum - 1| = {worst:.2e}"))
}

fn gradient_correctness() -> Outcome {
    // Fused softmax + CTC gradient on logits.
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let normal = Normal::new(0.0, 1.5).unwrap();
    let h = 1e-6;
    let mut worst_logit = 0.0f64;
    for _ in 0..50 {
        let classes = rng.gen_range(2..=4);
        let len = rng.gen_range(0..=3);
        let y = random_labels(&mut rng, len, classes);
        let frames = rng.gen_range(y.min_frames().max(1)..=5.max(y.min_frames()));
        let mut logits: Vec<f64> = (0..frames * classes).map(|_| normal.sample(&mut rng)).collect();
        let g = ctc_logit_gradient(&logits, frames, classes, &y).unwrap();
        for i in 0..logits.len() {
            let orig = logits[i];
            logits[i] = orig + h;
            let up = ctc_logit_gradient(&logits, frames, classes, &y).unwrap().loss;
            logits[i] = orig - h;
            let down = ctc_logit_gradient(&logits, frames, classes, &y).unwrap().loss;
            logits[i] = orig;
            worst_logit = worst_logit.max(rel_err(g.grad[i], (up - down) / (2.0 * h), 1e-3));
        }
    }

    // Desk-network parameters, sampled coordinates of every tensor.
    let cfg = NetworkConfig::desk(4, 1, 17);
    let mut params = build_network(&cfg).unwrap();
    let frames = 3;
    let patches: Vec<f64> = (0..frames * params.input_len()).map(|_| rng.gen()).collect();
    let y = LabelSequence::new(vec![1, 3]).unwrap();
    let loss_of = |p: &linescribe::charnet::NetworkParams| {
        let pass = p.forward_train(&patches, frames).unwrap();
        ctc_logit_gradient(pass.logits(), frames, p.classes(), &y).unwrap().loss
    };
    let pass = params.forward_train(&patches, frames).unwrap();
    let g = ctc_logit_gradient(pass.logits(), frames, params.classes(), &y).unwrap();
    let grads = params.backward(&pass, &g.grad).unwrap();
    // ReLU and max-pool make the loss piecewise smooth. Where the central
    // differences at h and h/10 disagree, the coordinate straddles a kink
    // within h and is checked against the h/10 difference instead.
    let central = |params: &mut linescribe::charnet::NetworkParams, t: usize, i: usize, h: f64| {
        let orig = params.tensors()[t].data[i];
        params.tensors_mut()[t].data[i] = orig + h;
        let up = loss_of(params);
        params.tensors_mut()[t].data[i] = orig - h;
        let down = loss_of(params);
        params.tensors_mut()[t].data[i] = orig;
        (up - down) / (2.0 * h)
    };
    let h = 1e-5;
    let mut worst_param = 0.0f64;
    let mut worst_at = String::new();
    let (mut checked, mut kinks) = (0, 0);
    for t in 0..params.tensors().len() {
        if !params.tensors()[t].trainable {
            continue;
        }
        let n = params.tensors()[t].data.len();
        for i in rand::seq::index::sample(&mut rng, n, n.min(12)) {
            let coarse = central(&mut params, t, i, h);
            let fine = central(&mut params, t, i, h / 10.0);
            let numeric = if rel_err(coarse, fine, 1e-4) > 1e-4 {
                kinks += 1;
                fine
            } else {
                coarse
            };
            checked += 1;
            let err = rel_err(grads.0[t][i], numeric, 1e-6);
            if err > worst_param {
                worst_param = err;
                worst_at = format!("{}[{i}]", params.tensors()[t].name);
            }
        }
    }
    outcome(
        worst_logit <= 1e-6 && worst_param <= 1e-4,
        format!(
            "logits max rel err {worst_logit:.2e}; desk params max rel err {worst_param:.2e} at {worst_at} \
             over {checked} coordinates ({kinks} straddle a kink within h and use h/10)"
        ),
    )
}

fn toy_lm(classes: usize) -> NGramModel {
    let (letters, corpus) = if classes == 2 {
        ("a", "a aa aaa a")
    } else {
        ("ab", "abba ab baab a bab aab")
    };
    NGramModel::train(corpus, 3, Alphabet::new(letters.chars()).unwrap(), 0.9).unwrap()
}

fn beam_equals_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut compared, mut excluded, mut mismatched) = (0, 0, 0);
    for i in 0..200 {
        let frames = rng.gen_range(1..=5);
        let classes = rng.gen_range(2..=3);
        let e = random_emissions(&mut rng, frames, classes, 2.0);
        let lm = toy_lm(classes);
        let alpha = if i % 2 == 0 { 0.0 } else { 1.0 };
        let lm_ref: Option<&dyn CharLm> = if alpha > 0.0 { Some(&lm) } else { None };
        let ranking = exhaustive_ranking(&e, lm_ref, alpha).unwrap();
        if ranking.len() > 1 && (ranking[0].log_score - ranking[1].log_score).abs() < 1e-12 {
            excluded += 1;
            continue;
        }
        let prefixes: usize = (0..=frames).map(|l| (classes - 1).pow(l as u32)).sum();
        let opts = DecodeOptions {
            beam_width: prefixes,
            candidate_count: classes,
            alpha,
            lm: lm_ref,
        };
        let beam = beam_search_decode(&e, &opts).unwrap();
        compared += 1;
        if beam.labels != ranking[0].labels || (beam.log_score - ranking[0].log_score).abs() > 1e-9 {
            mismatched += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatched == 0 && secs < 30.0,
        format!("{compared} compared, {excluded} near-ties excluded, {mismatched} mismatches, {secs:.2} s"),
    )
}

fn token_passing_equals_viterbi() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut failures = 0;
    let mut infeasible = 0;
    for _ in 0..100 {
        let frames = rng.gen_range(1..=6);
        let classes = rng.gen_range(2..=4);
        let e = random_emissions(&mut rng, frames, classes, 1.5);
        // brute-force best path per collapsed sequence
        let mut best: HashMap<Vec<usize>, f64> = HashMap::new();
        let mut path = vec![0usize; frames];
        'paths: loop {
            let y = linescribe::ctc::collapse(&path).into_vec();
            let lp = path_log_prob(&e, &path).unwrap();
            let slot = best.entry(y).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(lp);
            for slot in path.iter_mut() {
                *slot += 1;
                if *slot < classes {
                    continue 'paths;
                }
                *slot = 0;
            }
            break;
        }
        let size = rng.gen_range(1..=20);
        let words: Vec<LabelSequence> = (0..size)
            .map(|_| {
                let len = rng.gen_range(1..=4);
                random_labels(&mut rng, len, classes)
            })
            .collect();
        let lexicon = Lexicon::new(words).unwrap();
        let scores: Vec<f64> = lexicon
            .words()
            .iter()
            .map(|w| best.get(w.labels()).copied().unwrap_or(f64::NEG_INFINITY))
            .collect();
        let mut oracle = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[oracle] {
                oracle = i;
            }
        }
        match token_passing_decode(&e, &lexicon, true) {
            Ok(m) => {
                if m.word() != oracle || (m.log_score - scores[oracle]).abs() > 1e-9 {
                    failures += 1;
                }
            }
            Err(Error::NoFeasibleWord) => {
                infeasible += 1;
                if scores[oracle] != f64::NEG_INFINITY {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        failures == 0,
        format!("{failures} disagreements in 100 instances ({infeasible} with no feasible word)"),
    )
}

fn lm_correctness() -> Outcome {
    let ab = Alphabet::new("ab".chars()).unwrap();
    let lm = NGramModel::train("abab", 2, ab, 0.9).unwrap();
    let pba = lm.prob(2, &[1]);
    let paa = lm.prob(1, &[1]);
    let fixture = (pba - 0.95).abs() <= 1e-15 && (paa - 0.05).abs() <= 1e-15;

    let letters = "abcdefgh";
    let alphabet = Alphabet::new(letters.chars()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let chars: Vec<char> = letters.chars().collect();
    let corpus: String = (0..3000)
        .map(|_| if rng.gen_bool(0.15) { ' ' } else { chars[rng.gen_range(0..4)] })
        .collect();
    let lm = NGramModel::train(&corpus, 5, alphabet, 0.9).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(0..=8);
        let history: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=8)).collect();
        let total: f64 = (1..=8).map(|k| lm.prob(k, &history)).sum();
        worst = worst.max((total - 1.0).abs());
    }
    outcome(
        fixture && worst <= 1e-9,
        format!("P(b|a) = {pba:?}, P(a|a) = {paa:?}; max |sum - 1| = {worst:.2e} over 100 contexts"),
    )
}

/// Process CPU time in seconds from /proc, or `None` off Linux.
fn cpu_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    let rest = &stat[stat.rfind(')')? + 2..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let utime: f64 = fields.get(11)?.parse().ok()?;
    let stime: f64 = fields.get(12)?.parse().ok()?;
    Some((utime + stime) / 100.0)
}

struct DeskRun {
    lines: usize,
    epochs: usize,
    decay_epochs: Vec<usize>,
}

const DESK_LETTERS: &str = "abcdef";
/// Leaves every 5-glyph line (at most 100 px) at least half a window of
/// right margin, so the last glyph gets a centered window.
const DESK_PAD_WIDTH: usize = 120;

fn desk_train_config(run: &DeskRun) -> TrainConfig {
    TrainConfig {
        schedule: TrainSchedule {
            initial_lr: 0.003,
            decay_factor: 0.3,
            decay_epochs: run.decay_epochs.clone(),
            momentum: 0.9,
            epoch_fraction: 1.0,
        },
        epochs: run.epochs,
        batch_lines: 4,
        seed: 3,
        ..TrainConfig::new(
            NetProfile::Desk,
            WindowConfig {
                pad_width: DESK_PAD_WIDTH,
                ..WindowConfig::single_scale()
            },
        )
    }
}

/// Synthesizes train and held-out sets under `dir` and trains on the first.
fn desk_pipeline(dir: &Path, run: &DeskRun) -> (Model, std::path::PathBuf) {
    let alphabet = Alphabet::new(DESK_LETTERS.chars()).unwrap();
    let glyphs = GlyphSet::generate(alphabet.clone(), 7).unwrap();
    let train = generate_dataset(&glyphs, run.lines, (1, 5), 1, dir.join("train")).unwrap();
    let test = generate_dataset(&glyphs, 200, (1, 5), 2, dir.join("test")).unwrap();
    let records = load_manifest(&train).unwrap();
    let mut trainer = Trainer::new(&records, &alphabet, &desk_train_config(run)).unwrap();
    for _ in 0..run.epochs {
        trainer.train_epoch().unwrap();
    }
    (trainer.into_model(), test)
}

/// The truth plus 19 seeded distractors of the same length distribution.
fn line_lexicon(alphabet: &Alphabet, truth: &str, seed: u64) -> Lexicon {
    let mut words = vec![truth.to_string()];
    for (w, _) in sample_transcripts(alphabet, 200, (1, 5), seed).unwrap() {
        if words.len() == 20 {
            break;
        }
        if !words.contains(&w) {
            words.push(w);
        }
    }
    Lexicon::from_words(words.iter().map(String::as_str), alphabet).unwrap()
}

fn end_to_end_desk_run() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = DeskRun {
        lines: 2000,
        epochs: 2,
        decay_epochs: vec![],
    };
    let (cpu0, wall) = (cpu_seconds(), Instant::now());
    let (model, test) = desk_pipeline(dir.path(), &run);
    let minutes = match (cpu0, cpu_seconds()) {
        (Some(a), Some(b)) => (b - a) / 60.0,
        _ => wall.elapsed().as_secs_f64() / 60.0,
    };
    let records = load_manifest(test).unwrap();
    let naive = evaluate(&model, &records, &DecoderConfig::naive(), 1, false)
        .unwrap()
        .word_accuracy;
    let mut correct = 0;
    for (i, r) in records.iter().enumerate() {
        let lexicon = line_lexicon(&model.alphabet, &r.transcript, 10_000 + i as u64);
        let e = model.emissions_for_file(&r.resolved).unwrap();
        let (text, _) = DecoderConfig::lexicon(lexicon).transcribe(&e, &model.alphabet).unwrap();
        correct += usize::from(text == r.transcript);
    }
    let lexicon = correct as f64 / records.len() as f64;
    outcome(
        naive >= 0.95 && lexicon >= 0.99 && minutes <= 30.0,
        format!(
            "naive {:.1}%, 20-word lexicon {:.1}% on 200 held-out lines; training + synthesis {minutes:.1} CPU-min",
            100.0 * naive,
            100.0 * lexicon
        ),
    )
}

fn determinism() -> Outcome {
    let run = DeskRun {
        lines: 150,
        epochs: 2,
        decay_epochs: vec![2],
    };
    let mut artifacts = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let (model, test) = desk_pipeline(dir.path(), &run);
        let records = load_manifest(test).unwrap();
        let mut outputs = Vec::new();
        for workers in [1, 8] {
            let report = evaluate(&model, &records, &DecoderConfig::naive(), workers, false).unwrap();
            outputs.push((report.lines_tsv(), report.to_json()));
        }
        artifacts.push((model.to_bytes(), outputs));
    }
    let same_ckpt = artifacts[0].0 == artifacts[1].0;
    let same_reports = artifacts[0].1 == artifacts[1].1;
    let same_workers = artifacts.iter().all(|(_, o)| o[0] == o[1]);
    outcome(
        same_ckpt && same_reports && same_workers,
        format!(
            "checkpoints identical: {same_ckpt}, reports identical: {same_reports}, 1 vs 8 workers identical: {same_workers} \
             (runs of {} lines x {} epochs)",
            run.lines, run.epochs
        ),
    )
}

fn geometry() -> Outcome {
    let a = window_count(256, 32, 4).unwrap();
    let b = window_count(512, 40, 8).unwrap();
    let line = |w| TextLineImage::from_image(GrayImage::filled(w, 32, 1.0));
    let single = extract_windows(&line(256), &WindowConfig::single_scale()).unwrap().shape();
    let multi = extract_windows(&line(256), &WindowConfig::multi_scale()).unwrap().shape();
    let wide = WindowConfig {
        window_widths: vec![40],
        stride: 8,
        pad_width: 512,
        ..WindowConfig::single_scale()
    };
    let c = extract_windows(&line(512), &wide).unwrap().positions();
    outcome(
        a == 57 && b == 60 && single == [57, 1, 32, 32] && multi == [57, 3, 32, 32] && c == 60,
        format!("256/32/4 -> {a}, 512/40/8 -> {b}; patches {single:?} and {multi:?}; extracted 512/40/8 -> {c}"),
    )
}

fn metrics() -> Outcome {
    let exact = accurate_rate(&[("abc", "abc")]).unwrap();
    let deletion = accurate_rate(&[("abc", "ab")]).unwrap();
    let insertions = accurate_rate(&[("ab", "abcd")]).unwrap();
    let negative = accurate_rate(&[("a", "bcd")]).unwrap();
    let d = edit_counts("abc", "ab");
    let i = edit_counts("ab", "abcd");
    let pass = exact == 1.0
        && deletion == 2.0 / 3.0
        && d.deletions == 1
        && insertions == 0.0
        && i.insertions == 2
        && negative == -2.0;
    outcome(
        pass,
        format!("AR {exact}, {deletion:.6}, {insertions}, unclamped {negative}"),
    )
}

fn main() {
    let criteria: [Check; 10] = [
        (1, "CTC oracle equivalence", ctc_oracle_equivalence),
        (2, "CTC normalization", ctc_normalization),
        (3, "gradient correctness", gradient_correctness),
        (4, "beam search equals oracle", beam_equals_oracle),
        (5, "token passing equals Viterbi", token_passing_equals_viterbi),
        (6, "language model", lm_correctness),
        (7, "end-to-end desk run", end_to_end_desk_run),
        (8, "determinism", determinism),
        (9, "window geometry", geometry),
        (10, "metrics", metrics),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {verdict} {name}: {} [{:.1} s]",
            result.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
