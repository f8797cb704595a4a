use std::time::Instant;

use linescribe::charnet::TrainSchedule;
use linescribe::decode::Lexicon;
use linescribe::harness::{evaluate, DecoderConfig, NetProfile, TrainConfig, Trainer};
use linescribe::synth::{generate_dataset, sample_transcripts, GlyphSet};
use linescribe::textline::{load_manifest, WindowConfig};
use linescribe::Alphabet;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T
where
    T::Err: std::fmt::Debug,
{
    std::env::args().nth(i).map_or(default, |s| s.parse().unwrap())
}

fn main() {
    let n: usize = arg(1, 2000);
    let epochs: usize = arg(2, 3);
    let lr: f64 = arg(3, 0.003);
    let batch: usize = arg(4, 4);
    let pad: usize = arg(5, 120);
    let momentum: f64 = arg(6, 0.9);
    let decay_at: usize = arg(7, 0);
    let dir = tempfile::tempdir().unwrap();
    let alphabet = Alphabet::new("abcdef".chars()).unwrap();
    let glyphs = GlyphSet::generate(alphabet.clone(), 7).unwrap();
    let train = generate_dataset(&glyphs, n, (1, 5), 1, dir.path().join("train")).unwrap();
    let test = generate_dataset(&glyphs, 200, (1, 5), 2, dir.path().join("test")).unwrap();
    let cfg = TrainConfig {
        schedule: TrainSchedule {
            initial_lr: lr,
            decay_epochs: if decay_at > 0 { vec![decay_at] } else { vec![] },
            epoch_fraction: 1.0,
            momentum,
            ..TrainSchedule::default()
        },
        epochs,
        batch_lines: batch,
        seed: 3,
        ..TrainConfig::new(
            NetProfile::Desk,
            WindowConfig {
                pad_width: pad,
                ..WindowConfig::single_scale()
            },
        )
    };
    let records = load_manifest(&train).unwrap();
    let test_records = load_manifest(&test).unwrap();
    let lexicons: Vec<Lexicon> = test_records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut words = vec![rec.transcript.clone()];
            for (w, _) in sample_transcripts(&alphabet, 40, (1, 5), 1000 + i as u64).unwrap() {
                if words.len() < 20 && !words.contains(&w) {
                    words.push(w);
                }
            }
            Lexicon::from_words(words.iter().map(String::as_str), &alphabet).unwrap()
        })
        .collect();
    let start = Instant::now();
    let mut trainer = Trainer::new(&records, &alphabet, &cfg).unwrap();
    for _ in 0..epochs {
        let s = trainer.train_epoch().unwrap();
        let model = trainer.model();
        let r = evaluate(model, &test_records, &DecoderConfig::naive(), 1, false).unwrap();
        let mut correct = 0;
        for (rec, lex) in test_records.iter().zip(&lexicons) {
            let e = model.emissions_for_file(&rec.resolved).unwrap();
            let (h, _) = DecoderConfig::lexicon(lex.clone()).transcribe(&e, &alphabet).unwrap();
            correct += usize::from(h == rec.transcript);
        }
        eprintln!(
            "epoch {} lr {} loss {:.4} naive {:.3} AR {:.4} lexicon {:.3} ({:.0}s)",
            s.epoch,
            s.learning_rate,
            s.mean_loss,
            r.word_accuracy,
            r.accurate_rate.unwrap(),
            correct as f64 / 200.0,
            start.elapsed().as_secs_f64()
        );
        if s.epoch == epochs {
            let t = evaluate(model, &records[..200], &DecoderConfig::naive(), 1, false).unwrap();
            eprintln!("train naive {:.3}", t.word_accuracy);
            for l in r.lines.iter().filter(|l| l.truth != l.hypothesis) {
                eprintln!("  {} {:?} -> {:?}", l.line_id, l.truth, l.hypothesis);
            }
        }
    }
}
