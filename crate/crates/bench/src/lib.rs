//! Seeded fixtures shared by the benchmarks.

use linescribe::charnet::{build_network, NetworkConfig, NetworkParams};
use linescribe::decode::Lexicon;
use linescribe::lm::NGramModel;
use linescribe::synth::{render_line, sample_transcripts, GlyphSet};
use linescribe::textline::{extract_windows, WindowConfig, WindowSequence};
use linescribe::{Alphabet, EmissionMatrix, LabelSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LETTERS: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

pub fn alphabet() -> Alphabet {
    Alphabet::new(LETTERS.chars()).expect("non-empty alphabet")
}

/// Emissions with random logits in [-4, 4).
pub fn emissions(frames: usize, classes: usize, seed: u64) -> EmissionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits: Vec<f64> = (0..frames * classes).map(|_| rng.gen_range(-4.0..4.0)).collect();
    EmissionMatrix::from_logits(frames, classes, &logits).expect("finite logits")
}

pub fn target(len: usize, classes: usize, seed: u64) -> LabelSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelSequence::new((0..len).map(|_| rng.gen_range(1..classes)).collect()).expect("blank-free")
}

pub fn language_model() -> NGramModel {
    let corpus: String = sample_transcripts(&alphabet(), 2000, (2, 8), 11)
        .expect("valid range")
        .into_iter()
        .map(|(w, _)| w + " ")
        .collect();
    NGramModel::train(&corpus, 5, alphabet(), 0.9).expect("non-empty corpus")
}

pub fn lexicon(size: usize) -> Lexicon {
    let words: Vec<String> = sample_transcripts(&alphabet(), size, (3, 10), 12)
        .expect("valid range")
        .into_iter()
        .map(|(w, _)| w)
        .collect();
    Lexicon::from_words(words.iter().map(String::as_str), &alphabet()).expect("alphabet words")
}

pub fn desk_network() -> NetworkParams {
    build_network(&NetworkConfig::desk(LETTERS.len() + 1, 1, 3)).expect("valid desk config")
}

/// Windows of one rendered 256-pixel line.
pub fn line_windows() -> WindowSequence {
    let glyphs = GlyphSet::generate(alphabet(), 7).expect("glyphs");
    let (raw, _) = render_line(&glyphs, "benchmark", 1).expect("known characters");
    let cfg = WindowConfig::single_scale();
    extract_windows(&cfg.normalize(&raw).expect("normalizes"), &cfg).expect("fits")
}
