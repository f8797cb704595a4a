//! Character n-gram language model with fixed-weight recursive
//! interpolation:
//!
//! ```text
//! P(k | h) = λ · P_ml(k | h) + (1 − λ) · P(k | h without its first char)
//! P(k | ε) = λ · P_ml(k) + (1 − λ) / |alphabet|
//! ```
//!
//! A context never seen in training contributes no maximum-likelihood term
//! and falls through to the shorter context. Counts are collected within
//! whitespace-delimited words only.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::alphabet::Alphabet;
use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_LAMBDA: f64 = 0.9;

/// Character-level transition probabilities over alphabet labels, as used by
/// the beam-search decoder. `history` holds the labels decoded so far.
pub trait CharLm {
    fn log_prob(&self, label: usize, history: &[usize]) -> f64;
}

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<usize, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    lambda: f64,
    alphabet: Alphabet,
    /// Keyed by context (possibly empty), in label space.
    contexts: BTreeMap<Vec<usize>, ContextCounts>,
    skipped_chars: u64,
}

impl NGramModel {
    pub fn train(corpus: &str, order: usize, alphabet: Alphabet, lambda: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::invalid(format!("lambda {lambda} outside [0, 1)")));
        }
        let mut model = NGramModel {
            order,
            lambda,
            alphabet,
            contexts: BTreeMap::new(),
            skipped_chars: 0,
        };
        let mut seen = 0u64;
        for word in corpus.split_whitespace() {
            let mut labels = Vec::with_capacity(word.len());
            for c in word.chars() {
                match model.alphabet.label_of(c) {
                    Some(l) => labels.push(l),
                    None => model.skipped_chars += 1,
                }
            }
            seen += labels.len() as u64;
            model.add_word(&labels);
        }
        if seen == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(model)
    }

    fn add_word(&mut self, labels: &[usize]) {
        for i in 0..labels.len() {
            for ctx_len in 0..self.order.min(i + 1) {
                let ctx = labels[i - ctx_len..i].to_vec();
                let entry = self.contexts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(labels[i]).or_insert(0) += 1;
            }
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Corpus characters dropped because they are outside the alphabet.
    pub fn skipped_chars(&self) -> u64 {
        self.skipped_chars
    }

    /// Count of `symbol` following `context` (both as text).
    pub fn count(&self, context: &str, symbol: char) -> u64 {
        let (Ok(ctx), Some(sym)) = (self.alphabet.encode(context), self.alphabet.label_of(symbol))
        else {
            return 0;
        };
        self.contexts
            .get(&ctx)
            .and_then(|c| c.next.get(&sym))
            .copied()
            .unwrap_or(0)
    }

    /// Interpolated probability of `label` after `history` (labels).
    pub fn prob(&self, label: usize, history: &[usize]) -> f64 {
        let keep = history.len().min(self.order - 1);
        let history = &history[history.len() - keep..];
        let mut p = 1.0 / self.alphabet.len() as f64;
        // Shortest context first: unigram, then bigram, ...
        for ctx_len in 0..=keep {
            let ctx = &history[keep - ctx_len..];
            if let Some(c) = self.contexts.get(ctx) {
                let ml = c.next.get(&label).copied().unwrap_or(0) as f64 / c.total as f64;
                p = self.lambda * ml + (1.0 - self.lambda) * p;
            }
        }
        p
    }

    /// `ln P(k | history)` for a character; only the last `order − 1`
    /// characters of history matter.
    pub fn lm_log_prob(&self, k: char, history: &str) -> Result<f64> {
        let label = self.alphabet.label_of(k).ok_or(Error::UnknownSymbol(k))?;
        let history = self.alphabet.encode(history)?;
        Ok(self.prob(label, &history).ln())
    }

    /// Text serialization: header, alphabet line, then one
    /// `context TAB symbol TAB count` record per observed n-gram, ordered by
    /// context length and then lexicographically.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "CHARLM v1 {} {:?} {}\n",
            self.order,
            self.lambda,
            self.alphabet.len()
        );
        out.extend(self.alphabet.chars());
        out.push('\n');
        let mut keys: Vec<&Vec<usize>> = self.contexts.keys().collect();
        keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        for ctx in keys {
            let ctx_text = self.alphabet.decode(ctx);
            for (&sym, &n) in &self.contexts[ctx].next {
                out.push_str(&ctx_text);
                out.push('\t');
                out.extend(self.alphabet.char_of(sym));
                out.push('\t');
                out.push_str(&n.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn read_text(reader: impl Read) -> Result<Self> {
        let bad = |msg: String| Error::IncompatibleModel(msg);
        let mut lines = BufReader::new(reader).lines();
        let mut next_line = |what: &str| -> Result<Option<String>> {
            match lines.next() {
                None => Ok(None),
                Some(Ok(l)) => Ok(Some(l)),
                Some(Err(e)) => Err(Error::IncompatibleModel(format!("reading {what}: {e}"))),
            }
        };
        let header = next_line("header")?.ok_or_else(|| bad("empty model file".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        let (order, lambda, size) = match fields.as_slice() {
            ["CHARLM", "v1", order, lambda, size] => (
                order.parse::<usize>().map_err(|_| bad(format!("bad order {order:?}")))?,
                lambda.parse::<f64>().map_err(|_| bad(format!("bad lambda {lambda:?}")))?,
                size.parse::<usize>().map_err(|_| bad(format!("bad alphabet size {size:?}")))?,
            ),
            _ => return Err(bad(format!("unrecognized header {header:?}"))),
        };
        let alpha_line = next_line("alphabet")?.ok_or_else(|| bad("missing alphabet line".into()))?;
        let alphabet = Alphabet::new(alpha_line.chars()).map_err(|e| bad(e.to_string()))?;
        if alphabet.len() != size || order == 0 || !(0.0..1.0).contains(&lambda) {
            return Err(bad("header does not match alphabet or parameters".into()));
        }
        let mut contexts: BTreeMap<Vec<usize>, ContextCounts> = BTreeMap::new();
        while let Some(line) = next_line("counts")? {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let [ctx, sym, n] = parts.as_slice() else {
                return Err(bad(format!("bad count record {line:?}")));
            };
            let ctx = alphabet.encode(ctx).map_err(|e| bad(e.to_string()))?;
            if ctx.len() >= order {
                return Err(bad(format!("context longer than order in {line:?}")));
            }
            let mut sym_chars = sym.chars();
            let sym = match (sym_chars.next(), sym_chars.next()) {
                (Some(c), None) => alphabet.label_of(c).ok_or(Error::UnknownSymbol(c))?,
                _ => return Err(bad(format!("bad symbol in {line:?}"))),
            };
            let n: u64 = n.parse().map_err(|_| bad(format!("bad count in {line:?}")))?;
            let entry = contexts.entry(ctx).or_default();
            entry.total += n;
            *entry.next.entry(sym).or_insert(0) += n;
        }
        Ok(NGramModel {
            order,
            lambda,
            alphabet,
            contexts,
            skipped_chars: 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(file)
    }
}

impl CharLm for NGramModel {
    fn log_prob(&self, label: usize, history: &[usize]) -> f64 {
        self.prob(label, history).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ab() -> Alphabet {
        Alphabet::new("ab".chars()).unwrap()
    }

    fn abab() -> NGramModel {
        NGramModel::train("abab", 2, ab(), 0.9).unwrap()
    }

    #[test]
    fn hand_counts() {
        let m = abab();
        assert_eq!(m.count("", 'a'), 2);
        assert_eq!(m.count("", 'b'), 2);
        assert_eq!(m.count("a", 'b'), 2);
        assert_eq!(m.count("b", 'a'), 1);

        let m = NGramModel::train("ab ba", 2, ab(), 0.9).unwrap();
        assert_eq!(m.count("a", 'b'), 1);
        assert_eq!(m.count("b", 'a'), 1);
        // no bigram across the space
        assert_eq!(m.count("b", 'b'), 0);
    }

    #[test]
    fn hand_interpolation() {
        let m = abab();
        let pba = m.lm_log_prob('b', "a").unwrap().exp();
        let paa = m.lm_log_prob('a', "a").unwrap().exp();
        assert!((pba - 0.95).abs() < 1e-15);
        assert!((paa - 0.05).abs() < 1e-15);
        assert!((pba + paa - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_char_corpus() {
        let m = NGramModel::train("a", 5, ab(), 0.9).unwrap();
        let pa = m.lm_log_prob('a', "aaaa").unwrap();
        let pb = m.lm_log_prob('b', "aaaa").unwrap();
        assert!(pa > pb);
        assert!((pa.exp() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(NGramModel::train("  \n", 2, ab(), 0.9), Err(Error::EmptyCorpus)));
        assert!(matches!(NGramModel::train("xyz", 2, ab(), 0.9), Err(Error::EmptyCorpus)));
        assert!(matches!(abab().lm_log_prob('z', ""), Err(Error::UnknownSymbol('z'))));
        let m = NGramModel::train("axb", 2, ab(), 0.9).unwrap();
        assert_eq!(m.skipped_chars(), 1);
    }

    #[test]
    fn unseen_context_falls_through() {
        let m = NGramModel::train("ab", 3, ab(), 0.9).unwrap();
        let total: f64 = ['a', 'b'].iter().map(|&c| m.lm_log_prob(c, "bb").unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // "bb" and "b" unseen as contexts: unigram mixture
        let uni = m.lm_log_prob('a', "").unwrap();
        assert_eq!(m.lm_log_prob('a', "bb").unwrap(), uni);
    }

    #[test]
    fn more_ab_never_lowers_p_b_given_a() {
        let mut corpus = String::from("abba baab aab");
        let mut prev = 0.0;
        for _ in 0..5 {
            let m = NGramModel::train(&corpus, 3, ab(), 0.9).unwrap();
            let p = m.lm_log_prob('b', "a").unwrap();
            assert!(p >= prev || prev == 0.0);
            prev = p;
            corpus.push_str(" ab");
        }
    }

    #[test]
    fn text_round_trip_and_bad_header() {
        let m = abab();
        let back = NGramModel::read_text(m.to_text().as_bytes()).unwrap();
        assert_eq!(back.lm_log_prob('b', "a").unwrap(), m.lm_log_prob('b', "a").unwrap());
        assert!(matches!(
            NGramModel::read_text("CHARLM v2 2 0.9 2\nab\n".as_bytes()),
            Err(Error::IncompatibleModel(_))
        ));
        assert!(matches!(
            NGramModel::read_text("ARPA\n".as_bytes()),
            Err(Error::IncompatibleModel(_))
        ));
    }

    #[test]
    fn round_trip_large_corpus_queries() {
        let alphabet = Alphabet::new("abcdefgh".chars()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let words: Vec<String> = (0..1000)
            .map(|_| {
                let n = rng.gen_range(1..=8);
                (0..n).map(|_| alphabet.chars()[rng.gen_range(0..8)]).collect()
            })
            .collect();
        let m = NGramModel::train(&words.join(" "), 5, alphabet.clone(), 0.9).unwrap();
        let back = NGramModel::read_text(m.to_text().as_bytes()).unwrap();
        let mut max_delta = 0.0f64;
        for _ in 0..10_000 {
            let k = rng.gen_range(1..=8);
            let h: Vec<usize> = (0..rng.gen_range(0..7)).map(|_| rng.gen_range(1..=8)).collect();
            max_delta = max_delta.max((m.log_prob(k, &h) - back.log_prob(k, &h)).abs());
        }
        assert!(max_delta <= 1e-12);
    }

    proptest! {
        #[test]
        fn distributions_normalize(seed in any::<u64>(), order in 1usize..6) {
            let alphabet = Alphabet::new("abcd".chars()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corpus: String = (0..200)
                .map(|i| if i % 7 == 6 { ' ' } else { alphabet.chars()[rng.gen_range(0..4)] })
                .collect();
            let m = NGramModel::train(&corpus, order, alphabet, 0.9).unwrap();
            let h: Vec<usize> = (0..rng.gen_range(0..8)).map(|_| rng.gen_range(1..=4)).collect();
            let total: f64 = (1..=4).map(|k| m.prob(k, &h)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn zero_lambda_is_uniform(seed in any::<u64>()) {
            let alphabet = Alphabet::new("abc".chars()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corpus: String = (0..50).map(|_| alphabet.chars()[rng.gen_range(0..3)]).collect();
            let m = NGramModel::train(&corpus, 3, alphabet, 0.0).unwrap();
            for k in 1..=3 {
                prop_assert_eq!(m.prob(k, &[1, 2]), 1.0 / 3.0);
            }
        }
    }
}
