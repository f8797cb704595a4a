use std::collections::HashSet;
use std::path::Path;

use crate::alphabet::Alphabet;
use crate::ctc::LabelSequence;
use crate::error::{Error, Result};

/// A set of candidate words, kept in first-seen order.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    words: Vec<LabelSequence>,
}

impl Lexicon {
    /// Duplicates are dropped; empty words are rejected.
    pub fn new(words: impl IntoIterator<Item = LabelSequence>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for w in words {
            if w.is_empty() {
                return Err(Error::invalid("lexicon contains an empty word"));
            }
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("lexicon is empty"));
        }
        Ok(Lexicon { words: out })
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>, alphabet: &Alphabet) -> Result<Self> {
        let encoded = words
            .into_iter()
            .map(|w| alphabet.encode(w).and_then(LabelSequence::new))
            .collect::<Result<Vec<_>>>()?;
        Self::new(encoded)
    }

    /// One word per line; blank lines are ignored.
    pub fn parse(text: &str, alphabet: &Alphabet) -> Result<Self> {
        Self::from_words(
            text.lines()
                .map(|l| l.strip_suffix('\r').unwrap_or(l))
                .filter(|l| !l.is_empty()),
            alphabet,
        )
    }

    pub fn load(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, alphabet)
    }

    pub fn words(&self) -> &[LabelSequence] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
