//! Transcription of emission matrices.
//!
//! * [`best_path_decode`] collapses the per-frame argmax path.
//! * [`token_passing_decode`] picks the lexicon word with the best single
//!   alignment.
//! * [`beam_search_decode`] is prefix beam search with an optional
//!   character language model weighted by `alpha` and per-frame pruning to
//!   the `candidate_count` most likely labels.
//! * [`exhaustive_decode_oracle`] scores every label sequence exactly and
//!   serves as the reference for the beam search.

mod beam;
mod lexicon;
mod oracle;
mod token_passing;

pub use beam::{beam_search_decode, beam_search_final_beam, BeamHypothesis};
pub use lexicon::Lexicon;
pub use oracle::{exhaustive_decode_oracle, exhaustive_ranking, ORACLE_LIMIT};
pub use token_passing::{token_passing_decode, viterbi_word_score, WordMatch};

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::ctc::{collapse, EmissionMatrix, LabelSequence};
use crate::error::{Error, Result};
use crate::lm::CharLm;

/// A decoded transcription and its score (natural log).
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub labels: LabelSequence,
    pub log_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Naive,
    Lexicon,
    Beam,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Lexicon => "lexicon",
            Method::Beam => "beam",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "lexicon" => Ok(Method::Lexicon),
            "beam" => Ok(Method::Beam),
            other => Err(Error::invalid(format!("unknown decoding method {other:?}"))),
        }
    }
}

/// Beam-search settings.
#[derive(Clone, Copy)]
pub struct DecodeOptions<'a> {
    /// Prefixes kept per frame.
    pub beam_width: usize,
    /// Non-blank labels considered for extension per frame.
    pub candidate_count: usize,
    /// Language-model exponent; 0 disables the model entirely.
    pub alpha: f64,
    pub lm: Option<&'a dyn CharLm>,
}

impl Default for DecodeOptions<'_> {
    fn default() -> Self {
        DecodeOptions {
            beam_width: 32,
            candidate_count: 10,
            alpha: 1.0,
            lm: None,
        }
    }
}

impl fmt::Debug for DecodeOptions<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecodeOptions")
            .field("beam_width", &self.beam_width)
            .field("candidate_count", &self.candidate_count)
            .field("alpha", &self.alpha)
            .field("lm", &self.lm.is_some())
            .finish()
    }
}

impl DecodeOptions<'_> {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        if self.candidate_count == 0 || self.candidate_count > classes {
            return Err(Error::invalid(format!(
                "candidate count {} outside 1..={classes}",
                self.candidate_count
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be a finite non-negative number"));
        }
        if self.alpha > 0.0 && self.lm.is_none() {
            return Err(Error::invalid("alpha > 0 requires a language model"));
        }
        Ok(())
    }

    /// The model consulted during search, or `None` when it has no effect.
    pub(crate) fn active_lm(&self) -> Option<&dyn CharLm> {
        if self.alpha > 0.0 {
            self.lm
        } else {
            None
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Concatenates the per-frame argmax classes and collapses the result.
pub fn best_path_decode(emissions: &EmissionMatrix) -> Decoded {
    let mut path = Vec::with_capacity(emissions.frames());
    let mut log_score = 0.0;
    for t in 0..emissions.frames() {
        let row = emissions.row(t);
        let k = argmax(row);
        log_score += row[k];
        path.push(k);
    }
    Decoded {
        labels: collapse(&path),
        log_score,
    }
}

/// Length-normalized ranking score: `log Pr / |y|`, with the empty
/// transcription left unnormalized.
pub(crate) fn normalized_score(log_prob: f64, len: usize) -> f64 {
    if len == 0 {
        log_prob
    } else {
        log_prob / len as f64
    }
}

/// Total order on candidates: higher score first, then shorter, then
/// lexicographically smaller label sequence.
pub(crate) fn rank(a: (f64, &LabelSequence), b: (f64, &LabelSequence)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.len().cmp(&b.1.len()))
        .then_with(|| a.1.cmp(b.1))
}
