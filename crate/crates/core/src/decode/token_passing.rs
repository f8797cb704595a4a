//! Lexicon decoding by token passing.
//!
//! Every word is expanded to its blank-augmented state chain
//! `blank l1 blank l2 ... lL blank`. Each state holds the best-scoring token
//! (log path probability plus word history) that reaches it at the current
//! frame; a word's output token is the better of its last two states. A new
//! word can start from the best output token of the previous frame. In
//! single-word mode such tokens are worthless, so the result is the word
//! with the best Viterbi alignment.

use std::rc::Rc;

use super::{argmax, Lexicon};
use crate::alphabet::BLANK;
use crate::ctc::{EmissionMatrix, LabelSequence};
use crate::error::{Error, Result};
use crate::logspace::LOG_ZERO;

/// Best lexicon match: the word sequence (indices into the lexicon) and its
/// path log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct WordMatch {
    pub words: Vec<usize>,
    pub log_score: f64,
}

impl WordMatch {
    /// Last word of the history; the only one in single-word mode.
    pub fn word(&self) -> usize {
        *self.words.last().expect("a match holds at least one word")
    }

    /// Concatenated labels of the matched words.
    pub fn labels(&self, lexicon: &Lexicon) -> LabelSequence {
        let labels = self
            .words
            .iter()
            .flat_map(|&w| lexicon.words()[w].labels().iter().copied())
            .collect();
        LabelSequence::new(labels).expect("lexicon words are blank-free")
    }
}

#[derive(Debug)]
struct History {
    word: usize,
    prev: Option<Rc<History>>,
}

#[derive(Clone, Debug)]
struct Token {
    score: f64,
    history: Option<Rc<History>>,
}

impl Token {
    const DEAD: Token = Token {
        score: LOG_ZERO,
        history: None,
    };

    fn words(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut node = self.history.as_ref();
        while let Some(h) = node {
            out.push(h.word);
            node = h.prev.as_ref();
        }
        out.reverse();
        out
    }
}

fn augmented(word: &LabelSequence) -> Vec<usize> {
    std::iter::once(BLANK)
        .chain(word.labels().iter().flat_map(|&l| [l, BLANK]))
        .collect()
}

fn skip_allowed(states: &[usize], s: usize) -> bool {
    s >= 2 && states[s] != BLANK && states[s] != states[s - 2]
}

/// Picks the best lexicon word (or, without `single_word`, word sequence)
/// for the emissions.
pub fn token_passing_decode(
    emissions: &EmissionMatrix,
    lexicon: &Lexicon,
    single_word: bool,
) -> Result<WordMatch> {
    let classes = emissions.classes();
    if let Some(w) = lexicon
        .words()
        .iter()
        .find(|w| w.labels().iter().any(|&l| l >= classes))
    {
        return Err(Error::invalid(format!(
            "lexicon word {:?} uses labels beyond {classes} classes",
            w.labels()
        )));
    }
    let chains: Vec<Vec<usize>> = lexicon.words().iter().map(augmented).collect();

    // tokens[w][s] at the current frame
    let mut tokens: Vec<Vec<Token>> = Vec::with_capacity(chains.len());
    let mut outputs: Vec<Token> = Vec::with_capacity(chains.len());
    for (w, states) in chains.iter().enumerate() {
        let history = Some(Rc::new(History { word: w, prev: None }));
        let mut toks = vec![Token::DEAD; states.len()];
        toks[0] = Token {
            score: emissions.get(0, states[0]),
            history: history.clone(),
        };
        toks[1] = Token {
            score: emissions.get(0, states[1]),
            history,
        };
        outputs.push(output_token(&toks));
        tokens.push(toks);
    }

    for t in 1..emissions.frames() {
        let best_prev = argmax_token(&outputs);
        let mut next_outputs = Vec::with_capacity(chains.len());
        for (w, states) in chains.iter().enumerate() {
            let entry = match best_prev {
                Some(b) if !single_word => Token {
                    score: outputs[b].score,
                    history: Some(Rc::new(History {
                        word: w,
                        prev: outputs[b].history.clone(),
                    })),
                },
                // a second word in the history is ruled out
                _ => Token::DEAD,
            };
            let prev = &tokens[w];
            let mut cur = Vec::with_capacity(states.len());
            for s in 0..states.len() {
                // Candidates in preference order: stay, advance, skip,
                // then a fresh word entering the chain.
                let mut best = &prev[s];
                if s >= 1 && prev[s - 1].score > best.score {
                    best = &prev[s - 1];
                }
                if skip_allowed(states, s) && prev[s - 2].score > best.score {
                    best = &prev[s - 2];
                }
                if s <= 1 && entry.score > best.score {
                    best = &entry;
                }
                let mut tok = best.clone();
                tok.score += emissions.get(t, states[s]);
                cur.push(tok);
            }
            next_outputs.push(output_token(&cur));
            tokens[w] = cur;
        }
        outputs = next_outputs;
    }

    match argmax_token(&outputs) {
        Some(b) if outputs[b].score > LOG_ZERO => Ok(WordMatch {
            words: outputs[b].words(),
            log_score: outputs[b].score,
        }),
        _ => Err(Error::NoFeasibleWord),
    }
}

fn output_token(states: &[Token]) -> Token {
    let n = states.len();
    if n >= 2 && states[n - 2].score > states[n - 1].score {
        states[n - 2].clone()
    } else {
        states[n - 1].clone()
    }
}

/// First index with the highest score.
fn argmax_token(tokens: &[Token]) -> Option<usize> {
    if tokens.is_empty() {
        return None;
    }
    let scores: Vec<f64> = tokens.iter().map(|t| t.score).collect();
    Some(argmax(&scores))
}

/// Log-probability of the single best path collapsing onto `word`, by
/// Viterbi over its state chain; `-inf` when none exists.
pub fn viterbi_word_score(emissions: &EmissionMatrix, word: &LabelSequence) -> f64 {
    let states = augmented(word);
    let mut cur = vec![LOG_ZERO; states.len()];
    cur[0] = emissions.get(0, states[0]);
    if states.len() > 1 {
        cur[1] = emissions.get(0, states[1]);
    }
    for t in 1..emissions.frames() {
        let prev = cur.clone();
        for s in 0..states.len() {
            let mut best = prev[s];
            if s >= 1 {
                best = best.max(prev[s - 1]);
            }
            if skip_allowed(&states, s) {
                best = best.max(prev[s - 2]);
            }
            cur[s] = best + emissions.get(t, states[s]);
        }
    }
    let n = states.len();
    cur[n - 1].max(if n >= 2 { cur[n - 2] } else { LOG_ZERO })
}
