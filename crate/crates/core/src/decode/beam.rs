//! Prefix beam search with a character language model.
//!
//! Each prefix `y` tracks the log-probability of the frame paths that
//! collapse to it and end in blank (`log_pr_blank`) or in its last label
//! (`log_pr_nonblank`). Per frame, every surviving prefix
//!
//! * absorbs a blank: `Pr⁻(y,t) += Pr(y,t−1) · P(blank,t)`,
//! * repeats its last label: `Pr⁺(y,t) += Pr⁺(y,t−1) · P(yᵉ,t)`,
//! * extends by each candidate label `k`:
//!   `Pr⁺(y+k,t) += P(k,t) · Pᵅ(k|y) · (Pr⁻(y,t−1) if k = yᵉ else Pr(y,t−1))`.
//!
//! Contributions to the same prefix are merged, so with an unbounded beam
//! and all labels as candidates the result is exact. Candidates are the
//! `candidate_count` most probable non-blank labels of the frame.

use std::collections::HashMap;

use super::{normalized_score, rank, DecodeOptions, Decoded};
use crate::alphabet::BLANK;
use crate::ctc::{EmissionMatrix, LabelSequence};
use crate::error::{Error, Result};
use crate::logspace::{log_add, LOG_ZERO};

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: LabelSequence,
    pub log_pr_blank: f64,
    pub log_pr_nonblank: f64,
}

impl BeamHypothesis {
    pub fn total(&self) -> f64 {
        log_add(self.log_pr_blank, self.log_pr_nonblank)
    }
}

#[derive(Clone, Copy)]
struct Mass {
    blank: f64,
    nonblank: f64,
}

impl Mass {
    const ZERO: Mass = Mass {
        blank: LOG_ZERO,
        nonblank: LOG_ZERO,
    };
}

/// Labels `1..K` ordered by descending emission, ties to the lower index,
/// truncated to `count`.
fn top_candidates(row: &[f64], count: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (1..row.len()).collect();
    labels.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    labels.truncate(count);
    labels
}

/// Runs the search and returns the final beam, best first by unnormalized
/// total probability.
pub fn beam_search_final_beam(
    emissions: &EmissionMatrix,
    opts: &DecodeOptions<'_>,
) -> Result<Vec<BeamHypothesis>> {
    opts.validate(emissions.classes())?;
    let lm = opts.active_lm();
    let mut beam: Vec<(LabelSequence, Mass)> = vec![(
        LabelSequence::empty(),
        Mass {
            blank: 0.0,
            nonblank: LOG_ZERO,
        },
    )];
    for t in 0..emissions.frames() {
        let row = emissions.row(t);
        let candidates = top_candidates(row, opts.candidate_count);
        let mut next: HashMap<LabelSequence, Mass> = HashMap::with_capacity(beam.len() * (candidates.len() + 1));
        // Insertion order, so accumulation order does not depend on hashing.
        let mut order: Vec<LabelSequence> = Vec::with_capacity(beam.len() * (candidates.len() + 1));
        let mut slot = |next: &mut HashMap<LabelSequence, Mass>, y: &LabelSequence| {
            if !next.contains_key(y) {
                order.push(y.clone());
                next.insert(y.clone(), Mass::ZERO);
            }
        };
        for (y, mass) in &beam {
            let total = log_add(mass.blank, mass.nonblank);
            slot(&mut next, y);
            let entry = next.get_mut(y).expect("slot inserted");
            entry.blank = log_add(entry.blank, total + row[BLANK]);
            let last = y.last();
            if let Some(e) = last {
                entry.nonblank = log_add(entry.nonblank, mass.nonblank + row[e]);
            }
            for &k in &candidates {
                let lm_weight = match lm {
                    Some(lm) => opts.alpha * lm.log_prob(k, y.labels()),
                    None => 0.0,
                };
                let prior = if last == Some(k) { mass.blank } else { total };
                let extended = y.pushed(k);
                slot(&mut next, &extended);
                let entry = next.get_mut(&extended).expect("slot inserted");
                entry.nonblank = log_add(entry.nonblank, row[k] + lm_weight + prior);
            }
        }
        let mut ranked: Vec<(LabelSequence, Mass)> = order
            .into_iter()
            .map(|y| {
                let m = next[&y];
                (y, m)
            })
            .collect();
        ranked.sort_by(|a, b| {
            rank(
                (log_add(a.1.blank, a.1.nonblank), &a.0),
                (log_add(b.1.blank, b.1.nonblank), &b.0),
            )
        });
        ranked.truncate(opts.beam_width);
        beam = ranked;
    }
    Ok(beam
        .into_iter()
        .map(|(prefix, m)| BeamHypothesis {
            prefix,
            log_pr_blank: m.blank,
            log_pr_nonblank: m.nonblank,
        })
        .collect())
}

/// Best transcription by length-normalized score `log Pr(y,T) / |y|`; the
/// empty transcription competes with its raw log-probability.
pub fn beam_search_decode(emissions: &EmissionMatrix, opts: &DecodeOptions<'_>) -> Result<Decoded> {
    let beam = beam_search_final_beam(emissions, opts)?;
    beam.into_iter()
        .map(|h| {
            let score = normalized_score(h.total(), h.prefix.len());
            (h.prefix, score)
        })
        .min_by(|a, b| rank((a.1, &a.0), (b.1, &b.0)))
        .map(|(labels, log_score)| Decoded { labels, log_score })
        .ok_or_else(|| Error::invalid("beam search ended with an empty beam"))
}
