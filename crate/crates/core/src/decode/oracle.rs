use super::{normalized_score, rank, Decoded};
use crate::ctc::{forward_backward, EmissionMatrix, LabelSequence};
use crate::error::{Error, Result};
use crate::lm::CharLm;

/// Largest `K^T` the exhaustive decoder accepts.
pub const ORACLE_LIMIT: u128 = 1_000_000;

/// Scores every label sequence of length `0..=T` by its exact CTC
/// probability times the LM product raised to `alpha`, and returns the best
/// under the beam search's normalization and tie-breaking rules.
pub fn exhaustive_decode_oracle(
    emissions: &EmissionMatrix,
    lm: Option<&dyn CharLm>,
    alpha: f64,
) -> Result<Decoded> {
    let ranking = exhaustive_ranking(emissions, lm, alpha)?;
    Ok(ranking.into_iter().next().expect("the empty sequence is always feasible"))
}

/// Every feasible label sequence with its normalized score, best first.
pub fn exhaustive_ranking(
    emissions: &EmissionMatrix,
    lm: Option<&dyn CharLm>,
    alpha: f64,
) -> Result<Vec<Decoded>> {
    let (frames, classes) = (emissions.frames(), emissions.classes());
    let size = (classes as u128).checked_pow(frames as u32).unwrap_or(u128::MAX);
    if size > ORACLE_LIMIT {
        return Err(Error::TooLargeForOracle(size));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be a finite non-negative number"));
    }
    let lm = match lm {
        Some(lm) if alpha > 0.0 => Some(lm),
        None if alpha > 0.0 => return Err(Error::invalid("alpha > 0 requires a language model")),
        _ => None,
    };

    let mut scored = Vec::new();
    let mut labels: Vec<usize> = Vec::with_capacity(frames);
    loop {
        let seq = LabelSequence::new(labels.clone())?;
        let loss = forward_backward(emissions, &seq)?.loss;
        if loss.is_finite() {
            let mut log_prob = -loss;
            if let Some(lm) = lm {
                for i in 0..labels.len() {
                    log_prob += alpha * lm.log_prob(labels[i], &labels[..i]);
                }
            }
            let log_score = normalized_score(log_prob, seq.len());
            scored.push(Decoded { labels: seq, log_score });
        }
        if !advance(&mut labels, classes, frames) {
            break;
        }
    }
    scored.sort_by(|a, b| rank((a.log_score, &a.labels), (b.log_score, &b.labels)));
    Ok(scored)
}

/// Steps to the next sequence in length-then-odometer order over labels
/// `1..classes`; false once every sequence up to `max_len` has been seen.
fn advance(labels: &mut Vec<usize>, classes: usize, max_len: usize) -> bool {
    if classes < 2 {
        return false;
    }
    for i in (0..labels.len()).rev() {
        if labels[i] + 1 < classes {
            labels[i] += 1;
            return true;
        }
        labels[i] = 1;
    }
    if labels.len() < max_len {
        labels.push(1);
        true
    } else {
        false
    }
}
