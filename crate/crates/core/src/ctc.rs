//! CTC probability model over per-window emissions.
//!
//! A path is one class index per frame; [`collapse`] merges adjacent repeats
//! and then drops blanks. The probability of a transcription is the sum over
//! every path that collapses onto it, computed here with the log-domain
//! forward-backward recursion. [`label_log_prob_bruteforce`] enumerates paths
//! directly and exists as an independent oracle for small instances.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::alphabet::BLANK;
use crate::error::{Error, Result};
use crate::logspace::{log_add, log_softmax, log_sum_exp, softmax, LOG_ZERO};

/// Tolerance on per-row normalization of emission log-probabilities.
pub const ROW_TOLERANCE: f64 = 1e-6;

/// Largest path count `label_log_prob_bruteforce` will enumerate.
pub const BRUTEFORCE_LIMIT: u128 = 10_000_000;

/// `T x K` natural-log emission probabilities, blank at column 0.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionMatrix {
    frames: usize,
    classes: usize,
    log_probs: Vec<f64>,
}

impl EmissionMatrix {
    /// Builds a matrix from row-major log-probabilities, checking that each
    /// row is a distribution.
    pub fn from_log_probs(frames: usize, classes: usize, log_probs: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::invalid("emission matrix needs at least one frame"));
        }
        if classes < 2 {
            return Err(Error::invalid("emission matrix needs blank plus one label"));
        }
        if log_probs.len() != frames * classes {
            return Err(Error::invalid(format!(
                "emission data has {} values, expected {frames}x{classes}",
                log_probs.len()
            )));
        }
        for (t, row) in log_probs.chunks_exact(classes).enumerate() {
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::invalid(format!("emission row {t} is not finite")));
            }
            let total = log_sum_exp(row);
            if total.is_nan() || total.abs() > ROW_TOLERANCE {
                return Err(Error::invalid(format!(
                    "emission row {t} log-sums to {total}, expected 0"
                )));
            }
        }
        Ok(EmissionMatrix {
            frames,
            classes,
            log_probs,
        })
    }

    /// Builds a matrix from row-major probabilities.
    pub fn from_probs(frames: usize, classes: usize, probs: &[f64]) -> Result<Self> {
        Self::from_log_probs(frames, classes, probs.iter().map(|p| p.ln()).collect())
    }

    /// Applies a row-wise log-softmax to unnormalized scores.
    pub fn from_logits(frames: usize, classes: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != frames * classes || classes == 0 {
            return Err(Error::invalid("logit matrix shape mismatch"));
        }
        let log_probs = logits.chunks_exact(classes).flat_map(log_softmax).collect();
        Self::from_log_probs(frames, classes, log_probs)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.log_probs[t * self.classes..(t + 1) * self.classes]
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.log_probs[t * self.classes + k]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Serializes to the `CTC-EMIT v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("CTC-EMIT v1 {} {}\n", self.frames, self.classes);
        for t in 0..self.frames {
            for (k, v) in self.row(t).iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                // `{:?}` prints the shortest string that round-trips exactly.
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn read_text(reader: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::invalid(e.to_string()))?,
            None => return Err(Error::invalid("empty emission file")),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (frames, classes) = match fields.as_slice() {
            ["CTC-EMIT", "v1", t, k] => (
                t.parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad frame count {t:?}")))?,
                k.parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad class count {k:?}")))?,
            ),
            _ => return Err(Error::invalid(format!("bad emission header {header:?}"))),
        };
        let mut values = Vec::with_capacity(frames * classes);
        for t in 0..frames {
            let line = lines
                .next()
                .ok_or_else(|| Error::invalid(format!("emission file ends at row {t}")))?
                .map_err(|e| Error::invalid(e.to_string()))?;
            let before = values.len();
            for tok in line.split_whitespace() {
                let v = match tok {
                    "-inf" => LOG_ZERO,
                    _ => tok
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad value {tok:?} in row {t}")))?,
                };
                values.push(v);
            }
            if values.len() - before != classes {
                return Err(Error::invalid(format!(
                    "emission row {t} has {} values, expected {classes}",
                    values.len() - before
                )));
            }
        }
        Self::from_log_probs(frames, classes, values)
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

/// A blank-free transcription as class indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.contains(&BLANK) {
            return Err(Error::invalid("label sequence contains blank"));
        }
        Ok(LabelSequence(labels))
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// Minimum number of frames any path needs to collapse onto this
    /// sequence: one per label plus a separating blank per adjacent repeat.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    pub(crate) fn pushed(&self, label: usize) -> Self {
        debug_assert_ne!(label, BLANK);
        let mut v = self.0.clone();
        v.push(label);
        LabelSequence(v)
    }
}

/// Mapping B: merge adjacent repeats, then delete blanks.
pub fn collapse(path: &[usize]) -> LabelSequence {
    let mut out = Vec::with_capacity(path.len());
    let mut prev = None;
    for &k in path {
        if prev != Some(k) && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    LabelSequence(out)
}

/// Log-probability of one frame-level path: the sum of per-frame log
/// emissions.
pub fn path_log_prob(emissions: &EmissionMatrix, path: &[usize]) -> Result<f64> {
    if path.len() != emissions.frames() {
        return Err(Error::invalid(format!(
            "path has {} steps, emission matrix has {} frames",
            path.len(),
            emissions.frames()
        )));
    }
    if let Some(&k) = path.iter().find(|&&k| k >= emissions.classes()) {
        return Err(Error::invalid(format!("class {k} out of range")));
    }
    Ok(path
        .iter()
        .enumerate()
        .map(|(t, &k)| emissions.get(t, k))
        .sum())
}

/// Exact `log P(y|X)` by enumerating all `K^T` paths. Only for small
/// instances; used as a test oracle.
pub fn label_log_prob_bruteforce(emissions: &EmissionMatrix, target: &LabelSequence) -> Result<f64> {
    let (frames, classes) = (emissions.frames(), emissions.classes());
    let total = (classes as u128).checked_pow(frames as u32);
    match total {
        Some(n) if n <= BRUTEFORCE_LIMIT => {}
        Some(n) => return Err(Error::TooLargeForOracle(n)),
        None => return Err(Error::TooLargeForOracle(u128::MAX)),
    }
    let mut acc = LOG_ZERO;
    let mut path = vec![0usize; frames];
    loop {
        if collapse(&path) == *target {
            acc = log_add(acc, path_log_prob(emissions, &path)?);
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == frames {
                return Ok(acc);
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Loss and per-frame class posteriors from [`forward_backward`].
#[derive(Clone, Debug)]
pub struct CtcPosteriors {
    /// `-log P(y|X)`; `+inf` when no alignment exists.
    pub loss: f64,
    /// Row-major `T x K`; entry `[t, k]` is the posterior probability that
    /// the path emits class `k` at frame `t` given `y`.
    pub posteriors: Vec<f64>,
}

fn check_target(target: &LabelSequence, classes: usize) -> Result<()> {
    if let Some(&k) = target.labels().iter().find(|&&k| k == BLANK || k >= classes) {
        return Err(Error::invalid(format!(
            "target label {k} is blank or out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Log-domain forward-backward over the blank-augmented target.
pub fn forward_backward(emissions: &EmissionMatrix, target: &LabelSequence) -> Result<CtcPosteriors> {
    let (frames, classes) = (emissions.frames(), emissions.classes());
    check_target(target, classes)?;
    if target.min_frames() > frames {
        return Ok(CtcPosteriors {
            loss: f64::INFINITY,
            posteriors: vec![0.0; frames * classes],
        });
    }

    // blank, l1, blank, l2, ..., lL, blank
    let states: Vec<usize> = std::iter::once(BLANK)
        .chain(target.labels().iter().flat_map(|&l| [l, BLANK]))
        .collect();
    let s_len = states.len();
    let skip_allowed = |s: usize| s >= 2 && states[s] != BLANK && states[s] != states[s - 2];

    let mut alpha = vec![LOG_ZERO; frames * s_len];
    alpha[0] = emissions.get(0, states[0]);
    if s_len > 1 {
        alpha[1] = emissions.get(0, states[1]);
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip_allowed(s) {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = a + emissions.get(t, states[s]);
        }
    }

    let mut beta = vec![LOG_ZERO; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = emissions.get(frames - 1, states[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = emissions.get(frames - 1, states[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && skip_allowed(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            cur[s] = b + emissions.get(t, states[s]);
        }
    }

    let tail = &alpha[last..];
    let log_likelihood = if s_len > 1 {
        log_add(tail[s_len - 1], tail[s_len - 2])
    } else {
        tail[0]
    };
    if log_likelihood == LOG_ZERO {
        return Ok(CtcPosteriors {
            loss: f64::INFINITY,
            posteriors: vec![0.0; frames * classes],
        });
    }

    let mut posteriors = vec![0.0; frames * classes];
    let mut per_class = vec![LOG_ZERO; classes];
    for t in 0..frames {
        per_class.fill(LOG_ZERO);
        for (s, &k) in states.iter().enumerate() {
            let i = t * s_len + s;
            // alpha and beta both include the emission at t
            let g = alpha[i] + beta[i] - emissions.get(t, k);
            per_class[k] = log_add(per_class[k], g);
        }
        for k in 0..classes {
            posteriors[t * classes + k] = (per_class[k] - log_likelihood).exp();
        }
    }
    Ok(CtcPosteriors {
        loss: -log_likelihood,
        posteriors,
    })
}

/// Fused softmax + CTC result for one line.
#[derive(Clone, Debug)]
pub struct LogitGradient {
    pub loss: f64,
    /// Row-major `T x K` gradient of the loss with respect to the logits.
    pub grad: Vec<f64>,
}

/// Gradient of `-log P(y|X)` with respect to pre-softmax scores:
/// `softmax(logits) - posteriors`.
pub fn ctc_logit_gradient(
    logits: &[f64],
    frames: usize,
    classes: usize,
    target: &LabelSequence,
) -> Result<LogitGradient> {
    let emissions = EmissionMatrix::from_logits(frames, classes, logits)?;
    let fb = forward_backward(&emissions, target)?;
    if !fb.loss.is_finite() {
        return Err(Error::InfeasibleTarget { frames });
    }
    let mut grad = Vec::with_capacity(frames * classes);
    for (row, post) in logits
        .chunks_exact(classes)
        .zip(fb.posteriors.chunks_exact(classes))
    {
        grad.extend(softmax(row).into_iter().zip(post).map(|(p, g)| p - g));
    }
    Ok(LogitGradient {
        loss: fb.loss,
        grad,
    })
}
