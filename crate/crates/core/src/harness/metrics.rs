use serde::Serialize;

use crate::error::{Error, Result};

/// Character edit counts of a minimal alignment of hypothesis against
/// truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    /// Characters in the truth.
    pub chars: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(N - S - D - I) / N`; negative when the hypothesis is mostly
    /// insertions.
    pub fn accurate_rate(&self) -> Result<f64> {
        if self.chars == 0 {
            return Err(Error::invalid("accurate rate needs at least one truth character"));
        }
        Ok((self.chars as f64 - self.distance() as f64) / self.chars as f64)
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: EditCounts) {
        self.chars += o.chars;
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
    }
}

/// Unit-cost Levenshtein alignment. Among minimal alignments the traceback
/// prefers a substitution (or match), then a deletion, then an insertion.
pub fn edit_counts(truth: &str, hypothesis: &str) -> EditCounts {
    let t: Vec<char> = truth.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let (n, m) = (t.len(), h.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(t[i - 1] != h[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut counts = EditCounts {
        chars: n,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(t[i - 1] != h[j - 1]);
            if d[(i - 1) * w + j - 1] + diff == here {
                counts.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

fn fold(s: &str, case_insensitive: bool) -> String {
    if case_insensitive {
        s.to_lowercase()
    } else {
        s.to_string()
    }
}

/// Fraction of exact `(truth, hypothesis)` matches.
pub fn word_accuracy<T: AsRef<str>, H: AsRef<str>>(pairs: &[(T, H)], case_insensitive: bool) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("word accuracy of an empty list"));
    }
    let correct = pairs
        .iter()
        .filter(|(t, h)| fold(t.as_ref(), case_insensitive) == fold(h.as_ref(), case_insensitive))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Summed edit counts over all pairs.
pub fn total_edits<T: AsRef<str>, H: AsRef<str>>(pairs: &[(T, H)]) -> EditCounts {
    let mut total = EditCounts::default();
    for (t, h) in pairs {
        total += edit_counts(t.as_ref(), h.as_ref());
    }
    total
}

/// Corpus-level accurate rate `(N - S - D - I) / N`, unclamped.
pub fn accurate_rate<T: AsRef<str>, H: AsRef<str>>(pairs: &[(T, H)]) -> Result<f64> {
    total_edits(pairs).accurate_rate()
}
