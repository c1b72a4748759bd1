use std::fmt;
use std::ops::AddAssign;

use crate::error::{Error, Result};

/// Edit counts against a reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WerReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_tokens: usize,
}

impl WerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Fraction of reference tokens in error (may exceed 1).
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.reference_tokens.max(1) as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.wer()
    }
}

impl AddAssign for WerReport {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference_tokens += o.reference_tokens;
    }
}

impl fmt::Display for WerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "WER {:.2}% [ {} / {}, {} sub, {} del, {} ins ]",
            self.percent(),
            self.errors(),
            self.reference_tokens,
            self.substitutions,
            self.deletions,
            self.insertions
        )
    }
}

/// Levenshtein alignment with unit costs. Among minimal alignments the
/// backtrace prefers a substitution (or match), then a deletion, then an
/// insertion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerReport {
    let (n, m) = (reference.len(), hypothesis.len());
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
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut r = WerReport { reference_tokens: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[(i - 1) * w + j - 1] + diff == here {
                r.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            r.deletions += 1;
            i -= 1;
        } else {
            r.insertions += 1;
            j -= 1;
        }
    }
    r
}

/// Word error counts between two whitespace-tokenised strings.
pub fn wer(reference: &str, hypothesis: &str) -> Result<WerReport> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(Error::invalid("empty reference: WER is undefined"));
    }
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    Ok(align(&r, &h))
}
