//! Edit-distance error rates and classification accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

impl std::ops::Add for EditCounts {
    type Output = EditCounts;

    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            reference_len: self.reference_len + o.reference_len,
        }
    }
}

impl std::iter::Sum for EditCounts {
    fn sum<I: Iterator<Item = EditCounts>>(iter: I) -> Self {
        iter.fold(EditCounts::default(), |a, b| a + b)
    }
}

// (total, insertions, deletions, substitutions): ordered lexicographically so
// ties among minimal alignments prefer fewer insertions, then fewer deletions.
type Cost = (usize, usize, usize, usize);

fn step(c: Cost, ins: usize, del: usize, sub: usize) -> Cost {
    (c.0 + ins + del + sub, c.1 + ins, c.2 + del, c.3 + sub)
}

/// Unit-cost Levenshtein alignment counts.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut prev: Vec<Cost> = (0..=m).map(|j| (j, j, 0, 0)).collect();
    let mut cur = vec![(0, 0, 0, 0); m + 1];
    for i in 1..=n {
        cur[0] = (i, 0, i, 0);
        for j in 1..=m {
            let diag = if reference[i - 1] == hypothesis[j - 1] {
                prev[j - 1]
            } else {
                step(prev[j - 1], 0, 0, 1)
            };
            let del = step(prev[j], 0, 1, 0);
            let ins = step(cur[j - 1], 1, 0, 0);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (_, insertions, deletions, substitutions) = prev[m];
    EditCounts {
        substitutions,
        deletions,
        insertions,
        reference_len: n,
    }
}

/// Minimal total edit count found by enumerating every alignment path.
/// Exponential; for cross-checking [`edit_distance`] on short inputs.
pub fn edit_distance_brute_force<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    fn go<T: PartialEq>(r: &[T], h: &[T]) -> usize {
        match (r.split_first(), h.split_first()) {
            (None, _) => h.len(),
            (_, None) => r.len(),
            (Some((a, rr)), Some((b, hh))) => {
                let diag = go(rr, hh) + usize::from(a != b);
                let del = go(rr, h) + 1;
                let ins = go(r, hh) + 1;
                diag.min(del).min(ins)
            }
        }
    }
    go(reference, hypothesis)
}

fn pooled_rate(counts: EditCounts) -> Result<f64> {
    if counts.reference_len == 0 {
        return Err(Error::InvalidInput("error rate over zero reference length".into()));
    }
    Ok(counts.errors() as f64 / counts.reference_len as f64)
}

/// Corpus-pooled word error rate: summed errors over summed reference length.
pub fn wer<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    pooled_rate(pairs.iter().map(|(r, h)| edit_distance(r, h)).sum())
}

/// Character sequence of tokens joined by single spaces.
pub fn joined_chars<S: AsRef<str>>(tokens: &[S]) -> Vec<char> {
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.extend(t.as_ref().chars());
    }
    out
}

/// Corpus-pooled character error rate over space-joined token strings.
pub fn cer<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> Result<f64> {
    pooled_rate(
        pairs
            .iter()
            .map(|(r, h)| edit_distance(&joined_chars(r), &joined_chars(h)))
            .sum(),
    )
}

pub fn accuracy<T: PartialEq>(predictions: &[T], labels: &[T]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}
