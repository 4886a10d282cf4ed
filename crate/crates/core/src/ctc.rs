//! Connectionist temporal classification: the alignment-sum likelihood via
//! log-space forward/backward lattices, its gradient with respect to frame
//! logits, a literal enumeration oracle, and greedy decoding.
//!
//! Frames carry `V + 1` classes; the blank is always the last class, id `V`.

use crate::error::{Error, Result};
use crate::nn::{log_add, log_softmax, logsumexp, Tensor};

/// A transcript interleaved with blanks: `ε w₁ ε w₂ … ε w_U ε`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedTarget {
    pub symbols: Vec<usize>,
    pub blank: usize,
}

impl ExtendedTarget {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Whether state `s` may be entered directly from `s − 2`, skipping a
    /// blank. Only token states whose token differs from the previous token.
    fn can_skip(&self, s: usize) -> bool {
        s >= 2 && self.symbols[s] != self.blank && self.symbols[s] != self.symbols[s - 2]
    }
}

pub fn expand_target(transcript: &[usize], blank: usize) -> ExtendedTarget {
    let mut symbols = Vec::with_capacity(2 * transcript.len() + 1);
    symbols.push(blank);
    for &w in transcript {
        symbols.push(w);
        symbols.push(blank);
    }
    ExtendedTarget { symbols, blank }
}

/// Removes repeats, then blanks.
pub fn collapse(alignment: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &a in alignment {
        if Some(a) != prev && a != blank {
            out.push(a);
        }
        prev = Some(a);
    }
    out
}

/// Shortest alignment able to emit `transcript`: one frame per token plus a
/// separating blank between equal neighbours.
pub fn min_frames(transcript: &[usize]) -> usize {
    transcript.len() + transcript.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Forward/backward lattices over the extended target.
///
/// `log_alpha[t, s]` includes the emission at frame `t`; `log_beta[t, s]`
/// covers frames after `t` only, so `α_t + β_t` sums to the likelihood at
/// every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcTable {
    pub log_alpha: Tensor,
    pub log_beta: Tensor,
    pub log_likelihood: f64,
    pub feasible: bool,
    pub target: ExtendedTarget,
}

impl CtcTable {
    /// `logsumexp_s(α_t + β_t)` for frame `t`.
    pub fn frame_total(&self, t: usize) -> f64 {
        let sums: Vec<f64> = self
            .log_alpha
            .row(t)
            .iter()
            .zip(self.log_beta.row(t))
            .map(|(a, b)| a + b)
            .collect();
        logsumexp(&sums)
    }
}

fn validate(frame_log_probs: &Tensor, transcript: &[usize]) -> Result<usize> {
    frame_log_probs.expect_rank(2, "frame log-probabilities")?;
    let classes = frame_log_probs.cols();
    if classes < 2 {
        return Err(Error::InvalidShape("need at least one token class plus blank".into()));
    }
    let blank = classes - 1;
    if let Some(&bad) = transcript.iter().find(|&&w| w >= blank) {
        return Err(Error::InvalidInput(format!(
            "token id {bad} out of range for vocabulary of {blank}"
        )));
    }
    for t in 0..frame_log_probs.rows() {
        let z = logsumexp(frame_log_probs.row(t));
        if (z.abs() > 1e-9) || !z.is_finite() {
            return Err(Error::InvalidInput(format!(
                "frame {t} is not a normalized log distribution (logsumexp {z})"
            )));
        }
    }
    Ok(blank)
}

/// `log p(W|X)` summed over all alignments, with the lattices that produced
/// it. An infeasible target yields `-inf` and `feasible == false`.
pub fn ctc_log_likelihood(frame_log_probs: &Tensor, transcript: &[usize]) -> Result<CtcTable> {
    let blank = validate(frame_log_probs, transcript)?;
    Ok(lattices(frame_log_probs, expand_target(transcript, blank)))
}

fn lattices(lp: &Tensor, target: ExtendedTarget) -> CtcTable {
    let frames = lp.rows();
    let states = target.len();
    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; frames * states];
    let mut beta = vec![neg; frames * states];
    let sym = &target.symbols;

    alpha[0] = lp.get2(0, sym[0]);
    if states > 1 {
        alpha[1] = lp.get2(0, sym[1]);
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        let row = lp.row(t);
        for s in 0..states {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if target.can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == neg { neg } else { acc + row[sym[s]] };
        }
    }

    let last = (frames - 1) * states;
    beta[last + states - 1] = 0.0;
    if states > 1 {
        beta[last + states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * states);
        let cur = &mut cur[t * states..];
        let next_row = lp.row(t + 1);
        for s in 0..states {
            let mut acc = next[s] + next_row[sym[s]];
            if s + 1 < states {
                acc = log_add(acc, next[s + 1] + next_row[sym[s + 1]]);
            }
            if s + 2 < states && target.can_skip(s + 2) {
                acc = log_add(acc, next[s + 2] + next_row[sym[s + 2]]);
            }
            cur[s] = acc;
        }
    }

    let mut log_likelihood = alpha[last + states - 1];
    if states > 1 {
        log_likelihood = log_add(log_likelihood, alpha[last + states - 2]);
    }
    CtcTable {
        log_alpha: Tensor::new(vec![frames, states], alpha).expect("lattice size"),
        log_beta: Tensor::new(vec![frames, states], beta).expect("lattice size"),
        log_likelihood,
        feasible: log_likelihood > neg,
        target,
    }
}

/// Gradient of `−log p(W|X)` with respect to the pre-softmax frame logits:
/// `softmax − γ`, where `γ_t(k)` is the posterior mass of states emitting `k`.
pub fn ctc_grad(frame_log_probs: &Tensor, table: &CtcTable) -> Result<Tensor> {
    if !table.feasible {
        return Err(Error::InvalidInput("gradient of an infeasible CTC target".into()));
    }
    let (frames, classes) = (frame_log_probs.rows(), frame_log_probs.cols());
    let states = table.target.len();
    if table.log_alpha.rows() != frames || table.log_alpha.cols() != states {
        return Err(Error::InvalidShape("CTC table does not match the frames".into()));
    }
    let mut grad = vec![0.0; frames * classes];
    for t in 0..frames {
        let g = &mut grad[t * classes..(t + 1) * classes];
        for (gk, &l) in g.iter_mut().zip(frame_log_probs.row(t)) {
            *gk = l.exp();
        }
        let a = table.log_alpha.row(t);
        let b = table.log_beta.row(t);
        for s in 0..states {
            let log_post = a[s] + b[s] - table.log_likelihood;
            if log_post > f64::NEG_INFINITY {
                g[table.target.symbols[s]] -= log_post.exp();
            }
        }
    }
    Tensor::new(vec![frames, classes], grad)
}

/// Loss `−log p(W|X)` and its gradient with respect to raw frame logits.
/// `None` when the target is infeasible.
pub fn ctc_loss_from_logits(frame_logits: &Tensor, transcript: &[usize]) -> Result<Option<(f64, Tensor)>> {
    let lp = log_softmax(frame_logits);
    let table = ctc_log_likelihood(&lp, transcript)?;
    if !table.feasible {
        return Ok(None);
    }
    let grad = ctc_grad(&lp, &table)?;
    Ok(Some((-table.log_likelihood, grad)))
}

/// Upper bound on alignments [`ctc_brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// `p(W|X)` by enumerating every alignment of length `T'` and summing the
/// probabilities of those that collapse to `transcript`.
pub fn ctc_brute_force(frame_log_probs: &Tensor, transcript: &[usize]) -> Result<f64> {
    frame_log_probs.expect_rank(2, "frame log-probabilities")?;
    let (frames, classes) = (frame_log_probs.rows(), frame_log_probs.cols());
    let blank = classes - 1;
    let total = (classes as u64)
        .checked_pow(frames as u32)
        .filter(|&n| n <= BRUTE_FORCE_LIMIT)
        .ok_or_else(|| Error::TooLarge(format!("{classes}^{frames} alignments")))?;
    let mut alignment = vec![0usize; frames];
    let mut prob = 0.0;
    for _ in 0..total {
        if collapse(&alignment, blank) == transcript {
            let lp: f64 = alignment
                .iter()
                .enumerate()
                .map(|(t, &a)| frame_log_probs.get2(t, a))
                .sum();
            prob += lp.exp();
        }
        // odometer increment
        for slot in alignment.iter_mut().rev() {
            *slot += 1;
            if *slot < classes {
                break;
            }
            *slot = 0;
        }
    }
    Ok(prob)
}

/// Per-frame argmax (ties to the lowest class), then [`collapse`].
pub fn greedy_decode(frame_logits: &Tensor) -> Vec<usize> {
    let classes = frame_logits.cols();
    let path: Vec<usize> = (0..frame_logits.rows())
        .map(|t| {
            let row = frame_logits.row(t);
            let mut best = 0;
            for k in 1..classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path, classes - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 0;
    const B: usize = 1;

    fn uniform(frames: usize, classes: usize) -> Tensor {
        Tensor::new(
            vec![frames, classes],
            vec![-(classes as f64).ln(); frames * classes],
        )
        .unwrap()
    }

    #[test]
    fn expand_cases() {
        let e = 9;
        assert_eq!(expand_target(&[A, B], e).symbols, vec![e, A, e, B, e]);
        assert_eq!(expand_target(&[], e).symbols, vec![e]);
        assert_eq!(expand_target(&[A, A], e).symbols, vec![e, A, e, A, e]);
    }

    #[test]
    fn single_frame_must_emit_token() {
        let t = ctc_log_likelihood(&uniform(1, 2), &[A]).unwrap();
        assert!((t.log_likelihood.exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_alignments() {
        let t = ctc_log_likelihood(&uniform(2, 2), &[A]).unwrap();
        assert!((t.log_likelihood.exp() - 0.75).abs() < 1e-12);
        let bf = ctc_brute_force(&uniform(2, 2), &[A]).unwrap();
        assert!((bf - 0.75).abs() < 1e-12);
    }

    #[test]
    fn repeat_needs_separating_blank() {
        let t = ctc_log_likelihood(&uniform(2, 2), &[A, A]).unwrap();
        assert!(!t.feasible);
        assert_eq!(t.log_likelihood, f64::NEG_INFINITY);
        assert!(ctc_grad(&uniform(2, 2), &t).is_err());
        assert_eq!(min_frames(&[A, A]), 3);
        assert_eq!(ctc_brute_force(&uniform(2, 2), &[A, A]).unwrap(), 0.0);
    }

    #[test]
    fn transcript_longer_than_frames_has_zero_probability() {
        assert_eq!(ctc_brute_force(&uniform(2, 3), &[A, B, A]).unwrap(), 0.0);
        assert!(!ctc_log_likelihood(&uniform(2, 3), &[A, B, A]).unwrap().feasible);
    }

    #[test]
    fn empty_transcript_is_all_blank() {
        let t = ctc_log_likelihood(&uniform(3, 2), &[]).unwrap();
        assert!((t.log_likelihood - 3.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_state_posterior_gradient() {
        let lp = Tensor::from_rows(&[vec![0.3f64.ln(), 0.7f64.ln()]]).unwrap();
        let t = ctc_log_likelihood(&lp, &[A]).unwrap();
        let g = ctc_grad(&lp, &t).unwrap();
        assert!((g.values()[0] - (0.3 - 1.0)).abs() < 1e-12);
        assert!((g.values()[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn rejects_unnormalized_rows_and_bad_tokens() {
        let bad = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(ctc_log_likelihood(&bad, &[A]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            ctc_log_likelihood(&uniform(2, 2), &[1]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        assert!(matches!(
            ctc_brute_force(&uniform(12, 4), &[A]),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn greedy_cases() {
        let e = 2;
        let one_hot = |path: &[usize]| {
            let rows: Vec<Vec<f64>> = path
                .iter()
                .map(|&k| (0..3).map(|c| if c == k { 1.0 } else { 0.0 }).collect())
                .collect();
            Tensor::from_rows(&rows).unwrap()
        };
        assert_eq!(greedy_decode(&one_hot(&[A, A, e, B, B])), vec![A, B]);
        assert_eq!(greedy_decode(&one_hot(&[e, e, e])), Vec::<usize>::new());
        assert_eq!(greedy_decode(&one_hot(&[A, e, A])), vec![A, A]);
        // tie between all classes goes to class 0
        assert_eq!(greedy_decode(&Tensor::zeros(&[1, 3])), vec![A]);
    }
}
