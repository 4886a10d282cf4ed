use ctc_slu::ctc::{collapse, ctc_brute_force, ctc_log_likelihood, greedy_decode, min_frames};
use ctc_slu::nn::{log_softmax, Tensor};
use proptest::prelude::*;

fn log_probs(frames: usize, classes: usize, raw: &[f64]) -> Tensor {
    let logits = Tensor::new(vec![frames, classes], raw[..frames * classes].to_vec()).unwrap();
    log_softmax(&logits)
}

// Independent oracle: walk every path frame by frame, tracking the collapsed
// prefix and the previous symbol.
fn paths_oracle(lp: &Tensor, transcript: &[usize]) -> f64 {
    fn walk(lp: &Tensor, w: &[usize], t: usize, prev: Option<usize>, emitted: &mut Vec<usize>, acc: f64) -> f64 {
        let blank = lp.cols() - 1;
        if t == lp.rows() {
            return if emitted.as_slice() == w { acc.exp() } else { 0.0 };
        }
        let mut total = 0.0;
        for k in 0..lp.cols() {
            let pushes = k != blank && prev != Some(k);
            if pushes {
                if emitted.len() >= w.len() || w[emitted.len()] != k {
                    continue;
                }
                emitted.push(k);
            }
            total += walk(lp, w, t + 1, Some(k), emitted, acc + lp.get2(t, k));
            if pushes {
                emitted.pop();
            }
        }
        total
    }
    walk(lp, transcript, 0, None, &mut Vec::new(), 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn forward_matches_path_enumeration(
        frames in 1usize..=6,
        vocab in 1usize..=3,
        transcript_raw in proptest::collection::vec(0usize..3, 0..=3),
        raw in proptest::collection::vec(-3.0f64..3.0, 24),
    ) {
        let transcript: Vec<usize> = transcript_raw.iter().map(|w| w % vocab).collect();
        let lp = log_probs(frames, vocab + 1, &raw);
        let table = ctc_log_likelihood(&lp, &transcript).unwrap();
        let oracle = paths_oracle(&lp, &transcript);
        prop_assert_eq!(table.feasible, frames >= min_frames(&transcript));
        if oracle == 0.0 {
            prop_assert!(table.log_likelihood == f64::NEG_INFINITY);
        } else {
            prop_assert!((table.log_likelihood - oracle.ln()).abs() < 1e-9);
            for t in 0..frames {
                prop_assert!((table.frame_total(t) - table.log_likelihood).abs() < 1e-9);
            }
        }
        let brute = ctc_brute_force(&lp, &transcript).unwrap();
        prop_assert!((brute - oracle).abs() <= 1e-12 * oracle.max(1e-300));
    }

    #[test]
    fn collapse_ignores_frame_repetition(path in proptest::collection::vec(0usize..4, 0..12)) {
        let stretched: Vec<usize> = path.iter().flat_map(|&k| [k, k]).collect();
        let once = collapse(&path, 3);
        prop_assert!(!once.contains(&3));
        prop_assert_eq!(collapse(&stretched, 3), once);
    }
}

#[test]
fn collapse_examples() {
    let b = 9;
    assert_eq!(collapse(&[1, 1, b, 1, 2, 2, b], b), vec![1, 1, 2]);
    assert_eq!(collapse(&[b, b, b], b), Vec::<usize>::new());
    assert_eq!(collapse(&[], b), Vec::<usize>::new());
    assert_eq!(min_frames(&[1, 1, 2]), 4);
}

#[test]
fn greedy_ties_go_to_lowest_class() {
    let logits = Tensor::from_rows(&[vec![0.5, 0.5, 0.1], vec![0.0, 1.0, 1.0], vec![0.0, 0.0, 2.0], vec![3.0, 3.0, 3.0]]).unwrap();
    assert_eq!(greedy_decode(&logits), vec![0, 1, 0]);
}

#[test]
fn infeasible_target_has_zero_probability() {
    let lp = log_probs(2, 3, &[0.0; 6]);
    let table = ctc_log_likelihood(&lp, &[0, 0]).unwrap();
    assert!(!table.feasible);
    assert_eq!(table.log_likelihood, f64::NEG_INFINITY);
    assert_eq!(paths_oracle(&lp, &[0, 0]), 0.0);
}

#[test]
fn rejects_bad_inputs() {
    let lp = log_probs(3, 3, &[0.0; 9]);
    assert!(ctc_log_likelihood(&lp, &[2]).is_err());
    let unnormalized = Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap();
    assert!(ctc_log_likelihood(&unnormalized, &[0]).is_err());
    let big = log_probs(1, 2, &[0.0, 0.0]);
    assert!(ctc_brute_force(&big, &[0]).is_ok());
}
