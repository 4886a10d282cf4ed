//! Self-contained oracle suites behind the `verify` command.

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ctc_slu::ctc::{ctc_brute_force, ctc_grad, ctc_log_likelihood};
use ctc_slu::metrics::{edit_distance, edit_distance_brute_force, wer};
use ctc_slu::model::{joint_loss, ConvLayer, LossWeights, ModelConfig, Sample, SluModel, TapMode, UtteranceEncoderKind};
use ctc_slu::nn::{finite_diff_report, log_softmax, ParamStore, Tensor};
use ctc_slu::synth::{generate_corpus, write_corpus, CorpusConfig};
use ctc_slu::trainer::{run_ablation, AblationMode, TrainConfig};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub detail: String,
}

impl SuiteReport {
    fn new(name: &str, max_error: f64, tolerance: f64, checked: usize, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: max_error < tolerance,
            max_error,
            tolerance,
            checked,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<12} max error {:.3e} (tolerance {:.0e}, {} checks) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance,
            self.checked,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Mutations {
    /// Negate the analytic CTC gradient before checking it.
    pub flip_ctc_grad_sign: bool,
}

fn random_log_probs(rng: &mut impl Rng, frames: usize, classes: usize) -> Tensor {
    let logits = Tensor::new(
        vec![frames, classes],
        (0..frames * classes).map(|_| rng.random_range(-3.0..3.0)).collect(),
    )
    .expect("shape");
    log_softmax(&logits)
}

/// Outcome of comparing the lattice recursion with alignment enumeration.
#[derive(Debug, Clone, Copy, Default)]
pub struct CtcSweep {
    pub instances: usize,
    pub feasible: usize,
    pub max_likelihood_error: f64,
    pub max_frame_total_error: f64,
}

/// `per_shape` random instances for every (T' ≤ 6, V ≤ 3, U ≤ 3) shape.
pub fn ctc_sweep(per_shape: usize, seed: u64) -> ctc_slu::Result<CtcSweep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CtcSweep::default();
    for frames in 1..=6 {
        for vocab in 1..=3 {
            for len in 0..=3 {
                for _ in 0..per_shape {
                    let lp = random_log_probs(&mut rng, frames, vocab + 1);
                    let transcript: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
                    let table = ctc_log_likelihood(&lp, &transcript)?;
                    let brute = ctc_brute_force(&lp, &transcript)?;
                    out.instances += 1;
                    if brute == 0.0 {
                        if table.log_likelihood != f64::NEG_INFINITY || table.feasible {
                            out.max_likelihood_error = f64::INFINITY;
                        }
                        continue;
                    }
                    out.feasible += 1;
                    let err = (table.log_likelihood - brute.ln()).abs();
                    out.max_likelihood_error = out.max_likelihood_error.max(err);
                    for t in 0..frames {
                        let e = (table.frame_total(t) - table.log_likelihood).abs();
                        out.max_frame_total_error = out.max_frame_total_error.max(e);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn suite_ctc() -> ctc_slu::Result<Vec<SuiteReport>> {
    let s = ctc_sweep(3, 20)?;
    Ok(vec![
        SuiteReport::new(
            "ctc-oracle",
            s.max_likelihood_error,
            1e-9,
            s.instances,
            format!("({} feasible)", s.feasible),
        ),
        SuiteReport::new("ctc-lattice", s.max_frame_total_error, 1e-9, s.feasible, String::new()),
    ])
}

/// Max relative finite-difference error of the standalone CTC gradient.
pub fn ctc_gradient_error(cases: usize, seed: u64, mutations: Mutations) -> ctc_slu::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let frames = rng.random_range(3..=7);
        let vocab = rng.random_range(2..=4);
        let logits = Tensor::new(
            vec![frames, vocab + 1],
            (0..frames * (vocab + 1)).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )?;
        let transcript: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..vocab)).collect();
        let lp = log_softmax(&logits);
        let table = ctc_log_likelihood(&lp, &transcript)?;
        if !table.feasible {
            continue;
        }
        let mut grad = ctc_grad(&lp, &table)?;
        if mutations.flip_ctc_grad_sign {
            grad = grad.map(|g| -g);
        }
        let mut store = ParamStore::new();
        store.insert("logits", logits)?;
        store.grad_mut("logits").copy_from_slice(grad.values());
        let report = finite_diff_report(
            |p| -ctc_log_likelihood(&log_softmax(p.value("logits")), &transcript)
                .map(|t| t.log_likelihood)
                .unwrap_or(f64::NAN),
            &store,
            1e-5,
            usize::MAX,
            0,
        );
        worst = worst.max(report.max_rel_error);
        done += 1;
    }
    Ok(worst)
}

/// The small joint model used for gradient checks: T=12, d=8, V=5, K=6,
/// batch of two.
pub fn gradcheck_model(tap: TapMode, kind: UtteranceEncoderKind) -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        conv_layers: vec![
            ConvLayer { kernel: 3, stride: 1, channels: 6 },
            ConvLayer { kernel: 3, stride: 2, channels: 6 },
        ],
        vocab_size: 5,
        utterance_hidden: 7,
        num_labels: 6,
        tap,
        tap_detach: false,
        utterance_encoder: kind,
    }
}

/// Max relative finite-difference error over all parameters of the joint
/// loss (`subsample` seeded coordinates).
pub fn joint_gradient_error(config: ModelConfig, seed: u64, subsample: usize) -> ctc_slu::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Tensor> = (0..2)
        .map(|_| Tensor::new(vec![12, 8], (0..96).map(|_| rng.random_range(-1.5..1.5)).collect()))
        .collect::<ctc_slu::Result<_>>()?;
    let transcripts = [vec![0, 3, 3], vec![4, 1]];
    let labels = [2, 5];
    let samples = || -> Vec<Sample<'_>> {
        (0..2)
            .map(|i| Sample { frames: &frames[i], transcript: &transcripts[i], label: labels[i] })
            .collect()
    };
    let weights = LossWeights { alpha_ctc: 0.5, alpha_slu: 1.0 };
    let mut model = SluModel::new(config, seed)?;
    model.params.zero_grad();
    joint_loss(&mut model, &samples(), weights, true, true)?;
    let cfg = model.config.clone();
    let report = finite_diff_report(
        |p| {
            let mut m = SluModel { config: cfg.clone(), params: p.clone() };
            joint_loss(&mut m, &samples(), weights, false, true).map(|l| l.total).unwrap_or(f64::NAN)
        },
        &model.params,
        1e-5,
        subsample,
        seed,
    );
    Ok(report.max_rel_error)
}

pub fn suite_gradients(mutations: Mutations) -> ctc_slu::Result<Vec<SuiteReport>> {
    let ctc = ctc_gradient_error(20, 4, mutations)?;
    let mut joint: f64 = 0.0;
    let variants = [
        (TapMode::Logits, UtteranceEncoderKind::Dense),
        (TapMode::Hidden, UtteranceEncoderKind::Dense),
        (TapMode::Probabilities, UtteranceEncoderKind::Dense),
        (TapMode::Logits, UtteranceEncoderKind::Conv),
    ];
    for (tap, kind) in variants {
        joint = joint.max(joint_gradient_error(gradcheck_model(tap, kind), 9, 300)?);
    }
    Ok(vec![
        SuiteReport::new("ctc-grad", ctc, 1e-4, 20, String::new()),
        SuiteReport::new("joint-grad", joint, 1e-4, variants.len(), "(all taps, both utterance encoders)".into()),
    ])
}

/// Every sequence of length at most `max_len` over `0..alphabet`.
pub fn all_sequences(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// All-pairs shortest paths in the graph whose nodes are the sequences and
/// whose edges are single insertions, deletions and substitutions.
pub fn edit_graph_distances(seqs: &[Vec<u8>], alphabet: u8) -> Vec<Vec<u8>> {
    let index: HashMap<&[u8], usize> = seqs.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let neighbours: Vec<Vec<usize>> = seqs
        .iter()
        .map(|s| {
            let mut n = Vec::new();
            for i in 0..s.len() {
                let mut t = s.clone();
                t.remove(i);
                n.push(index[t.as_slice()]);
                for a in 0..alphabet {
                    if a != s[i] {
                        let mut t = s.clone();
                        t[i] = a;
                        n.push(index[t.as_slice()]);
                    }
                }
            }
            if s.len() < max_len {
                for i in 0..=s.len() {
                    for a in 0..alphabet {
                        let mut t = s.clone();
                        t.insert(i, a);
                        n.push(index[t.as_slice()]);
                    }
                }
            }
            n
        })
        .collect();
    seqs.iter()
        .enumerate()
        .map(|(src, _)| {
            let mut dist = vec![u8::MAX; seqs.len()];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in &neighbours[u] {
                    if dist[v] == u8::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Number of pairs (of length ≤ `max_len` over three symbols) where the DP
/// disagrees with the edit graph, and the number of pairs compared.
pub fn edit_distance_disagreements(max_len: usize) -> (usize, usize) {
    let seqs = all_sequences(max_len, 3);
    let dist = edit_graph_distances(&seqs, 3);
    let mut bad = 0;
    let mut n = 0;
    for (i, a) in seqs.iter().enumerate() {
        for (j, b) in seqs.iter().enumerate() {
            let c = edit_distance(a, b);
            if c.errors() != usize::from(dist[i][j]) || c.substitutions + c.deletions > a.len() {
                bad += 1;
            }
            n += 1;
        }
    }
    (bad, n)
}

pub fn suite_metrics() -> Vec<SuiteReport> {
    let (bad, n) = edit_distance_disagreements(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut brute_bad = 0;
    for _ in 0..300 {
        let a: Vec<u8> = (0..rng.random_range(0..=5)).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<u8> = (0..rng.random_range(0..=5)).map(|_| rng.random_range(0..3)).collect();
        if edit_distance(&a, &b).errors() != edit_distance_brute_force(&a, &b) {
            brute_bad += 1;
        }
    }
    let kitten: Vec<char> = "kitten".chars().collect();
    let sitting: Vec<char> = "sitting".chars().collect();
    let kitten_ok = edit_distance(&kitten, &sitting).errors() == 3;
    let pooled = wer(&[(vec![1, 2, 3, 4], vec![1, 2, 3, 5]), (vec![1, 2, 3, 4, 5, 6], vec![1, 2, 3, 4])]);
    let pooled_err = pooled.map_or(f64::INFINITY, |w| (w - 0.3).abs());
    vec![
        SuiteReport::new(
            "edit-oracle",
            (bad + brute_bad + usize::from(!kitten_ok)) as f64,
            0.5,
            n + 301,
            "(disagreeing pairs)".into(),
        ),
        SuiteReport::new("wer-pooling", pooled_err, 1e-12, 1, String::new()),
    ]
}

/// Small corpus and training configuration for reproducibility checks.
pub fn tiny_run() -> (CorpusConfig, ModelConfig, TrainConfig) {
    let corpus = CorpusConfig {
        train_size: 60,
        valid_size: 12,
        test_size: 12,
        ..CorpusConfig::default()
    };
    let model = ModelConfig {
        feature_dim: corpus.feature_dim,
        conv_layers: vec![
            ConvLayer { kernel: 3, stride: 1, channels: 8 },
            ConvLayer { kernel: 3, stride: 2, channels: 8 },
        ],
        vocab_size: corpus.vocab_size,
        utterance_hidden: 8,
        num_labels: corpus.num_labels(),
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        max_asr_epochs: 2,
        joint_epochs: 2,
        ..TrainConfig::default()
    };
    (corpus, model, train)
}

pub fn suite_determinism() -> Result<Vec<SuiteReport>, crate::error::CliError> {
    let (corpus_config, model, train) = tiny_run();
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    let mut manifests = Vec::new();
    for d in &dirs {
        manifests.push(write_corpus(&generate_corpus(&corpus_config)?, d.path())?);
    }
    let same_data = manifests[0] == manifests[1];
    let corpus = generate_corpus(&corpus_config)?;
    let a = run_ablation(AblationMode::Full, &corpus, &model, &train)?;
    let b = run_ablation(AblationMode::Full, &corpus, &model, &train)?;
    let same_ckpt = a.model.params.to_checkpoint_bytes() == b.model.params.to_checkpoint_bytes();
    let same_log = a.log.to_csv() == b.log.to_csv();
    let failures = [same_data, same_ckpt, same_log].iter().filter(|ok| !**ok).count();
    Ok(vec![SuiteReport::new(
        "determinism",
        failures as f64,
        0.5,
        3,
        "(corpus files, checkpoint bytes, train log)".into(),
    )])
}

pub fn run_all(mutations: Mutations) -> Result<Vec<SuiteReport>, crate::error::CliError> {
    let mut reports = suite_ctc()?;
    reports.extend(suite_gradients(mutations)?);
    reports.extend(suite_metrics());
    reports.extend(suite_determinism()?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_is_caught() {
        let clean = ctc_gradient_error(5, 1, Mutations::default()).unwrap();
        let flipped = ctc_gradient_error(5, 1, Mutations { flip_ctc_grad_sign: true }).unwrap();
        assert!(clean < 1e-4, "{clean}");
        assert!(flipped > 0.5, "{flipped}");
    }

    #[test]
    fn edit_graph_small_cases() {
        let seqs = all_sequences(3, 2);
        assert_eq!(seqs.len(), 15);
        let d = edit_graph_distances(&seqs, 2);
        let idx = |s: &[u8]| seqs.iter().position(|x| x == s).unwrap();
        assert_eq!(d[idx(&[])][idx(&[1, 1, 1])], 3);
        assert_eq!(d[idx(&[0, 1])][idx(&[1, 0])], 2);
        assert_eq!(d[idx(&[0, 1, 1])][idx(&[1, 1])], 1);
        assert_eq!(edit_distance_disagreements(4).0, 0);
    }
}
