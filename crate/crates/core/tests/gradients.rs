//! Finite-difference checks of every analytic gradient path.

use ctc_slu::ctc::{ctc_log_likelihood, ctc_loss_from_logits, ctc_grad};
use ctc_slu::model::{
    joint_loss, ConvLayer, LossWeights, ModelConfig, Sample, SluModel, TapMode,
    UtteranceEncoderKind,
};
use ctc_slu::nn::{
    finite_diff_check, finite_diff_report, init_params, log_softmax, ParamSpec, ParamStore,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn config(tap: TapMode, kind: UtteranceEncoderKind) -> ModelConfig {
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

struct Batch {
    frames: Vec<Tensor>,
    transcripts: Vec<Vec<usize>>,
    labels: Vec<usize>,
}

impl Batch {
    fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Batch {
            frames: vec![random_matrix(&mut rng, 12, 8, 1.5), random_matrix(&mut rng, 12, 8, 1.5)],
            transcripts: vec![vec![0, 3, 3], vec![4, 1]],
            labels: vec![2, 5],
        }
    }

    fn samples(&self) -> Vec<Sample<'_>> {
        (0..self.frames.len())
            .map(|i| Sample {
                frames: &self.frames[i],
                transcript: &self.transcripts[i],
                label: self.labels[i],
            })
            .collect()
    }
}

fn check_model(tap: TapMode, kind: UtteranceEncoderKind, weights: LossWeights) -> f64 {
    let batch = Batch::random(17);
    let mut model = SluModel::new(config(tap, kind), 99).unwrap();
    model.params.zero_grad();
    joint_loss(&mut model, &batch.samples(), weights, true, true).unwrap();
    let cfg = model.config.clone();
    let report = finite_diff_report(
        |p: &ParamStore| {
            let mut m = SluModel { config: cfg.clone(), params: p.clone() };
            joint_loss(&mut m, &batch.samples(), weights, false, true).unwrap().total
        },
        &model.params,
        H,
        400,
        5,
    );
    assert!(report.max_rel_error < TOL, "{tap:?}/{kind:?}: {report:?}");
    report.max_rel_error
}

const JOINT: LossWeights = LossWeights { alpha_ctc: 0.5, alpha_slu: 1.0 };

#[test]
fn full_model_logits_tap() {
    check_model(TapMode::Logits, UtteranceEncoderKind::Dense, JOINT);
}

#[test]
fn full_model_hidden_tap() {
    check_model(TapMode::Hidden, UtteranceEncoderKind::Dense, JOINT);
}

#[test]
fn full_model_probability_tap() {
    check_model(TapMode::Probabilities, UtteranceEncoderKind::Dense, JOINT);
}

#[test]
fn full_model_conv_utterance_encoder() {
    check_model(TapMode::Logits, UtteranceEncoderKind::Conv, JOINT);
}

#[test]
fn asr_only_and_slu_only_weights() {
    check_model(TapMode::Logits, UtteranceEncoderKind::Dense, LossWeights::ASR_ONLY);
    check_model(
        TapMode::Hidden,
        UtteranceEncoderKind::Dense,
        LossWeights { alpha_ctc: 0.0, alpha_slu: 1.0 },
    );
}

#[test]
fn input_frame_gradient() {
    let batch = Batch::random(3);
    let transcript = &batch.transcripts[0];
    let mut model = SluModel::new(config(TapMode::Logits, UtteranceEncoderKind::Dense), 4).unwrap();
    let x = &batch.frames[0];
    let trace = model.forward(x).unwrap();
    let (_, ctc) = ctc_loss_from_logits(&trace.frame_logits, transcript).unwrap().unwrap();
    let (_, ce) = ctc_slu::nn::cross_entropy(&trace.label_logits, 1).unwrap();
    let d_frame = ctc.map(|g| g * JOINT.alpha_ctc);
    let d_x = model.backward_to_input(&trace, Some(&d_frame), Some(&ce)).unwrap();

    let mut store = ParamStore::new();
    store.insert("x", x.clone()).unwrap();
    store.grad_mut("x").copy_from_slice(d_x.values());
    let err = finite_diff_check(
        |p| {
            let mut m = model.clone();
            let s = Sample { frames: p.value("x"), transcript, label: 1 };
            joint_loss(&mut m, &[s], JOINT, false, true).unwrap().total
        },
        &store,
        H,
        usize::MAX,
        0,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn standalone_ctc_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..10 {
        let (frames, classes) = (5, 4);
        let logits = random_matrix(&mut rng, frames, classes, 2.0);
        let transcript = vec![rng.random_range(0..3), rng.random_range(0..3)];
        let Some((_, grad)) = ctc_loss_from_logits(&logits, &transcript).unwrap() else {
            continue;
        };
        let mut store = ParamStore::new();
        store.insert("logits", logits).unwrap();
        store.grad_mut("logits").copy_from_slice(grad.values());
        let err = finite_diff_check(
            |p| ctc_loss_from_logits(p.value("logits"), &transcript).unwrap().unwrap().0,
            &store,
            H,
            usize::MAX,
            0,
        );
        assert!(err < TOL, "case {case}: {err}");
        for t in 0..frames {
            assert!(grad.row(t).iter().sum::<f64>().abs() < 1e-9);
        }
    }
}

#[test]
fn flipped_ctc_gradient_fails_the_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = random_matrix(&mut rng, 5, 4, 2.0);
    let lp = log_softmax(&logits);
    let table = ctc_log_likelihood(&lp, &[0, 2]).unwrap();
    let grad = ctc_grad(&lp, &table).unwrap();
    let mut store = ParamStore::new();
    store.insert("logits", logits).unwrap();
    store.grad_mut("logits").copy_from_slice(&grad.map(|g| -g).into_values());
    let err = finite_diff_check(
        |p| ctc_loss_from_logits(p.value("logits"), &[0, 2]).unwrap().unwrap().0,
        &store,
        H,
        usize::MAX,
        0,
    );
    assert!(err > 0.5);
}

#[test]
fn slu_weight_zero_leaves_head_gradients_zero() {
    let batch = Batch::random(5);
    let mut model = SluModel::new(config(TapMode::Logits, UtteranceEncoderKind::Dense), 1).unwrap();
    model.params.zero_grad();
    joint_loss(&mut model, &batch.samples(), LossWeights::ASR_ONLY, true, true).unwrap();
    for (name, entry) in model.params.iter() {
        let g = entry.grad.as_ref().unwrap();
        let all_zero = g.values().iter().all(|&v| v == 0.0);
        if name.starts_with("utterance.") || name.starts_with("classifier.") {
            assert!(all_zero, "{name}");
        } else {
            assert!(!all_zero, "{name}");
        }
    }
}

#[test]
fn dense_layer_gradient() {
    let specs = ParamSpec::dense("fc", 4, 3);
    let mut store = init_params(&specs, 3).unwrap();
    let x = Tensor::vector(vec![0.2, -0.4, 1.0, 0.5]);
    let target = [0.1, 0.2, -0.3];
    let loss = |p: &ParamStore| {
        let y = ctc_slu::nn::linear_forward(&x, p.value("fc.weight"), p.value("fc.bias")).unwrap();
        y.values().iter().zip(target).map(|(a, b)| 0.5 * (a - b).powi(2)).sum::<f64>()
    };
    let y = ctc_slu::nn::linear_forward(&x, store.value("fc.weight"), store.value("fc.bias")).unwrap();
    let g_out = Tensor::vector(y.values().iter().zip(target).map(|(a, b)| a - b).collect());
    let grads = ctc_slu::nn::linear_backward(&x, store.value("fc.weight"), &g_out).unwrap();
    store.grad_mut("fc.weight").copy_from_slice(grads.weight.values());
    store.grad_mut("fc.bias").copy_from_slice(grads.bias.values());
    assert!(finite_diff_check(loss, &store, H, usize::MAX, 0) < 1e-8);
}
