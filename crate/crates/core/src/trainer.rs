//! Two-phase training (ASR warm-up, then joint), early stopping, checkpoint
//! selection, evaluation and the ablation runners.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ctc::greedy_decode;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, cer, wer};
use crate::model::{
    argmax, is_head_param, is_trunk_param, joint_loss, LossWeights, ModelConfig, Prediction,
    Sample, SluModel, TapMode, UtteranceEncoderKind,
};
use crate::nn::{clip_grad_norm, cross_entropy, init_params, AdamW, ParamSpec, ParamStore, Tensor};
use crate::seed::{derive_seed, rng_for};
use crate::synth::{Corpus, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    NoCtc,
    FrozenEncoder,
    ProbTap,
    HiddenTap,
    CnnEncoder,
    Cascade,
}

impl AblationMode {
    /// Table row order: baselines first, the full system last, then the
    /// hidden-tap variant.
    pub const ALL: [AblationMode; 7] = [
        AblationMode::Cascade,
        AblationMode::NoCtc,
        AblationMode::FrozenEncoder,
        AblationMode::ProbTap,
        AblationMode::CnnEncoder,
        AblationMode::Full,
        AblationMode::HiddenTap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoCtc => "no_ctc",
            AblationMode::FrozenEncoder => "frozen_encoder",
            AblationMode::ProbTap => "prob_tap",
            AblationMode::HiddenTap => "hidden_tap",
            AblationMode::CnnEncoder => "cnn_encoder",
            AblationMode::Cascade => "cascade",
        }
    }

    pub fn runs_asr_phase(self) -> bool {
        self != AblationMode::NoCtc
    }

    pub fn runs_joint_phase(self) -> bool {
        self != AblationMode::Cascade
    }

    /// The model architecture this mode trains, derived from `base`.
    pub fn model_config(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            AblationMode::Full | AblationMode::FrozenEncoder | AblationMode::Cascade => {
                c.tap = TapMode::Logits;
            }
            AblationMode::NoCtc | AblationMode::HiddenTap => c.tap = TapMode::Hidden,
            AblationMode::ProbTap => c.tap = TapMode::Probabilities,
            AblationMode::CnnEncoder => {
                c.tap = TapMode::Logits;
                c.utterance_encoder = UtteranceEncoderKind::Conv;
            }
        }
        c
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub alpha_ctc: f64,
    pub alpha_slu: f64,
    pub asr_patience: usize,
    pub max_asr_epochs: usize,
    pub joint_epochs: usize,
    /// Strict improvement needed to reset ASR patience.
    pub min_improvement: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub ablation: AblationMode,
    /// Candidate alpha_ctc values swept by the ablation command.
    pub alpha_ctc_grid: Vec<f64>,
    /// Record elapsed seconds in the log; off keeps logs byte-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            weight_decay: 0.01,
            batch_size: 16,
            alpha_ctc: 0.5,
            alpha_slu: 1.0,
            asr_patience: 5,
            max_asr_epochs: 40,
            joint_epochs: 50,
            min_improvement: 1e-6,
            grad_clip: 5.0,
            seed: 7,
            ablation: AblationMode::Full,
            alpha_ctc_grid: Vec::new(),
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.asr_patience == 0 {
            return bad("asr_patience must be at least 1");
        }
        if self.max_asr_epochs == 0 || self.joint_epochs == 0 {
            return bad("epoch counts must be at least 1");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.alpha_ctc_grid.iter().any(|a| !(*a >= 0.0)) {
            return bad("alpha_ctc_grid values must be non-negative");
        }
        self.joint_weights().validate()
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            weight_decay: self.weight_decay,
            ..AdamW::new(self.lr)
        }
    }

    /// Joint-phase loss weights after the ablation mode is applied.
    pub fn joint_weights(&self) -> LossWeights {
        match self.ablation {
            AblationMode::NoCtc => LossWeights { alpha_ctc: 0.0, alpha_slu: self.alpha_slu },
            _ => LossWeights { alpha_ctc: self.alpha_ctc, alpha_slu: self.alpha_slu },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Asr,
    Joint,
    Cascade,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Asr => "asr",
            Phase::Joint => "joint",
            Phase::Cascade => "cascade",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based within the phase.
    pub epoch: usize,
    pub phase: Phase,
    pub ctc_loss: Option<f64>,
    pub slu_loss: Option<f64>,
    pub valid_ctc: Option<f64>,
    pub valid_acc: Option<f64>,
    pub valid_wer: Option<f64>,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,phase,ctc_loss,slu_loss,valid_acc,valid_wer,seconds";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch restored at the end of the ASR phase.
    pub best_asr_epoch: Option<usize>,
    /// Epoch with the highest validation accuracy in the final phase.
    pub best_epoch: Option<usize>,
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
        self.best_asr_epoch = other.best_asr_epoch.or(self.best_asr_epoch);
        self.best_epoch = other.best_epoch.or(self.best_epoch);
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.phase.name(),
                csv_field(r.ctc_loss),
                csv_field(r.slu_loss),
                csv_field(r.valid_acc),
                csv_field(r.valid_wer),
                r.seconds
            ));
        }
        out
    }
}

/// Patience-based stopping on a loss that must fall by more than
/// `min_improvement` to count.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    min_improvement: f64,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_improvement: f64) -> Self {
        Self {
            patience,
            min_improvement,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records the next epoch's loss; returns true if it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.epoch += 1;
        let improved = self.best_epoch == 0 || loss < self.best - self.min_improvement;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.epoch - self.best_epoch >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Running maximum with earliest-epoch tie-break.
#[derive(Debug, Clone, Default)]
pub struct BestTracker {
    best: Option<(usize, f64)>,
    epoch: usize,
}

impl BestTracker {
    pub fn observe(&mut self, score: f64) -> bool {
        self.epoch += 1;
        let better = self.best.is_none_or(|(_, b)| score > b);
        if better {
            self.best = Some((self.epoch, score));
        }
        better
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.map(|(_, s)| s)
    }
}

/// Training order of `n` items for one epoch; a pure function of its inputs.
pub fn epoch_order(n: usize, seed: u64, phase: Phase, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &["shuffle", phase.name(), &epoch.to_string()]);
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub count: usize,
    pub accuracy: f64,
    pub wer: f64,
    pub cer: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Accuracy on utterances whose greedy decode differs from the reference;
    /// `None` when there are none.
    pub error_subset_accuracy: Option<f64>,
    pub error_subset_size: usize,
}

/// Metrics from precomputed predictions.
pub fn evaluate_predictions(
    utterances: &[Utterance],
    predictions: &[Prediction],
    vocab: &[String],
    num_labels: usize,
) -> Result<Evaluation> {
    if utterances.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    if utterances.len() != predictions.len() {
        return Err(Error::InvalidInput("prediction count does not match the split".into()));
    }
    let labels: Vec<usize> = utterances.iter().map(|u| u.label).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    let mut confusion = vec![vec![0; num_labels]; num_labels];
    for (&t, &p) in labels.iter().zip(&predicted) {
        if t >= num_labels || p >= num_labels {
            return Err(Error::InvalidLabel { label: t.max(p), classes: num_labels });
        }
        confusion[t][p] += 1;
    }
    let token_pairs: Vec<(Vec<usize>, Vec<usize>)> = utterances
        .iter()
        .zip(predictions)
        .map(|(u, p)| (u.transcript.clone(), p.decoded.clone()))
        .collect();
    let name = |t: &usize| vocab.get(*t).cloned().ok_or(Error::InvalidLabel { label: *t, classes: vocab.len() });
    let string_pairs = token_pairs
        .iter()
        .map(|(r, h)| Ok((r.iter().map(name).collect::<Result<Vec<_>>>()?, h.iter().map(name).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<Vec<_>>>()?;

    let wrong: Vec<usize> = (0..utterances.len())
        .filter(|&i| token_pairs[i].0 != token_pairs[i].1)
        .collect();
    let error_subset_accuracy = if wrong.is_empty() {
        None
    } else {
        let p: Vec<usize> = wrong.iter().map(|&i| predicted[i]).collect();
        let l: Vec<usize> = wrong.iter().map(|&i| labels[i]).collect();
        Some(accuracy(&p, &l)?)
    };
    Ok(Evaluation {
        count: utterances.len(),
        accuracy: accuracy(&predicted, &labels)?,
        wer: wer(&token_pairs)?,
        cer: cer(&string_pairs)?,
        confusion,
        error_subset_accuracy,
        error_subset_size: wrong.len(),
    })
}

pub fn predict_all(model: &SluModel, utterances: &[Utterance]) -> Result<Vec<Prediction>> {
    utterances.iter().map(|u| model.predict(&u.frames)).collect()
}

pub fn evaluate(model: &SluModel, utterances: &[Utterance], vocab: &[String]) -> Result<Evaluation> {
    let predictions = predict_all(model, utterances)?;
    evaluate_predictions(utterances, &predictions, vocab, model.config.num_labels)
}

/// Mean CTC loss over the CTC-feasible utterances and greedy WER.
pub fn asr_metrics(model: &SluModel, utterances: &[Utterance]) -> Result<(Option<f64>, f64)> {
    if utterances.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut pairs = Vec::with_capacity(utterances.len());
    for u in utterances {
        let logits = model.frame_classify(&model.acoustic_encode(&u.frames)?)?;
        if let Some((loss, _)) = crate::ctc::ctc_loss_from_logits(&logits, &u.transcript)? {
            sum += loss;
            n += 1;
        }
        pairs.push((u.transcript.clone(), greedy_decode(&logits)));
    }
    Ok(((n > 0).then(|| sum / n as f64), wer(&pairs)?))
}

struct EpochLosses {
    ctc: Option<f64>,
    slu: f64,
}

/// One pass of shuffled mini-batches. `trainable` selects the parameters
/// that are clipped and stepped.
fn train_epoch(
    model: &mut SluModel,
    data: &[Utterance],
    config: &TrainConfig,
    weights: LossWeights,
    phase: Phase,
    epoch: usize,
    trainable: fn(&str) -> bool,
) -> Result<EpochLosses> {
    let optimizer = config.optimizer();
    let update_trunk = model.params.names().any(|n| trainable(n) && is_trunk_param(n));
    let order = epoch_order(data.len(), config.seed, phase, epoch);
    let (mut ctc_sum, mut ctc_items, mut slu_sum) = (0.0, 0usize, 0.0);
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<Sample<'_>> = chunk.iter().map(|&i| data[i].sample()).collect();
        model.params.zero_grad();
        let loss = joint_loss(model, &batch, weights, true, update_trunk)?;
        if let Some(c) = loss.ctc {
            ctc_sum += c * loss.ctc_items as f64;
            ctc_items += loss.ctc_items;
        }
        slu_sum += loss.slu * batch.len() as f64;
        clip_grad_norm(&mut model.params, config.grad_clip, trainable);
        optimizer.step_filtered(&mut model.params, trainable)?;
    }
    model.params.zero_grad();
    Ok(EpochLosses {
        ctc: (ctc_items > 0).then(|| ctc_sum / ctc_items as f64),
        slu: slu_sum / data.len() as f64,
    })
}

fn require_nonempty(corpus: &Corpus) -> Result<()> {
    if corpus.train.is_empty() || corpus.valid.is_empty() {
        return Err(Error::Data("train and valid splits must be non-empty".into()));
    }
    Ok(())
}

fn elapsed(start: Instant, config: &TrainConfig) -> f64 {
    if config.log_wall_time {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

/// CTC-only warm-up of the trunk with early stopping on validation CTC loss;
/// the best epoch's parameters are restored.
pub fn train_asr_phase(model: &mut SluModel, corpus: &Corpus, config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    require_nonempty(corpus)?;
    model.params.reset_optimizer_state();
    let mut stopper = EarlyStopper::new(config.asr_patience, config.min_improvement);
    let mut best = model.params.clone();
    let mut log = TrainLog::default();
    for epoch in 1..=config.max_asr_epochs {
        let start = Instant::now();
        let losses = train_epoch(model, &corpus.train, config, LossWeights::ASR_ONLY, Phase::Asr, epoch, is_trunk_param)?;
        let (valid_ctc, valid_wer) = asr_metrics(model, &corpus.valid)?;
        let score = valid_ctc.unwrap_or(f64::INFINITY);
        if stopper.observe(score) {
            best = model.params.clone();
        }
        log::info!("asr epoch {epoch}: train ctc {:?}, valid ctc {score:.5}, valid wer {valid_wer:.4}", losses.ctc);
        log.records.push(EpochRecord {
            epoch,
            phase: Phase::Asr,
            ctc_loss: losses.ctc,
            slu_loss: None,
            valid_ctc,
            valid_acc: None,
            valid_wer: Some(valid_wer),
            seconds: elapsed(start, config),
        });
        if stopper.should_stop() {
            break;
        }
    }
    model.params = best;
    log.best_asr_epoch = Some(stopper.best_epoch());
    Ok(log)
}

/// Fixed-length joint training selecting the epoch with the best validation
/// accuracy. `trainable` picks the parameters that move.
pub fn train_joint_phase(
    model: &mut SluModel,
    corpus: &Corpus,
    config: &TrainConfig,
    trainable: fn(&str) -> bool,
) -> Result<TrainLog> {
    config.validate()?;
    require_nonempty(corpus)?;
    let weights = config.joint_weights();
    model.params.reset_optimizer_state();
    let (start_ctc, _) = asr_metrics(model, &corpus.valid)?;
    let mut tracker = BestTracker::default();
    let mut best = model.params.clone();
    let mut log = TrainLog::default();
    for epoch in 1..=config.joint_epochs {
        let start = Instant::now();
        let losses = train_epoch(model, &corpus.train, config, weights, Phase::Joint, epoch, trainable)?;
        let predictions = predict_all(model, &corpus.valid)?;
        let eval = evaluate_predictions(&corpus.valid, &predictions, &corpus.vocab, model.config.num_labels)?;
        let (valid_ctc, _) = asr_metrics(model, &corpus.valid)?;
        if let (Some(before), Some(now)) = (start_ctc, valid_ctc) {
            if now > before + 0.1 {
                log::warn!("joint epoch {epoch}: valid CTC loss {now:.4} is above its pre-joint value {before:.4}");
            }
        }
        if tracker.observe(eval.accuracy) {
            best = model.params.clone();
        }
        log::info!(
            "joint epoch {epoch}: train ctc {:?}, slu {:.5}, valid acc {:.4}, wer {:.4}",
            losses.ctc,
            losses.slu,
            eval.accuracy,
            eval.wer
        );
        log.records.push(EpochRecord {
            epoch,
            phase: Phase::Joint,
            ctc_loss: losses.ctc,
            slu_loss: Some(losses.slu),
            valid_ctc,
            valid_acc: Some(eval.accuracy),
            valid_wer: Some(eval.wer),
            seconds: elapsed(start, config),
        });
    }
    model.params = best;
    log.best_epoch = tracker.best_epoch();
    Ok(log)
}

/// Bag-of-token-counts linear intent classifier over decoded transcripts.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfTokens {
    pub vocab_size: usize,
    pub num_labels: usize,
    pub params: ParamStore,
}

impl BagOfTokens {
    pub const PREFIX: &'static str = "cascade";

    pub fn new(vocab_size: usize, num_labels: usize, seed: u64) -> Result<Self> {
        let specs = ParamSpec::dense(Self::PREFIX, vocab_size, num_labels);
        Ok(Self {
            vocab_size,
            num_labels,
            params: init_params(&specs, seed)?,
        })
    }

    pub fn from_params(vocab_size: usize, num_labels: usize, params: ParamStore) -> Result<Self> {
        let expected = Self::new(vocab_size, num_labels, 0)?;
        expected.params.check_same_layout(&params)?;
        Ok(Self { vocab_size, num_labels, params })
    }

    pub fn features(&self, tokens: &[usize]) -> Tensor {
        let mut counts = vec![0.0; self.vocab_size];
        for &t in tokens {
            if t < self.vocab_size {
                counts[t] += 1.0;
            }
        }
        Tensor::vector(counts)
    }

    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor> {
        crate::nn::linear_forward(
            &self.features(tokens),
            self.params.value("cascade.weight"),
            self.params.value("cascade.bias"),
        )
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<usize> {
        Ok(argmax(self.logits(tokens)?.values()))
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars(None)
    }
}

/// Trains `classifier` on (decoded tokens, label) pairs, keeping the epoch
/// with the best validation accuracy.
pub fn train_cascade(
    classifier: &mut BagOfTokens,
    train: &[(Vec<usize>, usize)],
    valid: &[(Vec<usize>, usize)],
    config: &TrainConfig,
) -> Result<TrainLog> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data("cascade training needs non-empty train and valid sets".into()));
    }
    let optimizer = config.optimizer();
    let mut tracker = BestTracker::default();
    let mut best = classifier.params.clone();
    let mut log = TrainLog::default();
    for epoch in 1..=config.joint_epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        for chunk in epoch_order(train.len(), config.seed, Phase::Cascade, epoch).chunks(config.batch_size) {
            classifier.params.zero_grad();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (tokens, label) = &train[i];
                let x = classifier.features(tokens);
                let logits = classifier.logits(tokens)?;
                let (loss, grad) = cross_entropy(&logits, *label)?;
                loss_sum += loss;
                let grads = crate::nn::linear_backward(&x, classifier.params.value("cascade.weight"), &grad)?;
                for (g, d) in classifier.params.grad_mut("cascade.weight").iter_mut().zip(grads.weight.values()) {
                    *g += scale * d;
                }
                for (g, d) in classifier.params.grad_mut("cascade.bias").iter_mut().zip(grads.bias.values()) {
                    *g += scale * d;
                }
            }
            clip_grad_norm(&mut classifier.params, config.grad_clip, |_| true);
            optimizer.step(&mut classifier.params)?;
        }
        let predicted = valid.iter().map(|(t, _)| classifier.predict(t)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = valid.iter().map(|(_, l)| *l).collect();
        let acc = accuracy(&predicted, &labels)?;
        if tracker.observe(acc) {
            best = classifier.params.clone();
        }
        log.records.push(EpochRecord {
            epoch,
            phase: Phase::Cascade,
            ctc_loss: None,
            slu_loss: Some(loss_sum / train.len() as f64),
            valid_ctc: None,
            valid_acc: Some(acc),
            valid_wer: None,
            seconds: elapsed(start, config),
        });
    }
    classifier.params = best;
    classifier.params.zero_grad();
    log.best_epoch = tracker.best_epoch();
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub trunk: usize,
    /// Utterance encoder and label classifier, or the cascade classifier.
    pub head: usize,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub mode: AblationMode,
    pub model: SluModel,
    pub cascade: Option<BagOfTokens>,
    /// Parameters right after the ASR phase, before any joint training.
    pub asr_params: Option<ParamStore>,
    pub log: TrainLog,
    pub test: Evaluation,
    pub valid_wer_before_joint: Option<f64>,
    pub valid_wer_after_joint: Option<f64>,
    pub params: ParamCounts,
}

impl AblationOutcome {
    pub fn predict(&self, frames: &Tensor) -> Result<Prediction> {
        match &self.cascade {
            None => self.model.predict(frames),
            Some(c) => {
                let decoded = self.model.decode(frames)?;
                Ok(Prediction { label: c.predict(&decoded)?, decoded })
            }
        }
    }
}

/// Result of an ASR phase, reusable by every mode that shares its trunk.
#[derive(Debug, Clone)]
pub struct AsrPhaseResult {
    pub trunk: ParamStore,
    pub log: TrainLog,
}

fn model_seed(config: &TrainConfig) -> u64 {
    derive_seed(config.seed, &["model"])
}

fn trunk_key(config: &ModelConfig) -> String {
    let mut c = config.clone();
    c.tap = TapMode::Logits;
    c.tap_detach = false;
    c.utterance_encoder = UtteranceEncoderKind::Dense;
    c.architecture_hash()
}

fn trunk_of(params: &ParamStore) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for (name, entry) in params.iter().filter(|(n, _)| is_trunk_param(n)) {
        out.insert(name, entry.value.clone())?;
    }
    Ok(out)
}

fn load_trunk(model: &mut SluModel, trunk: &ParamStore) {
    for (name, entry) in trunk.iter() {
        *model.params.value_mut(name) = entry.value.clone();
    }
}

/// Runs one ablation mode end to end. `asr_cache` maps trunk architectures to
/// finished ASR phases so a suite pays for each warm-up once.
pub fn run_ablation_cached(
    mode: AblationMode,
    corpus: &Corpus,
    base: &ModelConfig,
    config: &TrainConfig,
    asr_cache: &mut BTreeMap<String, AsrPhaseResult>,
) -> Result<AblationOutcome> {
    let config = TrainConfig { ablation: mode, ..config.clone() };
    config.validate()?;
    let model_config = mode.model_config(base);
    model_config.validate()?;
    let mut model = SluModel::new(model_config, model_seed(&config))?;
    let mut log = TrainLog::default();

    if mode.runs_asr_phase() {
        let key = format!("{}:{}", trunk_key(&model.config), serde_json::to_string(&config_for_asr(&config))?);
        let asr = match asr_cache.get(&key) {
            Some(hit) => hit.clone(),
            None => {
                let asr_log = train_asr_phase(&mut model, corpus, &config)?;
                let result = AsrPhaseResult { trunk: trunk_of(&model.params)?, log: asr_log };
                asr_cache.insert(key, result.clone());
                result
            }
        };
        load_trunk(&mut model, &asr.trunk);
        log.extend(asr.log);
    }
    let asr_params = mode.runs_asr_phase().then(|| model.params.clone());
    let valid_wer_before_joint = if mode.runs_asr_phase() {
        Some(asr_metrics(&model, &corpus.valid)?.1)
    } else {
        None
    };

    let mut cascade = None;
    if mode.runs_joint_phase() {
        let trainable: fn(&str) -> bool = if mode == AblationMode::FrozenEncoder { is_head_param } else { |_| true };
        log.extend(train_joint_phase(&mut model, corpus, &config, trainable)?);
    } else {
        let decode = |split: &[Utterance]| -> Result<Vec<(Vec<usize>, usize)>> {
            split.iter().map(|u| Ok((model.decode(&u.frames)?, u.label))).collect()
        };
        let (train, valid) = (decode(&corpus.train)?, decode(&corpus.valid)?);
        let mut classifier = BagOfTokens::new(
            model.config.vocab_size,
            model.config.num_labels,
            derive_seed(config.seed, &["cascade"]),
        )?;
        log.extend(train_cascade(&mut classifier, &train, &valid, &config)?);
        cascade = Some(classifier);
    }
    let valid_wer_after_joint = if mode.runs_joint_phase() {
        Some(asr_metrics(&model, &corpus.valid)?.1)
    } else {
        valid_wer_before_joint
    };

    let params = ParamCounts {
        trunk: model.params.iter().filter(|(n, _)| is_trunk_param(n)).map(|(_, e)| e.value.len()).sum(),
        head: match &cascade {
            Some(c) => c.num_params(),
            None => model.params.iter().filter(|(n, _)| is_head_param(n)).map(|(_, e)| e.value.len()).sum(),
        },
        total: 0,
    };
    let params = ParamCounts { total: params.trunk + params.head, ..params };
    let mut outcome = AblationOutcome {
        mode,
        model,
        cascade,
        asr_params,
        log,
        test: Evaluation {
            count: 0,
            accuracy: 0.0,
            wer: 0.0,
            cer: 0.0,
            confusion: Vec::new(),
            error_subset_accuracy: None,
            error_subset_size: 0,
        },
        valid_wer_before_joint,
        valid_wer_after_joint,
        params,
    };
    let predictions = corpus
        .test
        .iter()
        .map(|u| outcome.predict(&u.frames))
        .collect::<Result<Vec<_>>>()?;
    outcome.test = evaluate_predictions(&corpus.test, &predictions, &corpus.vocab, outcome.model.config.num_labels)?;
    Ok(outcome)
}

/// The fields an ASR phase depends on.
fn config_for_asr(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        alpha_ctc: 0.0,
        alpha_slu: 0.0,
        joint_epochs: 1,
        ablation: AblationMode::Full,
        alpha_ctc_grid: Vec::new(),
        ..config.clone()
    }
}

pub fn run_ablation(
    mode: AblationMode,
    corpus: &Corpus,
    base: &ModelConfig,
    config: &TrainConfig,
) -> Result<AblationOutcome> {
    run_ablation_cached(mode, corpus, base, config, &mut BTreeMap::new())
}
