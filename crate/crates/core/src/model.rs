//! The full SLU network: a temporal-convolution acoustic encoder, a shared
//! frame classifier whose logits drive CTC, a tap routing a frame-level
//! signal to a maxpool utterance encoder, and a linear intent classifier.

use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_loss_from_logits, greedy_decode, min_frames};
use crate::error::{Error, Result};
use crate::nn::{
    affine_rows_backward, conv1d_backward, conv1d_forward, cross_entropy, gelu, gelu_backward,
    linear_forward, log_softmax, maxpool_backward, maxpool_time, softmax, softmax_backward,
    Conv1dGeometry, ParamSpec, ParamStore, Tensor,
};
use crate::seed::sha256_hex;

/// Which frame-level signal feeds the utterance encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapMode {
    Hidden,
    Logits,
    Probabilities,
}

impl std::str::FromStr for TapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden" => Ok(Self::Hidden),
            "logits" => Ok(Self::Logits),
            "probabilities" => Ok(Self::Probabilities),
            other => Err(Error::Config(format!("unknown tap mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceEncoderKind {
    /// Maxpool followed by two dense GELU layers.
    Dense,
    /// Two temporal convolutions (kernels 3 and 5) before the dense encoder.
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

impl ConvLayer {
    pub fn geometry(&self) -> Conv1dGeometry {
        Conv1dGeometry {
            kernel: self.kernel,
            stride: self.stride,
            pad_left: (self.kernel - 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub conv_layers: Vec<ConvLayer>,
    /// Number of real tokens; the blank adds one more frame class.
    pub vocab_size: usize,
    pub utterance_hidden: usize,
    pub num_labels: usize,
    pub tap: TapMode,
    /// Stop gradients at the probability tap.
    pub tap_detach: bool,
    pub utterance_encoder: UtteranceEncoderKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            conv_layers: vec![
                ConvLayer { kernel: 5, stride: 1, channels: 64 },
                ConvLayer { kernel: 5, stride: 1, channels: 64 },
                ConvLayer { kernel: 5, stride: 2, channels: 64 },
            ],
            vocab_size: 20,
            utterance_hidden: 128,
            num_labels: 9,
            tap: TapMode::Logits,
            tap_detach: false,
            utterance_encoder: UtteranceEncoderKind::Dense,
        }
    }
}

const UTT_CONV_KERNELS: [usize; 2] = [3, 5];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.feature_dim == 0 || self.vocab_size == 0 || self.num_labels == 0 {
            return bad("feature_dim, vocab_size and num_labels must be positive");
        }
        if self.utterance_hidden == 0 {
            return bad("utterance_hidden must be positive");
        }
        if self.conv_layers.is_empty() {
            return bad("the acoustic encoder needs at least one convolution");
        }
        for l in &self.conv_layers {
            if l.kernel == 0 || l.stride == 0 || l.channels == 0 {
                return bad("convolution kernel, stride and channels must be positive");
            }
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.conv_layers.last().map_or(self.feature_dim, |l| l.channels)
    }

    pub fn frame_classes(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn blank(&self) -> usize {
        self.vocab_size
    }

    pub fn tap_dim(&self) -> usize {
        match self.tap {
            TapMode::Hidden => self.hidden_dim(),
            TapMode::Logits | TapMode::Probabilities => self.frame_classes(),
        }
    }

    pub fn subsampling(&self) -> usize {
        self.conv_layers.iter().map(|l| l.stride).product()
    }

    /// Encoder output length for `frames` input frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        self.conv_layers
            .iter()
            .fold(frames, |t, l| l.geometry().output_len(t))
    }

    /// Hash of the canonical JSON form, used to pair checkpoints with configs.
    pub fn architecture_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut width = self.feature_dim;
        for (i, l) in self.conv_layers.iter().enumerate() {
            specs.extend(ParamSpec::conv(&format!("encoder.conv{i}"), l.kernel, width, l.channels));
            width = l.channels;
        }
        specs.extend(ParamSpec::dense("frame", width, self.frame_classes()));
        let mut utt_in = self.tap_dim();
        if self.utterance_encoder == UtteranceEncoderKind::Conv {
            for (i, &k) in UTT_CONV_KERNELS.iter().enumerate() {
                specs.extend(ParamSpec::conv(
                    &format!("utterance.conv{i}"),
                    k,
                    utt_in,
                    self.utterance_hidden,
                ));
                utt_in = self.utterance_hidden;
            }
        }
        specs.extend(ParamSpec::dense("utterance.fc1", utt_in, self.utterance_hidden));
        specs.extend(ParamSpec::dense(
            "utterance.fc2",
            self.utterance_hidden,
            self.utterance_hidden,
        ));
        specs.extend(ParamSpec::dense("classifier", self.utterance_hidden, self.num_labels));
        specs
    }
}

/// Parameters of the ASR trunk (acoustic encoder and frame classifier).
pub fn is_trunk_param(name: &str) -> bool {
    name.starts_with("encoder.") || name.starts_with("frame.")
}

/// Parameters of the utterance encoder and label classifier.
pub fn is_head_param(name: &str) -> bool {
    !is_trunk_param(name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_ctc: f64,
    pub alpha_slu: f64,
}

impl LossWeights {
    pub const ASR_ONLY: LossWeights = LossWeights { alpha_ctc: 1.0, alpha_slu: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_ctc >= 0.0 && self.alpha_slu >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.alpha_ctc == 0.0 && self.alpha_slu == 0.0 {
            return Err(Error::Config("loss weights cannot both be zero".into()));
        }
        Ok(())
    }
}

/// One training triple: frames, transcript and intent label.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub frames: &'a Tensor,
    pub transcript: &'a [usize],
    pub label: usize,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Tensor,
    pre: Tensor,
    in_frames: usize,
    geom: Conv1dGeometry,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    encoder: Vec<ConvCache>,
    /// Encoder output `H`, `T' × h`.
    pub hidden: Tensor,
    /// `W·h_t + b` per frame, `T' × (V+1)`.
    pub frame_logits: Tensor,
    /// Row-softmax of the frame logits when the probability tap is active.
    tap_probs: Option<Tensor>,
    utterance_convs: Vec<ConvCache>,
    /// Input of the maxpool (after any utterance convolutions).
    pool_input_frames: usize,
    pub pooled: Tensor,
    pub pool_argmax: Vec<usize>,
    fc1_pre: Tensor,
    fc1_out: Tensor,
    fc2_pre: Tensor,
    /// `h^utt`.
    pub utterance: Tensor,
    pub label_logits: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub decoded: Vec<usize>,
}

/// Per-batch loss values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean CTC loss over feasible items; `None` if none were feasible.
    pub ctc: Option<f64>,
    pub slu: f64,
    pub ctc_items: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SluModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn conv_layer(
    params: &ParamStore,
    prefix: &str,
    x: &Tensor,
    geom: Conv1dGeometry,
) -> Result<(Tensor, ConvCache)> {
    let (pre, cols) = conv1d_forward(
        x,
        params.value(&format!("{prefix}.weight")),
        params.value(&format!("{prefix}.bias")),
        geom,
    )?;
    let out = gelu(&pre);
    Ok((
        out,
        ConvCache {
            cols,
            pre,
            in_frames: x.rows(),
            geom,
        },
    ))
}

fn conv_layer_backward(
    params: &mut ParamStore,
    prefix: &str,
    cache: &ConvCache,
    grad_out: &Tensor,
    need_input: bool,
) -> Option<Tensor> {
    let d_pre = gelu_backward(&cache.pre, grad_out);
    let wname = format!("{prefix}.weight");
    let bname = format!("{prefix}.bias");
    let mut gw = params.take_grad(&wname);
    let mut gb = params.take_grad(&bname);
    let d_in = conv1d_backward(
        &cache.cols,
        cache.in_frames,
        params.value(&wname),
        cache.geom,
        &d_pre,
        gw.values_mut(),
        gb.values_mut(),
        need_input,
    );
    params.put_grad(&wname, gw);
    params.put_grad(&bname, gb);
    d_in
}

/// Backward of a dense layer applied to each of `rows` rows of `x`.
fn dense_backward(
    params: &mut ParamStore,
    prefix: &str,
    x: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
) -> Option<Tensor> {
    let wname = format!("{prefix}.weight");
    let bname = format!("{prefix}.bias");
    let mut gw = params.take_grad(&wname);
    let mut gb = params.take_grad(&bname);
    let weight = params.value(&wname);
    let (n_out, n_in) = (weight.rows(), weight.cols());
    let rows = x.len() / n_in;
    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    affine_rows_backward(
        x.values(),
        rows,
        n_in,
        weight.values(),
        n_out,
        grad_out.values(),
        gx.as_deref_mut(),
        gw.values_mut(),
        gb.values_mut(),
    );
    params.put_grad(&wname, gw);
    params.put_grad(&bname, gb);
    gx.map(|g| Tensor::new(x.dims().to_vec(), g).expect("input dims"))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn add_tensor(dst: &mut Tensor, src: &Tensor) {
    add_into(dst.values_mut(), src.values());
}

impl SluModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = crate::nn::init_params(&config.param_specs(), seed)?;
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking they fit `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = crate::nn::init_params(&config.param_specs(), 0)?;
        expected.check_same_layout(&params)?;
        Ok(Self { config, params })
    }

    pub fn num_params(&self, prefix: Option<&str>) -> usize {
        self.params.num_scalars(prefix)
    }

    /// Stack of temporal convolutions, each followed by GELU.
    pub fn acoustic_encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode_cached(x)?.0)
    }

    fn encode_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<ConvCache>)> {
        x.expect_rank(2, "frames")?;
        if x.cols() != self.config.feature_dim {
            return Err(Error::InvalidShape(format!(
                "frames have {} features, model expects {}",
                x.cols(),
                self.config.feature_dim
            )));
        }
        if self.config.output_frames(x.rows()) == 0 {
            return Err(Error::UtteranceTooShort { frames: x.rows() });
        }
        let mut caches = Vec::with_capacity(self.config.conv_layers.len());
        let mut h = x.clone();
        for (i, l) in self.config.conv_layers.iter().enumerate() {
            let (out, cache) = conv_layer(&self.params, &format!("encoder.conv{i}"), &h, l.geometry())?;
            caches.push(cache);
            h = out;
        }
        Ok((h, caches))
    }

    /// Pre-softmax logits `W·h_t + b` for every frame.
    pub fn frame_classify(&self, hidden: &Tensor) -> Result<Tensor> {
        crate::nn::linear_rows(hidden, self.params.value("frame.weight"), self.params.value("frame.bias"))
    }

    /// The frame-level signal routed into the utterance encoder.
    pub fn select_tap(trace: &ForwardTrace, mode: TapMode) -> Tensor {
        match mode {
            TapMode::Hidden => trace.hidden.clone(),
            TapMode::Logits => trace.frame_logits.clone(),
            TapMode::Probabilities => trace
                .tap_probs
                .clone()
                .unwrap_or_else(|| softmax(&trace.frame_logits)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        let (hidden, encoder) = self.encode_cached(x)?;
        let frame_logits = self.frame_classify(&hidden)?;
        let tap_probs = (self.config.tap == TapMode::Probabilities).then(|| softmax(&frame_logits));
        let tap_input = match self.config.tap {
            TapMode::Hidden => &hidden,
            TapMode::Logits => &frame_logits,
            TapMode::Probabilities => tap_probs.as_ref().expect("computed above"),
        };

        let mut utterance_convs = Vec::new();
        let mut pool_in = tap_input.clone();
        if self.config.utterance_encoder == UtteranceEncoderKind::Conv {
            for (i, &k) in UTT_CONV_KERNELS.iter().enumerate() {
                let geom = Conv1dGeometry { kernel: k, stride: 1, pad_left: (k - 1) / 2 };
                let (out, cache) =
                    conv_layer(&self.params, &format!("utterance.conv{i}"), &pool_in, geom)?;
                utterance_convs.push(cache);
                pool_in = out;
            }
        }
        let (pooled, pool_argmax) = maxpool_time(&pool_in)?;
        let fc1_pre = linear_forward(
            &pooled,
            self.params.value("utterance.fc1.weight"),
            self.params.value("utterance.fc1.bias"),
        )?;
        let fc1_out = gelu(&fc1_pre);
        let fc2_pre = linear_forward(
            &fc1_out,
            self.params.value("utterance.fc2.weight"),
            self.params.value("utterance.fc2.bias"),
        )?;
        let utterance = gelu(&fc2_pre);
        let label_logits = self.classify_label(&utterance)?;
        Ok(ForwardTrace {
            encoder,
            pool_input_frames: pool_in.rows(),
            hidden,
            frame_logits,
            tap_probs,
            utterance_convs,
            pooled,
            pool_argmax,
            fc1_pre,
            fc1_out,
            fc2_pre,
            utterance,
            label_logits,
        })
    }

    /// `h^utt` for a tap input: maxpool over time, then two GELU dense layers.
    pub fn utterance_encode(&self, tap_input: &Tensor) -> Result<Tensor> {
        let mut pool_in = tap_input.clone();
        if self.config.utterance_encoder == UtteranceEncoderKind::Conv {
            for (i, &k) in UTT_CONV_KERNELS.iter().enumerate() {
                let geom = Conv1dGeometry { kernel: k, stride: 1, pad_left: (k - 1) / 2 };
                pool_in = conv_layer(&self.params, &format!("utterance.conv{i}"), &pool_in, geom)?.0;
            }
        }
        let (pooled, _) = maxpool_time(&pool_in)?;
        let h1 = gelu(&linear_forward(
            &pooled,
            self.params.value("utterance.fc1.weight"),
            self.params.value("utterance.fc1.bias"),
        )?);
        Ok(gelu(&linear_forward(
            &h1,
            self.params.value("utterance.fc2.weight"),
            self.params.value("utterance.fc2.bias"),
        )?))
    }

    /// Label logits `W^u·h^utt + b^u`.
    pub fn classify_label(&self, utterance: &Tensor) -> Result<Tensor> {
        linear_forward(
            utterance,
            self.params.value("classifier.weight"),
            self.params.value("classifier.bias"),
        )
    }

    /// Accumulates parameter gradients given upstream gradients on the frame
    /// logits and the label logits. With `update_trunk == false` nothing
    /// below the tap is touched.
    pub fn backward(
        &mut self,
        trace: &ForwardTrace,
        d_frame_logits: Option<&Tensor>,
        d_label_logits: Option<&Tensor>,
        update_trunk: bool,
    ) {
        self.backward_impl(trace, d_frame_logits, d_label_logits, update_trunk, false);
    }

    /// Like [`SluModel::backward`] with the trunk included, additionally
    /// returning the gradient with respect to the input frames.
    pub fn backward_to_input(
        &mut self,
        trace: &ForwardTrace,
        d_frame_logits: Option<&Tensor>,
        d_label_logits: Option<&Tensor>,
    ) -> Option<Tensor> {
        self.backward_impl(trace, d_frame_logits, d_label_logits, true, true)
    }

    fn backward_impl(
        &mut self,
        trace: &ForwardTrace,
        d_frame_logits: Option<&Tensor>,
        d_label_logits: Option<&Tensor>,
        update_trunk: bool,
        want_input: bool,
    ) -> Option<Tensor> {
        let mut d_logits = d_frame_logits.cloned();
        let mut d_hidden: Option<Tensor> = None;

        if let Some(d_label) = d_label_logits {
            let d_utt = dense_backward(&mut self.params, "classifier", &trace.utterance, d_label, true)
                .expect("input gradient requested");
            let d_fc2 = gelu_backward(&trace.fc2_pre, &d_utt);
            let d_fc1_out = dense_backward(&mut self.params, "utterance.fc2", &trace.fc1_out, &d_fc2, true)
                .expect("input gradient requested");
            let d_fc1 = gelu_backward(&trace.fc1_pre, &d_fc1_out);
            let d_pooled = dense_backward(&mut self.params, "utterance.fc1", &trace.pooled, &d_fc1, true)
                .expect("input gradient requested");
            let mut d_tap = maxpool_backward(trace.pool_input_frames, &trace.pool_argmax, &d_pooled);
            for (i, cache) in trace.utterance_convs.iter().enumerate().rev() {
                let need_input = i > 0 || update_trunk;
                match conv_layer_backward(
                    &mut self.params,
                    &format!("utterance.conv{i}"),
                    cache,
                    &d_tap,
                    need_input,
                ) {
                    Some(d) => d_tap = d,
                    None => break,
                }
            }
            if update_trunk {
                match self.config.tap {
                    TapMode::Hidden => d_hidden = Some(d_tap),
                    TapMode::Logits => accumulate(&mut d_logits, d_tap),
                    TapMode::Probabilities => {
                        if !self.config.tap_detach {
                            let probs = trace.tap_probs.as_ref().expect("probability tap cached");
                            accumulate(&mut d_logits, softmax_backward(probs, &d_tap));
                        }
                    }
                }
            }
        }

        if !update_trunk {
            return None;
        }
        if let Some(d_logits) = d_logits {
            let d_h = dense_backward(&mut self.params, "frame", &trace.hidden, &d_logits, true)
                .expect("input gradient requested");
            accumulate(&mut d_hidden, d_h);
        }
        let mut d_h = d_hidden?;
        for (i, cache) in trace.encoder.iter().enumerate().rev() {
            let need_input = i > 0 || want_input;
            match conv_layer_backward(&mut self.params, &format!("encoder.conv{i}"), cache, &d_h, need_input) {
                Some(d) => d_h = d,
                None => return None,
            }
        }
        Some(d_h)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        let trace = self.forward(x)?;
        Ok(Prediction {
            label: argmax(trace.label_logits.values()),
            decoded: greedy_decode(&trace.frame_logits),
        })
    }

    /// Greedy transcript only; skips the utterance encoder.
    pub fn decode(&self, x: &Tensor) -> Result<Vec<usize>> {
        let hidden = self.acoustic_encode(x)?;
        Ok(greedy_decode(&self.frame_classify(&hidden)?))
    }

    /// Mean CTC loss over a set of samples (feasible items only).
    pub fn ctc_loss(&self, x: &Tensor, transcript: &[usize]) -> Result<Option<f64>> {
        let hidden = self.acoustic_encode(x)?;
        let logits = self.frame_classify(&hidden)?;
        Ok(ctc_loss_from_logits(&logits, transcript)?.map(|(l, _)| l))
    }
}

fn accumulate(slot: &mut Option<Tensor>, value: Tensor) {
    match slot {
        Some(t) => add_tensor(t, &value),
        None => *slot = Some(value),
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `alpha_ctc · mean CTC + alpha_slu · mean CE` over the batch. When
/// `accumulate_grads` is set, the gradient of that total is added to the
/// model's gradient buffers; `update_trunk == false` restricts it to the head.
pub fn joint_loss(
    model: &mut SluModel,
    batch: &[Sample<'_>],
    weights: LossWeights,
    accumulate_grads: bool,
    update_trunk: bool,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptySequence("empty batch".into()));
    }
    let feasible: Vec<bool> = batch
        .iter()
        .map(|s| min_frames(s.transcript) <= model.config.output_frames(s.frames.rows()))
        .collect();
    let ctc_items = feasible.iter().filter(|&&f| f).count();
    let skipped = batch.len() - ctc_items;
    if ctc_items == 0 && weights.alpha_slu == 0.0 {
        return Err(Error::DegenerateBatch);
    }
    if skipped > 0 {
        log::warn!("{skipped} CTC-infeasible item(s) excluded from the CTC mean");
    }
    let ctc_scale = if ctc_items > 0 { weights.alpha_ctc / ctc_items as f64 } else { 0.0 };
    let slu_scale = weights.alpha_slu / batch.len() as f64;

    let mut ctc_sum = 0.0;
    let mut slu_sum = 0.0;
    for (sample, &is_feasible) in batch.iter().zip(&feasible) {
        let trace = model.forward(sample.frames)?;
        let mut d_frame = None;
        if is_feasible {
            let (loss, grad) = ctc_loss_from_logits(&trace.frame_logits, sample.transcript)?
                .ok_or_else(|| Error::InconsistentState("feasibility precheck disagrees".into()))?;
            ctc_sum += loss;
            if accumulate_grads && ctc_scale != 0.0 {
                d_frame = Some(grad.map(|g| g * ctc_scale));
            }
        }
        let (ce, ce_grad) = cross_entropy(&trace.label_logits, sample.label)?;
        slu_sum += ce;
        let d_label = (accumulate_grads && slu_scale != 0.0).then(|| ce_grad.map(|g| g * slu_scale));
        if d_frame.is_some() || d_label.is_some() {
            model.backward(&trace, d_frame.as_ref(), d_label.as_ref(), update_trunk);
        }
    }

    let ctc = (ctc_items > 0).then(|| ctc_sum / ctc_items as f64);
    let slu = slu_sum / batch.len() as f64;
    let total = weights.alpha_ctc * ctc.unwrap_or(0.0) + weights.alpha_slu * slu;
    Ok(LossBreakdown {
        total,
        ctc,
        slu,
        ctc_items,
        skipped,
    })
}

/// Row-wise log-softmax of the frame logits, the CTC input.
pub fn frame_log_probs(trace: &ForwardTrace) -> Tensor {
    log_softmax(&trace.frame_logits)
}
