//! The neural model family: the convolutional frame encoder, attention
//! pooling, the custom transformer block, and the siNet / miNet / MINet /
//! TransNet assemblies with their published parameter counts asserted at
//! construction.

pub mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::attention::MultiHeadSelfAttention;
use crate::autodiff::layers::{
    AvgPoolTime, BatchNorm, DepthwiseSpatialConv, Dropout, Elu, Flatten, LayerNorm, Linear, Relu,
    SeparableConv, TemporalConv,
};
use crate::autodiff::{dot, Layer, Mode, Parameter, Tensor};
use crate::edf::N_CHANNELS;
use crate::preprocess::{Frame, FRAME_LEN};

/// Frame-encoder hyperparameters. The defaults produce a 288-value encoding
/// and exactly 1,408 trainable parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub temporal_filters: usize,
    pub temporal_kernel: usize,
    pub depth_multiplier: usize,
    pub pointwise_filters: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub separable_kernel: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            temporal_filters: 8,
            temporal_kernel: 64,
            depth_multiplier: 2,
            pointwise_filters: 16,
            pool1: 8,
            pool2: 4,
            separable_kernel: 16,
            dropout: 0.25,
        }
    }
}

impl EncoderConfig {
    pub fn encoding_dim(&self) -> usize {
        self.pointwise_filters * (FRAME_LEN / self.pool1 / self.pool2)
    }
}

/// Model dimension of the default encoder output.
pub const ENCODING_DIM: usize = 288;

/// Published parameter counts.
pub const PARAMS_ENCODER: usize = 1_408;
pub const PARAMS_CLASSIFIER: usize = 289;
pub const PARAMS_SINET: usize = 1_697;
pub const PARAMS_ATTENTION: usize = 166_176;
pub const PARAMS_MINET_ATTN: usize = 167_873;
pub const PARAMS_TRANSFORMER_BLOCK: usize = 1_516_640;
pub const PARAMS_TRANSNET: usize = 4_717_793;

/// EEGNet-style frame encoder: temporal conv, batch norm, depthwise spatial
/// conv, batch norm + ELU + pool, separable conv, batch norm + ELU + pool,
/// flatten. Input [b, 1, 19, 600], output [b, 288].
pub struct EegNetEncoder {
    pub config: EncoderConfig,
    conv_temporal: TemporalConv,
    bn1: BatchNorm,
    conv_spatial: DepthwiseSpatialConv,
    bn2: BatchNorm,
    elu1: Elu,
    pool1: AvgPoolTime,
    drop1: Dropout,
    separable: SeparableConv,
    bn3: BatchNorm,
    elu2: Elu,
    pool2: AvgPoolTime,
    drop2: Dropout,
    flatten: Flatten,
}

impl EegNetEncoder {
    pub fn new(config: EncoderConfig, rng: &mut ChaCha8Rng) -> EegNetEncoder {
        let f1 = config.temporal_filters;
        let d = config.depth_multiplier;
        let f2 = config.pointwise_filters;
        let drop_rng1 = ChaCha8Rng::seed_from_u64(rng.gen());
        let drop_rng2 = ChaCha8Rng::seed_from_u64(rng.gen());
        let enc = EegNetEncoder {
            conv_temporal: TemporalConv::new(f1, config.temporal_kernel, rng),
            bn1: BatchNorm::new(f1),
            conv_spatial: DepthwiseSpatialConv::new(f1, d, N_CHANNELS, rng),
            bn2: BatchNorm::new(f1 * d),
            elu1: Elu::new(),
            pool1: AvgPoolTime::new(config.pool1),
            drop1: Dropout::new(config.dropout, drop_rng1),
            separable: SeparableConv::new(f1 * d, f2, config.separable_kernel, rng),
            bn3: BatchNorm::new(f2),
            elu2: Elu::new(),
            pool2: AvgPoolTime::new(config.pool2),
            drop2: Dropout::new(config.dropout, drop_rng2),
            flatten: Flatten::new(),
            config,
        };
        enc
    }

    pub fn parameter_count(&mut self) -> usize {
        self.parameters_mut().iter().map(|p| p.n_values()).sum()
    }

    /// Batch-norm running statistics, needed alongside the weights to
    /// reproduce an eval-mode forward exactly.
    pub fn bn_state(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![
            (self.bn1.running_mean.clone(), self.bn1.running_var.clone()),
            (self.bn2.running_mean.clone(), self.bn2.running_var.clone()),
            (self.bn3.running_mean.clone(), self.bn3.running_var.clone()),
        ]
    }

    pub fn set_bn_state(&mut self, state: &[(Vec<f64>, Vec<f64>)]) {
        assert_eq!(state.len(), 3);
        self.bn1.running_mean = state[0].0.clone();
        self.bn1.running_var = state[0].1.clone();
        self.bn2.running_mean = state[1].0.clone();
        self.bn2.running_var = state[1].1.clone();
        self.bn3.running_mean = state[2].0.clone();
        self.bn3.running_var = state[2].1.clone();
    }

    /// Dropout generator state; paired with [`Self::bn_state`] this lets a
    /// chunked forward be replayed exactly for a recompute-style backward.
    pub fn rng_state(&self) -> (ChaCha8Rng, ChaCha8Rng) {
        (self.drop1.rng_clone(), self.drop2.rng_clone())
    }

    pub fn set_rng_state(&mut self, state: &(ChaCha8Rng, ChaCha8Rng)) {
        self.drop1.set_rng(state.0.clone());
        self.drop2.set_rng(state.1.clone());
    }
}

impl Layer for EegNetEncoder {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let x = self.conv_temporal.forward(input, mode);
        let x = self.bn1.forward(&x, mode);
        let x = self.conv_spatial.forward(&x, mode);
        let x = self.bn2.forward(&x, mode);
        let x = self.elu1.forward(&x, mode);
        let x = self.pool1.forward(&x, mode);
        let x = self.drop1.forward(&x, mode);
        let x = self.separable.forward(&x, mode);
        let x = self.bn3.forward(&x, mode);
        let x = self.elu2.forward(&x, mode);
        let x = self.pool2.forward(&x, mode);
        let x = self.drop2.forward(&x, mode);
        self.flatten.forward(&x, mode)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let g = self.flatten.backward(grad_out);
        let g = self.drop2.backward(&g);
        let g = self.pool2.backward(&g);
        let g = self.elu2.backward(&g);
        let g = self.bn3.backward(&g);
        let g = self.separable.backward(&g);
        let g = self.drop1.backward(&g);
        let g = self.pool1.backward(&g);
        let g = self.elu1.backward(&g);
        let g = self.bn2.backward(&g);
        let g = self.conv_spatial.backward(&g);
        let g = self.bn1.backward(&g);
        self.conv_temporal.backward(&g)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.conv_temporal.parameters_mut();
        p.extend(self.bn1.parameters_mut());
        p.extend(self.conv_spatial.parameters_mut());
        p.extend(self.bn2.parameters_mut());
        p.extend(self.separable.parameters_mut());
        p.extend(self.bn3.parameters_mut());
        p
    }
}

/// Non-gated attention pooling with transformer-style key/value projections
/// (no bias) and a learned query: keys = tanh(K h_i), weights =
/// softmax(q . keys), pooled = sum_i w_i (V h_i). 166,176 parameters at
/// model dimension 288.
pub struct AttentionPool {
    pub key_proj: Parameter,
    pub value_proj: Parameter,
    pub query: Parameter,
    dim: usize,
    ctx: Option<PoolCtx>,
    pub last_weights: Vec<f64>,
}

struct PoolCtx {
    input: Tensor,
    keys: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
    n: usize,
}

impl AttentionPool {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> AttentionPool {
        AttentionPool {
            key_proj: Parameter::glorot("attention_pool.key", &[dim, dim], dim, dim, rng),
            value_proj: Parameter::glorot("attention_pool.value", &[dim, dim], dim, dim, rng),
            query: Parameter::glorot("attention_pool.query", &[dim], dim, 1, rng),
            dim,
            ctx: None,
            last_weights: Vec::new(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.key_proj.n_values() + self.value_proj.n_values() + self.query.n_values()
    }
}

impl Layer for AttentionPool {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let n = input.shape[0];
        let d = self.dim;
        assert_eq!(input.shape, vec![n, d]);

        let mut keys = vec![0.0; n * d];
        crate::autodiff::matmul_nt_acc(&input.data, &self.key_proj.value.data, n, d, d, &mut keys);
        for v in &mut keys {
            *v = v.tanh();
        }
        let mut values = vec![0.0; n * d];
        crate::autodiff::matmul_nt_acc(
            &input.data,
            &self.value_proj.value.data,
            n,
            d,
            d,
            &mut values,
        );
        let mut scores: Vec<f64> = (0..n)
            .map(|i| dot(&keys[i * d..(i + 1) * d], &self.query.value.data))
            .collect();
        crate::autodiff::layers::softmax_rows(&mut scores, 1, n);
        let weights = scores;

        let mut pooled = Tensor::zeros(&[1, d]);
        for i in 0..n {
            crate::autodiff::axpy(weights[i], &values[i * d..(i + 1) * d], &mut pooled.data);
        }
        self.last_weights = weights.clone();
        self.ctx = Some(PoolCtx {
            input: input.clone(),
            keys,
            values,
            weights,
            n,
        });
        pooled
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let ctx = self.ctx.take().expect("forward before backward");
        let (n, d) = (ctx.n, self.dim);
        let g = &grad_out.data;
        assert_eq!(g.len(), d);

        // pooled = sum_i w_i v_i
        let mut dvalues = vec![0.0; n * d];
        let mut dweights = vec![0.0; n];
        for i in 0..n {
            crate::autodiff::axpy(ctx.weights[i], g, &mut dvalues[i * d..(i + 1) * d]);
            dweights[i] = dot(&ctx.values[i * d..(i + 1) * d], g);
        }
        // softmax backward
        let inner = dot(&ctx.weights, &dweights);
        let dscores: Vec<f64> = (0..n)
            .map(|i| ctx.weights[i] * (dweights[i] - inner))
            .collect();
        // scores_i = q . keys_i
        let mut dkeys = vec![0.0; n * d];
        for i in 0..n {
            crate::autodiff::axpy(dscores[i], &self.query.value.data, &mut dkeys[i * d..(i + 1) * d]);
            crate::autodiff::axpy(dscores[i], &ctx.keys[i * d..(i + 1) * d], &mut self.query.grad.data);
        }
        // tanh backward
        for (dk, k) in dkeys.iter_mut().zip(&ctx.keys) {
            *dk *= 1.0 - k * k;
        }
        // keys_pre = x K^T, values = x V^T
        crate::autodiff::matmul_tn_acc(&dkeys, &ctx.input.data, d, n, d, &mut self.key_proj.grad.data);
        crate::autodiff::matmul_tn_acc(
            &dvalues,
            &ctx.input.data,
            d,
            n,
            d,
            &mut self.value_proj.grad.data,
        );
        let mut dx = Tensor::zeros(&[n, d]);
        let k_part = crate::autodiff::matmul(&dkeys, &self.key_proj.value.data, n, d, d);
        let v_part = crate::autodiff::matmul(&dvalues, &self.value_proj.value.data, n, d, d);
        for i in 0..n * d {
            dx.data[i] = k_part[i] + v_part[i];
        }
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.key_proj, &mut self.value_proj, &mut self.query]
    }
}

/// The custom transformer block: a standard post-norm encoder layer
/// (8-head self-attention, 2048-wide feed-forward with ReLU) wrapped with an
/// extra layer normalization and an outer skip connection.
pub struct TransformerBlock {
    mhsa: MultiHeadSelfAttention,
    drop_attn: Dropout,
    norm1: LayerNorm,
    ff1: Linear,
    relu: Relu,
    drop_ff: Dropout,
    ff2: Linear,
    drop_out: Dropout,
    norm2: LayerNorm,
    extra_norm: LayerNorm,
}

pub const TRANSFORMER_HEADS: usize = 8;
pub const TRANSFORMER_FF_DIM: usize = 2_048;
const TRANSFORMER_DROPOUT: f64 = 0.1;

impl TransformerBlock {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> TransformerBlock {
        let mk = |rng: &mut ChaCha8Rng| ChaCha8Rng::seed_from_u64(rng.gen());
        TransformerBlock {
            mhsa: MultiHeadSelfAttention::new(dim, TRANSFORMER_HEADS, TRANSFORMER_DROPOUT, rng),
            drop_attn: Dropout::new(TRANSFORMER_DROPOUT, mk(rng)),
            norm1: LayerNorm::new(dim),
            ff1: Linear::new("transformer.ff1", dim, TRANSFORMER_FF_DIM, rng),
            relu: Relu::new(),
            drop_ff: Dropout::new(TRANSFORMER_DROPOUT, mk(rng)),
            ff2: Linear::new("transformer.ff2", TRANSFORMER_FF_DIM, dim, rng),
            drop_out: Dropout::new(TRANSFORMER_DROPOUT, mk(rng)),
            norm2: LayerNorm::new(dim),
            extra_norm: LayerNorm::new(dim),
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        self.parameters_mut().iter().map(|p| p.n_values()).sum()
    }
}

impl Layer for TransformerBlock {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        // Standard encoder layer, post-norm.
        let attn = self.mhsa.forward(input, mode);
        let attn = self.drop_attn.forward(&attn, mode);
        let mut x1 = input.clone();
        for (a, b) in x1.data.iter_mut().zip(&attn.data) {
            *a += b;
        }
        let x1 = self.norm1.forward(&x1, mode);

        let ff = self.ff1.forward(&x1, mode);
        let ff = self.relu.forward(&ff, mode);
        let ff = self.drop_ff.forward(&ff, mode);
        let ff = self.ff2.forward(&ff, mode);
        let ff = self.drop_out.forward(&ff, mode);
        let mut x2 = x1.clone();
        for (a, b) in x2.data.iter_mut().zip(&ff.data) {
            *a += b;
        }
        let x2 = self.norm2.forward(&x2, mode);

        // Wrapper: outer skip around the extra normalization.
        let wrapped = self.extra_norm.forward(&x2, mode);
        let mut out = input.clone();
        for (a, b) in out.data.iter_mut().zip(&wrapped.data) {
            *a += b;
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        // out = input + extra_norm(x2)
        let g_wrapped = self.extra_norm.backward(grad_out);
        let g_x2 = self.norm2.backward(&g_wrapped);
        // x2 = x1 + ff(x1)
        let g_ff = self.drop_out.backward(&g_x2);
        let g_ff = self.ff2.backward(&g_ff);
        let g_ff = self.drop_ff.backward(&g_ff);
        let g_ff = self.relu.backward(&g_ff);
        let g_ff_x1 = self.ff1.backward(&g_ff);
        let mut g_x1 = g_x2.clone();
        for (a, b) in g_x1.data.iter_mut().zip(&g_ff_x1.data) {
            *a += b;
        }
        let g_x1 = self.norm1.backward(&g_x1);
        // x1 = input + attn(input)
        let g_attn = self.drop_attn.backward(&g_x1);
        let g_attn_in = self.mhsa.backward(&g_attn);
        let mut dx = grad_out.clone();
        for ((d, a), b) in dx.data.iter_mut().zip(&g_x1.data).zip(&g_attn_in.data) {
            *d += a + b;
        }
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.mhsa.parameters_mut();
        p.extend(self.norm1.parameters_mut());
        p.extend(self.ff1.parameters_mut());
        p.extend(self.ff2.parameters_mut());
        p.extend(self.norm2.parameters_mut());
        p.extend(self.extra_norm.parameters_mut());
        p
    }
}

/// Builds the [n, 1, 19, 600] input tensor for a list of frames.
pub fn frames_to_tensor(frames: &[&Frame]) -> Tensor {
    let n = frames.len();
    let mut data = Vec::with_capacity(n * N_CHANNELS * FRAME_LEN);
    for f in frames {
        data.extend(f.data.iter().map(|&v| v as f64));
    }
    Tensor::from_vec(&[n, 1, N_CHANNELS, FRAME_LEN], data)
}

/// Model kinds and encoder-initialization variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilKind {
    MiNet,
    MiNetAttention,
    TransNet,
}

/// How a recording-level network produces its output.
pub enum RecordingOutput {
    /// ln of the geometric-mean probability (miNet, siNet prediction path).
    LogProb(f64),
    /// A single recording logit (MINet, TransNet).
    Logit(f64),
}

impl RecordingOutput {
    pub fn probability(&self) -> f64 {
        match *self {
            RecordingOutput::LogProb(lp) => lp.exp(),
            RecordingOutput::Logit(z) => crate::autodiff::loss::sigmoid(z),
        }
    }
}

/// A network that maps a whole recording (a set of frames) to a normality
/// probability and can backpropagate a scalar loss gradient.
pub trait RecordingModel {
    fn forward_recording(&mut self, frames: &Tensor, mode: Mode) -> RecordingOutput;
    /// dloss is d(loss)/d(log_prob) or d(loss)/d(logit) matching the output.
    fn backward_recording(&mut self, dloss: f64);
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;
    fn parameter_count(&mut self) -> usize {
        self.parameters_mut().iter().map(|p| p.n_values()).sum()
    }
    /// Eval-mode probability on all frames of a recording.
    fn predict(&mut self, frames: &Tensor) -> f64 {
        let out = self.forward_recording(frames, Mode::Eval);
        out.probability()
    }
}

/// siNet / miNet: encoder + frame classifier with geometric-mean aggregation.
/// The same graph serves single-frame training (siNet) and recording-level
/// training (miNet).
pub struct GeomMeanNet {
    pub encoder: EegNetEncoder,
    pub classifier: Linear,
    ctx: Option<GeomCtx>,
}

struct GeomCtx {
    n: usize,
    frame_probs: Vec<f64>,
}

impl GeomMeanNet {
    pub fn new(seed: u64) -> GeomMeanNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EegNetEncoder::new(EncoderConfig::default(), &mut rng);
        let classifier = Linear::new("classifier", ENCODING_DIM, 1, &mut rng);
        let mut net = GeomMeanNet {
            encoder,
            classifier,
            ctx: None,
        };
        assert_eq!(net.encoder.parameter_count(), PARAMS_ENCODER);
        assert_eq!(net.parameter_count(), PARAMS_SINET);
        net
    }

    /// Per-frame logits for single-frame (siNet) training.
    pub fn forward_frames(&mut self, frames: &Tensor, mode: Mode) -> Tensor {
        let enc = self.encoder.forward(frames, mode);
        self.classifier.forward(&enc, mode)
    }

    pub fn backward_frames(&mut self, grad_logits: &Tensor) {
        let g = self.classifier.backward(grad_logits);
        self.encoder.backward(&g);
    }

}

/// ln of the geometric mean of per-frame probabilities, from frame logits:
/// mean of ln sigmoid(z_i). A single fully pathological frame (z -> -inf)
/// drives the aggregate to zero probability.
pub fn geometric_mean_log_prob(logits: &[f64]) -> f64 {
    assert!(!logits.is_empty(), "empty recording");
    logits
        .iter()
        .map(|&z| crate::autodiff::loss::log_sigmoid(z))
        .sum::<f64>()
        / logits.len() as f64
}

impl GeomMeanNet {
    /// Head forward on precomputed encodings [n, 288].
    pub fn head_forward(&mut self, encodings: &Tensor, mode: Mode) -> RecordingOutput {
        let n = encodings.shape[0];
        let logits = self.classifier.forward(encodings, mode);
        let ln_p = geometric_mean_log_prob(&logits.data);
        let frame_probs = logits
            .data
            .iter()
            .map(|&z| crate::autodiff::loss::sigmoid(z))
            .collect();
        self.ctx = Some(GeomCtx { n, frame_probs });
        RecordingOutput::LogProb(ln_p)
    }

    /// Head backward; returns the gradient with respect to the encodings.
    pub fn head_backward(&mut self, dloss: f64) -> Tensor {
        let ctx = self.ctx.take().expect("forward before backward");
        // d ln_p / d z_i = (1 - sigmoid(z_i)) / n
        let grads: Vec<f64> = ctx
            .frame_probs
            .iter()
            .map(|&p| dloss * (1.0 - p) / ctx.n as f64)
            .collect();
        let g = Tensor::from_vec(&[ctx.n, 1], grads);
        self.classifier.backward(&g)
    }
}

impl RecordingModel for GeomMeanNet {
    fn forward_recording(&mut self, frames: &Tensor, mode: Mode) -> RecordingOutput {
        let enc = self.encoder.forward(frames, mode);
        self.head_forward(&enc, mode)
    }

    fn backward_recording(&mut self, dloss: f64) {
        let denc = self.head_backward(dloss);
        self.encoder.backward(&denc);
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.classifier.parameters_mut());
        p
    }
}

/// MINet: encoder + attention pooling + classifier.
pub struct AttentionMilNet {
    pub encoder: EegNetEncoder,
    pub attention: AttentionPool,
    pub classifier: Linear,
}

impl AttentionMilNet {
    pub fn new(seed: u64) -> AttentionMilNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EegNetEncoder::new(EncoderConfig::default(), &mut rng);
        let attention = AttentionPool::new(ENCODING_DIM, &mut rng);
        let classifier = Linear::new("classifier", ENCODING_DIM, 1, &mut rng);
        let mut net = AttentionMilNet {
            encoder,
            attention,
            classifier,
        };
        assert_eq!(net.encoder.parameter_count(), PARAMS_ENCODER);
        assert_eq!(net.attention.parameter_count(), PARAMS_ATTENTION);
        assert_eq!(net.parameter_count(), PARAMS_MINET_ATTN);
        net
    }
}

impl AttentionMilNet {
    pub fn head_forward(&mut self, encodings: &Tensor, mode: Mode) -> RecordingOutput {
        let pooled = self.attention.forward(encodings, mode);
        let logit = self.classifier.forward(&pooled, mode);
        RecordingOutput::Logit(logit.data[0])
    }

    pub fn head_backward(&mut self, dloss: f64) -> Tensor {
        let g = Tensor::from_vec(&[1, 1], vec![dloss]);
        let g = self.classifier.backward(&g);
        self.attention.backward(&g)
    }
}

impl RecordingModel for AttentionMilNet {
    fn forward_recording(&mut self, frames: &Tensor, mode: Mode) -> RecordingOutput {
        let enc = self.encoder.forward(frames, mode);
        self.head_forward(&enc, mode)
    }

    fn backward_recording(&mut self, dloss: f64) {
        let denc = self.head_backward(dloss);
        self.encoder.backward(&denc);
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.attention.parameters_mut());
        p.extend(self.classifier.parameters_mut());
        p
    }
}

/// TransNet: encoder + three stacked transformer blocks + attention pooling
/// + classifier.
pub struct TransNet {
    pub encoder: EegNetEncoder,
    pub blocks: Vec<TransformerBlock>,
    pub attention: AttentionPool,
    pub classifier: Linear,
}

pub const TRANSNET_BLOCKS: usize = 3;

impl TransNet {
    pub fn new(seed: u64) -> TransNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EegNetEncoder::new(EncoderConfig::default(), &mut rng);
        let blocks: Vec<TransformerBlock> = (0..TRANSNET_BLOCKS)
            .map(|_| TransformerBlock::new(ENCODING_DIM, &mut rng))
            .collect();
        let attention = AttentionPool::new(ENCODING_DIM, &mut rng);
        let classifier = Linear::new("classifier", ENCODING_DIM, 1, &mut rng);
        let mut net = TransNet {
            encoder,
            blocks,
            attention,
            classifier,
        };
        assert_eq!(net.encoder.parameter_count(), PARAMS_ENCODER);
        for b in &mut net.blocks {
            assert_eq!(b.parameter_count(), PARAMS_TRANSFORMER_BLOCK);
        }
        assert_eq!(net.attention.parameter_count(), PARAMS_ATTENTION);
        assert_eq!(net.parameter_count(), PARAMS_TRANSNET);
        net
    }
}

impl TransNet {
    pub fn head_forward(&mut self, encodings: &Tensor, mode: Mode) -> RecordingOutput {
        let mut x = encodings.clone();
        for b in &mut self.blocks {
            x = b.forward(&x, mode);
        }
        let pooled = self.attention.forward(&x, mode);
        let logit = self.classifier.forward(&pooled, mode);
        RecordingOutput::Logit(logit.data[0])
    }

    pub fn head_backward(&mut self, dloss: f64) -> Tensor {
        let g = Tensor::from_vec(&[1, 1], vec![dloss]);
        let g = self.classifier.backward(&g);
        let mut g = self.attention.backward(&g);
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        g
    }
}

impl RecordingModel for TransNet {
    fn forward_recording(&mut self, frames: &Tensor, mode: Mode) -> RecordingOutput {
        let enc = self.encoder.forward(frames, mode);
        self.head_forward(&enc, mode)
    }

    fn backward_recording(&mut self, dloss: f64) {
        let denc = self.head_backward(dloss);
        self.encoder.backward(&denc);
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.encoder.parameters_mut();
        for b in &mut self.blocks {
            p.extend(b.parameters_mut());
        }
        p.extend(self.attention.parameters_mut());
        p.extend(self.classifier.parameters_mut());
        p
    }
}

/// A MIL model of any kind behind one object.
pub enum MilModel {
    Geom(GeomMeanNet),
    Attention(AttentionMilNet),
    Trans(TransNet),
}

impl MilModel {
    pub fn build(kind: MilKind, seed: u64, pretrained: Option<&mut GeomMeanNet>) -> MilModel {
        let mut model = match kind {
            MilKind::MiNet => {
                let mut net = GeomMeanNet::new(seed);
                // Recording-level training through the geometric mean has
                // vanishing gradients once every frame logit sits high; a
                // zero classifier start keeps the early trajectory
                // one-sided instead of orbiting that plateau.
                net.classifier.weight.value.fill(0.0);
                net.classifier.bias.value.fill(0.0);
                MilModel::Geom(net)
            }
            MilKind::MiNetAttention => MilModel::Attention(AttentionMilNet::new(seed)),
            MilKind::TransNet => MilModel::Trans(TransNet::new(seed)),
        };
        if let Some(pre) = pretrained {
            let src: Vec<Tensor> = pre
                .encoder
                .parameters_mut()
                .iter()
                .map(|p| p.value.clone())
                .collect();
            let enc = match &mut model {
                MilModel::Geom(m) => &mut m.encoder,
                MilModel::Attention(m) => &mut m.encoder,
                MilModel::Trans(m) => &mut m.encoder,
            };
            // Running statistics travel with the pretrained encoder too.
            enc.bn1.running_mean = pre.encoder.bn1.running_mean.clone();
            enc.bn1.running_var = pre.encoder.bn1.running_var.clone();
            enc.bn2.running_mean = pre.encoder.bn2.running_mean.clone();
            enc.bn2.running_var = pre.encoder.bn2.running_var.clone();
            enc.bn3.running_mean = pre.encoder.bn3.running_mean.clone();
            enc.bn3.running_var = pre.encoder.bn3.running_var.clone();
            for (dst, s) in enc.parameters_mut().iter_mut().zip(src) {
                assert_eq!(dst.value.shape, s.shape, "incompatible encoder");
                dst.value = s;
            }
        }
        model
    }

    pub fn as_recording_model(&mut self) -> &mut dyn RecordingModel {
        match self {
            MilModel::Geom(m) => m,
            MilModel::Attention(m) => m,
            MilModel::Trans(m) => m,
        }
    }

    pub fn encoder_mut(&mut self) -> &mut EegNetEncoder {
        match self {
            MilModel::Geom(m) => &mut m.encoder,
            MilModel::Attention(m) => &mut m.encoder,
            MilModel::Trans(m) => &mut m.encoder,
        }
    }

    pub fn head_forward(&mut self, encodings: &Tensor, mode: Mode) -> RecordingOutput {
        match self {
            MilModel::Geom(m) => m.head_forward(encodings, mode),
            MilModel::Attention(m) => m.head_forward(encodings, mode),
            MilModel::Trans(m) => m.head_forward(encodings, mode),
        }
    }

    pub fn head_backward(&mut self, dloss: f64) -> Tensor {
        match self {
            MilModel::Geom(m) => m.head_backward(dloss),
            MilModel::Attention(m) => m.head_backward(dloss),
            MilModel::Trans(m) => m.head_backward(dloss),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn random_frames(n: usize, seed: u64) -> Vec<Frame> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|i| Frame {
                data: (0..N_CHANNELS * FRAME_LEN)
                    .map(|_| rng.gen_range(-30.0f64..30.0) as f32)
                    .collect(),
                index: i,
            })
            .collect()
    }

    #[test]
    fn parameter_counts_match_published_table() {
        let mut sinet = GeomMeanNet::new(0);
        assert_eq!(sinet.encoder.parameter_count(), 1_408);
        assert_eq!(
            sinet.classifier.weight.n_values() + sinet.classifier.bias.n_values(),
            289
        );
        assert_eq!(sinet.parameter_count(), 1_697);

        let mut minet = AttentionMilNet::new(0);
        assert_eq!(minet.attention.parameter_count(), 166_176);
        assert_eq!(minet.parameter_count(), 167_873);

        let mut transnet = TransNet::new(0);
        assert_eq!(transnet.blocks[0].parameter_count(), 1_516_640);
        assert_eq!(transnet.parameter_count(), 4_717_793);
        assert_eq!(
            1_408 + 3 * 1_516_640 + 166_176 + 289,
            4_717_793usize
        );
    }

    #[test]
    fn encoder_outputs_288_features_per_frame() {
        let frames = random_frames(3, 1);
        let refs: Vec<&Frame> = frames.iter().collect();
        let x = frames_to_tensor(&refs);
        let mut enc = EegNetEncoder::new(
            EncoderConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        let y = enc.forward(&x, Mode::Eval);
        assert_eq!(y.shape, vec![3, 288]);
        assert_eq!(EncoderConfig::default().encoding_dim(), 288);
    }

    #[test]
    fn eval_encoding_ignores_dropout_seed() {
        let frames = random_frames(2, 3);
        let refs: Vec<&Frame> = frames.iter().collect();
        let x = frames_to_tensor(&refs);
        // Same weight init (same seed) but different dropout draws: pull some
        // training randomness on one of them first, then align the batch-norm
        // running statistics the training pass moved.
        let mut a = GeomMeanNet::new(9);
        let mut b = GeomMeanNet::new(9);
        let _ = b.forward_frames(&x, Mode::Train);
        a.encoder.set_bn_state(&b.encoder.bn_state());
        let ya = a.forward_frames(&x, Mode::Eval);
        let yb = b.forward_frames(&x, Mode::Eval);
        for (p, q) in ya.data.iter().zip(&yb.data) {
            assert_eq!(p, q, "eval mode must not depend on dropout state");
        }
    }

    #[test]
    fn geometric_mean_aggregation_matches_hand_values() {
        let mut net = GeomMeanNet::new(4);
        let frames = random_frames(2, 5);
        let refs: Vec<&Frame> = frames.iter().collect();
        let x = frames_to_tensor(&refs);
        let logits = net.forward_frames(&x, Mode::Eval);
        let p0 = crate::autodiff::loss::sigmoid(logits.data[0]);
        let p1 = crate::autodiff::loss::sigmoid(logits.data[1]);
        let out = net.forward_recording(&x, Mode::Eval);
        let want = (p0 * p1).sqrt();
        assert!((out.probability() - want).abs() < 1e-12);
    }

    #[test]
    fn geometric_mean_of_quarter_and_one_is_half() {
        // Frame probabilities {0.25, 1.0} -> 0.5: logits ln(1/3) and +inf
        // approximated by a huge logit.
        let z_quarter = (0.25f64 / 0.75).ln();
        let lp = geometric_mean_log_prob(&[z_quarter, 1e9]);
        assert!((lp.exp() - 0.5).abs() < 1e-12);
        // A single frame at one keeps the single-frame probability.
        let lp = geometric_mean_log_prob(&[z_quarter]);
        assert!((lp.exp() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn one_zero_probability_frame_zeroes_the_recording() {
        // One frame with probability zero (logit -> -inf) forces the
        // aggregated probability to exactly zero no matter the others.
        let lp = geometric_mean_log_prob(&[5.0, 8.0, -1e12, 3.0]);
        assert_eq!(lp.exp(), 0.0);
    }

    #[test]
    fn attention_weights_are_uniform_for_identical_encodings() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pool = AttentionPool::new(16, &mut rng);
        let row: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&row);
        }
        let x = Tensor::from_vec(&[5, 16], data);
        let pooled = pool.forward(&x, Mode::Eval);
        for &w in &pool.last_weights {
            assert!((w - 0.2).abs() < 1e-12);
        }
        assert_eq!(pooled.shape, vec![1, 16]);
        let sum: f64 = pool.last_weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_pool_single_input_gets_unit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pool = AttentionPool::new(8, &mut rng);
        let x = Tensor::from_vec(&[1, 8], (0..8).map(|i| i as f64 * 0.2 - 1.0).collect());
        let pooled = pool.forward(&x, Mode::Eval);
        assert_eq!(pool.last_weights, vec![1.0]);
        // pooled = V h
        let mut want = vec![0.0; 8];
        crate::autodiff::matmul_nt_acc(&x.data, &pool.value_proj.value.data, 1, 8, 8, &mut want);
        for (a, b) in pooled.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mil_models_are_permutation_invariant_at_eval() {
        let frames = random_frames(6, 8);
        let refs: Vec<&Frame> = frames.iter().collect();
        let x = frames_to_tensor(&refs);
        let mut permuted_refs: Vec<&Frame> = frames.iter().collect();
        permuted_refs.swap(0, 4);
        permuted_refs.swap(2, 5);
        let xp = frames_to_tensor(&permuted_refs);

        let mut minet = AttentionMilNet::new(10);
        let a = minet.predict(&x);
        let b = minet.predict(&xp);
        assert!((a - b).abs() < 1e-12, "MINet: {a} vs {b}");

        let mut transnet = TransNet::new(11);
        let a = transnet.predict(&x);
        let b = transnet.predict(&xp);
        assert!((a - b).abs() < 1e-10, "TransNet: {a} vs {b}");

        let mut geom = GeomMeanNet::new(12);
        let a = geom.predict(&x);
        let b = geom.predict(&xp);
        assert!((a - b).abs() < 1e-12, "miNet: {a} vs {b}");
    }

    #[test]
    fn pretrained_variant_starts_from_the_donor_encoder() {
        let mut donor = GeomMeanNet::new(13);
        // Perturb the donor away from any fresh init.
        for p in donor.encoder.parameters_mut() {
            for v in &mut p.value.data {
                *v += 0.25;
            }
        }
        let mut model = MilModel::build(MilKind::TransNet, 99, Some(&mut donor));
        let dst: Vec<Tensor> = match &mut model {
            MilModel::Trans(m) => m.encoder.parameters_mut().iter().map(|p| p.value.clone()).collect(),
            _ => unreachable!(),
        };
        let src: Vec<Tensor> = donor
            .encoder
            .parameters_mut()
            .iter()
            .map(|p| p.value.clone())
            .collect();
        for (a, b) in dst.iter().zip(&src) {
            assert_eq!(a.data, b.data, "P-variant must copy encoder weights exactly");
        }
    }

    #[test]
    fn n_and_p_variants_share_architecture_and_counts() {
        let mut donor = GeomMeanNet::new(14);
        let mut naive = MilModel::build(MilKind::MiNetAttention, 15, None);
        let mut pre = MilModel::build(MilKind::MiNetAttention, 15, Some(&mut donor));
        assert_eq!(
            naive.as_recording_model().parameter_count(),
            pre.as_recording_model().parameter_count()
        );
    }
}
