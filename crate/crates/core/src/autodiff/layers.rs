//! The layer set used by the frame encoder and the downstream networks.
//!
//! Convolutional layers operate on [batch, channels, space, time] tensors;
//! dense layers on [rows, features]. Temporal convolutions use same-length
//! zero padding with the kernel anchored at (k-1)/2.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{axpy, dot, matmul, matmul_nt_acc, matmul_tn_acc, Layer, Mode, Parameter, Tensor};

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    assert_eq!(t.shape.len(), 4, "expected a 4-d tensor, got {:?}", t.shape);
    (t.shape[0], t.shape[1], t.shape[2], t.shape[3])
}

fn dims2(t: &Tensor) -> (usize, usize) {
    assert_eq!(t.shape.len(), 2, "expected a 2-d tensor, got {:?}", t.shape);
    (t.shape[0], t.shape[1])
}

/// Zero-pads rows of length `t` to `t + k - 1` with `(k-1)/2` on the left.
fn pad_rows(input: &[f64], rows: usize, t: usize, k: usize) -> Vec<f64> {
    let padded_t = t + k - 1;
    let left = (k - 1) / 2;
    let mut out = vec![0.0; rows * padded_t];
    for r in 0..rows {
        out[r * padded_t + left..r * padded_t + left + t]
            .copy_from_slice(&input[r * t..(r + 1) * t]);
    }
    out
}

/// Vector width of the register-blocked convolution kernels.
const BLOCK: usize = 8;

/// out[t] = sum_k w[k] * x[t + k] for t in 0..len, where x has len + k - 1
/// samples. Register-blocked so the inner loop runs on whole vectors.
#[inline]
fn correlate_into(out: &mut [f64], x: &[f64], w: &[f64]) {
    let len = out.len();
    let k_len = w.len();
    debug_assert_eq!(x.len(), len + k_len - 1);
    let mut t = 0;
    while t + BLOCK <= len {
        let mut acc = [0.0f64; BLOCK];
        for (k, &wk) in w.iter().enumerate() {
            let xs = &x[t + k..t + k + BLOCK];
            for l in 0..BLOCK {
                acc[l] += wk * xs[l];
            }
        }
        out[t..t + BLOCK].copy_from_slice(&acc);
        t += BLOCK;
    }
    for ti in t..len {
        let mut s = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            s += wk * x[ti + k];
        }
        out[ti] = s;
    }
}

/// Same as [`correlate_into`] but accumulating into `out`.
#[inline]
fn correlate_acc(out: &mut [f64], x: &[f64], w: &[f64]) {
    let len = out.len();
    let k_len = w.len();
    debug_assert_eq!(x.len(), len + k_len - 1);
    let mut t = 0;
    while t + BLOCK <= len {
        let mut acc = [0.0f64; BLOCK];
        for (k, &wk) in w.iter().enumerate() {
            let xs = &x[t + k..t + k + BLOCK];
            for l in 0..BLOCK {
                acc[l] += wk * xs[l];
            }
        }
        let dst = &mut out[t..t + BLOCK];
        for l in 0..BLOCK {
            dst[l] += acc[l];
        }
        t += BLOCK;
    }
    for ti in t..len {
        let mut s = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            s += wk * x[ti + k];
        }
        out[ti] += s;
    }
}

/// Temporal convolution: [b, 1, s, t] -> [b, f, s, t], kernel (1, k), no bias.
pub struct TemporalConv {
    pub weight: Parameter,
    filters: usize,
    kernel: usize,
    ctx: Option<(Vec<f64>, usize, usize, usize)>,
}

impl TemporalConv {
    pub fn new(filters: usize, kernel: usize, rng: &mut ChaCha8Rng) -> TemporalConv {
        TemporalConv {
            weight: Parameter::glorot(
                "temporal_conv.weight",
                &[filters, kernel],
                kernel,
                filters * kernel,
                rng,
            ),
            filters,
            kernel,
            ctx: None,
        }
    }
}

impl Layer for TemporalConv {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (b, c, s, t) = dims4(input);
        assert_eq!(c, 1, "temporal conv expects a single input channel");
        let k = self.kernel;
        let padded_t = t + k - 1;
        let padded = pad_rows(&input.data, b * s, t, k);
        let mut out = Tensor::zeros(&[b, self.filters, s, t]);
        let w = &self.weight.value.data;
        for bi in 0..b {
            for si in 0..s {
                let row = &padded[(bi * s + si) * padded_t..(bi * s + si + 1) * padded_t];
                for f in 0..self.filters {
                    let dst_base = ((bi * self.filters + f) * s + si) * t;
                    correlate_into(&mut out.data[dst_base..dst_base + t], row, &w[f * k..(f + 1) * k]);
                }
            }
        }
        self.ctx = Some((padded, b, s, t));
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (padded, b, s, t) = self.ctx.take().expect("forward before backward");
        let k = self.kernel;
        let padded_t = t + k - 1;
        let left = (k - 1) / 2;
        let right = k - 1 - left;
        let w = &self.weight.value.data;
        let reversed: Vec<f64> = (0..self.filters * k)
            .map(|i| w[(i / k) * k + (k - 1 - i % k)])
            .collect();
        let dw = &mut self.weight.grad.data;
        let mut dx = Tensor::zeros(&[b, 1, s, t]);
        // dx[tau] = sum_k w[k] dy[tau + left - k]; with dy padded by `right`
        // zeros on the left this is a plain correlation with the reversed
        // kernel.
        let mut dy_pad = vec![0.0; t + k - 1];
        for bi in 0..b {
            for si in 0..s {
                let row = &padded[(bi * s + si) * padded_t..(bi * s + si + 1) * padded_t];
                let dst = &mut dx.data[(bi * s + si) * t..(bi * s + si + 1) * t];
                for f in 0..self.filters {
                    let g_base = ((bi * self.filters + f) * s + si) * t;
                    let g = &grad_out.data[g_base..g_base + t];
                    for ki in 0..k {
                        dw[f * k + ki] += dot(&row[ki..ki + t], g);
                    }
                    dy_pad[right..right + t].copy_from_slice(g);
                    correlate_acc(dst, &dy_pad, &reversed[f * k..(f + 1) * k]);
                }
            }
        }
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight]
    }
}

/// Depthwise spatial convolution: [b, c, s, t] -> [b, c*d, 1, t], kernel
/// (s, 1) per input channel with depth multiplier d, no bias.
pub struct DepthwiseSpatialConv {
    pub weight: Parameter,
    in_channels: usize,
    depth: usize,
    space: usize,
    ctx: Option<Tensor>,
}

impl DepthwiseSpatialConv {
    pub fn new(in_channels: usize, depth: usize, space: usize, rng: &mut ChaCha8Rng) -> Self {
        DepthwiseSpatialConv {
            weight: Parameter::glorot(
                "depthwise_spatial.weight",
                &[in_channels, depth, space],
                space,
                depth * space,
                rng,
            ),
            in_channels,
            depth,
            space,
            ctx: None,
        }
    }
}

impl Layer for DepthwiseSpatialConv {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (b, c, s, t) = dims4(input);
        assert_eq!(c, self.in_channels);
        assert_eq!(s, self.space);
        let d = self.depth;
        let mut out = Tensor::zeros(&[b, c * d, 1, t]);
        let w = &self.weight.value.data;
        for bi in 0..b {
            for ci in 0..c {
                let group = &input.data[(bi * c + ci) * s * t..(bi * c + ci + 1) * s * t];
                for di in 0..d {
                    let wk = &w[(ci * d + di) * s..(ci * d + di + 1) * s];
                    let dst_base = (bi * c * d + ci * d + di) * t;
                    let dst = &mut out.data[dst_base..dst_base + t];
                    let mut ti = 0;
                    while ti + BLOCK <= t {
                        let mut acc = [0.0f64; BLOCK];
                        for (si, &wv) in wk.iter().enumerate() {
                            let xs = &group[si * t + ti..si * t + ti + BLOCK];
                            for l in 0..BLOCK {
                                acc[l] += wv * xs[l];
                            }
                        }
                        dst[ti..ti + BLOCK].copy_from_slice(&acc);
                        ti += BLOCK;
                    }
                    for tt in ti..t {
                        let mut acc = 0.0;
                        for (si, &wv) in wk.iter().enumerate() {
                            acc += wv * group[si * t + tt];
                        }
                        dst[tt] = acc;
                    }
                }
            }
        }
        self.ctx = Some(input.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let input = self.ctx.take().expect("forward before backward");
        let (b, c, s, t) = dims4(&input);
        let d = self.depth;
        let w = &self.weight.value.data;
        let dw = &mut self.weight.grad.data;
        let mut dx = Tensor::zeros(&input.shape);
        for bi in 0..b {
            for ci in 0..c {
                for di in 0..d {
                    let g_base = (bi * c * d + ci * d + di) * t;
                    let g = &grad_out.data[g_base..g_base + t];
                    for si in 0..s {
                        let src_base = ((bi * c + ci) * s + si) * t;
                        dw[(ci * d + di) * s + si] +=
                            dot(&input.data[src_base..src_base + t], g);
                        axpy(
                            w[(ci * d + di) * s + si],
                            g,
                            &mut dx.data[src_base..src_base + t],
                        );
                    }
                }
            }
        }
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight]
    }
}

/// Separable convolution: depthwise temporal (kernel k, same padding)
/// followed by a pointwise 1x1 mix, both bias-free.
pub struct SeparableConv {
    pub depthwise: Parameter,
    pub pointwise: Parameter,
    channels: usize,
    out_channels: usize,
    kernel: usize,
    ctx: Option<(Vec<f64>, Tensor, usize, usize)>,
}

impl SeparableConv {
    pub fn new(channels: usize, out_channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        SeparableConv {
            depthwise: Parameter::glorot(
                "separable.depthwise",
                &[channels, kernel],
                kernel,
                kernel,
                rng,
            ),
            pointwise: Parameter::glorot(
                "separable.pointwise",
                &[out_channels, channels],
                channels,
                out_channels,
                rng,
            ),
            channels,
            out_channels,
            kernel,
            ctx: None,
        }
    }
}

impl Layer for SeparableConv {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (b, c, s, t) = dims4(input);
        assert_eq!(c, self.channels);
        assert_eq!(s, 1, "separable conv runs after spatial collapse");
        let k = self.kernel;
        let padded_t = t + k - 1;
        let padded = pad_rows(&input.data, b * c, t, k);
        let wd = &self.depthwise.value.data;
        let mut mid = Tensor::zeros(&[b, c, 1, t]);
        for bi in 0..b {
            for ci in 0..c {
                let row = &padded[(bi * c + ci) * padded_t..(bi * c + ci + 1) * padded_t];
                let dst = &mut mid.data[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                for ki in 0..k {
                    axpy(wd[ci * k + ki], &row[ki..ki + t], dst);
                }
            }
        }
        // Pointwise: per batch, (out_channels x c) * (c x t).
        let wp = &self.pointwise.value.data;
        let mut out = Tensor::zeros(&[b, self.out_channels, 1, t]);
        for bi in 0..b {
            let x = &mid.data[bi * c * t..(bi + 1) * c * t];
            let y = matmul(wp, x, self.out_channels, c, t);
            out.data[bi * self.out_channels * t..(bi + 1) * self.out_channels * t]
                .copy_from_slice(&y);
        }
        self.ctx = Some((padded, mid, b, t));
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (padded, mid, b, t) = self.ctx.take().expect("forward before backward");
        let c = self.channels;
        let o = self.out_channels;
        let k = self.kernel;
        let padded_t = t + k - 1;

        // Pointwise backward.
        let wp = &self.pointwise.value.data;
        let mut dmid = vec![0.0; mid.data.len()];
        for bi in 0..b {
            let g = &grad_out.data[bi * o * t..(bi + 1) * o * t];
            let x = &mid.data[bi * c * t..(bi + 1) * c * t];
            // dWp += g (o x t) * x^T (t x c)
            matmul_nt_acc(g, x, o, t, c, &mut self.pointwise.grad.data);
            // dmid += Wp^T (c x o) * g (o x t)
            matmul_tn_acc(wp, g, c, o, t, &mut dmid[bi * c * t..(bi + 1) * c * t]);
        }

        // Depthwise backward.
        let wd = &self.depthwise.value.data;
        let dwd = &mut self.depthwise.grad.data;
        let mut dpadded = vec![0.0; padded.len()];
        for r in 0..b * c {
            let ci = r % c;
            let row = &padded[r * padded_t..(r + 1) * padded_t];
            let g = &dmid[r * t..(r + 1) * t];
            let drow = &mut dpadded[r * padded_t..(r + 1) * padded_t];
            for ki in 0..k {
                dwd[ci * k + ki] += dot(&row[ki..ki + t], g);
                axpy(wd[ci * k + ki], g, &mut drow[ki..ki + t]);
            }
        }
        let left = (k - 1) / 2;
        let mut dx = Tensor::zeros(&[b, c, 1, t]);
        for r in 0..b * c {
            dx.data[r * t..(r + 1) * t]
                .copy_from_slice(&dpadded[r * padded_t + left..r * padded_t + left + t]);
        }
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.depthwise, &mut self.pointwise]
    }
}

/// Batch normalization over the channel dimension of [b, c, s, t] tensors.
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    channels: usize,
    ctx: Option<BnCtx>,
}

struct BnCtx {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    train: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: Parameter::new("batch_norm.gamma", Tensor::from_vec(&[channels], vec![1.0; channels])),
            beta: Parameter::new("batch_norm.beta", Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            channels,
            ctx: None,
        }
    }
}

/// (sum, sum of squares) with lane-parallel accumulation.
#[inline]
fn sum_and_sumsq(x: &[f64]) -> (f64, f64) {
    const LANES: usize = 8;
    let chunks = x.len() / LANES;
    let mut s = [0.0f64; LANES];
    let mut q = [0.0f64; LANES];
    for c in 0..chunks {
        let xs = &x[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            s[l] += xs[l];
            q[l] += xs[l] * xs[l];
        }
    }
    let mut sum: f64 = s.iter().sum();
    let mut sum_sq: f64 = q.iter().sum();
    for &v in &x[chunks * LANES..] {
        sum += v;
        sum_sq += v * v;
    }
    (sum, sum_sq)
}

/// (sum of y, sum of y * x) with lane-parallel accumulation.
#[inline]
fn sum_and_dot(y: &[f64], x: &[f64]) -> (f64, f64) {
    const LANES: usize = 8;
    debug_assert_eq!(x.len(), y.len());
    let chunks = x.len() / LANES;
    let mut s = [0.0f64; LANES];
    let mut d = [0.0f64; LANES];
    for c in 0..chunks {
        let xs = &x[c * LANES..(c + 1) * LANES];
        let ys = &y[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            s[l] += ys[l];
            d[l] += ys[l] * xs[l];
        }
    }
    let mut sum: f64 = s.iter().sum();
    let mut dot: f64 = d.iter().sum();
    for i in chunks * LANES..x.len() {
        sum += y[i];
        dot += y[i] * x[i];
    }
    (sum, dot)
}

impl Layer for BatchNorm {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let (b, c, s, t) = dims4(input);
        assert_eq!(c, self.channels);
        let plane = s * t;
        let n = (b * plane) as f64;
        let mut out = Tensor::zeros(&input.shape);
        let mut x_hat = vec![0.0; input.data.len()];
        let mut inv_std_all = vec![0.0; c];
        for ci in 0..c {
            let (mean, var) = if mode == Mode::Train {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for bi in 0..b {
                    let base = (bi * c + ci) * plane;
                    let (s1, s2) = sum_and_sumsq(&input.data[base..base + plane]);
                    sum += s1;
                    sum_sq += s2;
                }
                let mean = sum / n;
                let var = (sum_sq / n - mean * mean).max(0.0);
                // Running statistics keep the unbiased variance.
                let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
                self.running_mean[ci] =
                    (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
                self.running_var[ci] =
                    (1.0 - self.momentum) * self.running_var[ci] + self.momentum * unbiased;
                (mean, var)
            } else {
                (self.running_mean[ci], self.running_var[ci])
            };
            let inv_std = 1.0 / (var + self.eps).sqrt();
            inv_std_all[ci] = inv_std;
            let g = self.gamma.value.data[ci];
            let be = self.beta.value.data[ci];
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                let src = &input.data[base..base + plane];
                let xh = &mut x_hat[base..base + plane];
                let dst = &mut out.data[base..base + plane];
                for i in 0..plane {
                    let v = (src[i] - mean) * inv_std;
                    xh[i] = v;
                    dst[i] = g * v + be;
                }
            }
        }
        self.ctx = Some(BnCtx {
            x_hat,
            inv_std: inv_std_all,
            shape: input.shape.clone(),
            train: mode == Mode::Train,
        });
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let ctx = self.ctx.take().expect("forward before backward");
        let (b, c, s, t) = (ctx.shape[0], ctx.shape[1], ctx.shape[2], ctx.shape[3]);
        let plane = s * t;
        let n = (b * plane) as f64;
        let mut dx = Tensor::zeros(&ctx.shape);
        for ci in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                let (s1, s2) = sum_and_dot(
                    &grad_out.data[base..base + plane],
                    &ctx.x_hat[base..base + plane],
                );
                sum_dy += s1;
                sum_dy_xhat += s2;
            }
            self.gamma.grad.data[ci] += sum_dy_xhat;
            self.beta.grad.data[ci] += sum_dy;
            let g = self.gamma.value.data[ci];
            let inv_std = ctx.inv_std[ci];
            if ctx.train {
                let mean_dy = sum_dy / n;
                let mean_dy_xhat = sum_dy_xhat / n;
                for bi in 0..b {
                    let base = (bi * c + ci) * plane;
                    let gsrc = &grad_out.data[base..base + plane];
                    let xh = &ctx.x_hat[base..base + plane];
                    let dst = &mut dx.data[base..base + plane];
                    for i in 0..plane {
                        dst[i] = g * inv_std * (gsrc[i] - mean_dy - xh[i] * mean_dy_xhat);
                    }
                }
            } else {
                for bi in 0..b {
                    let base = (bi * c + ci) * plane;
                    let gsrc = &grad_out.data[base..base + plane];
                    let dst = &mut dx.data[base..base + plane];
                    for i in 0..plane {
                        dst[i] = g * inv_std * gsrc[i];
                    }
                }
            }
        }
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Layer normalization over the last dimension.
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub eps: f64,
    dim: usize,
    ctx: Option<(Vec<f64>, Vec<f64>, Vec<usize>)>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: Parameter::new("layer_norm.gamma", Tensor::from_vec(&[dim], vec![1.0; dim])),
            beta: Parameter::new("layer_norm.beta", Tensor::zeros(&[dim])),
            eps: 1e-5,
            dim,
            ctx: None,
        }
    }
}

impl Layer for LayerNorm {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let d = self.dim;
        assert_eq!(input.shape.last().copied(), Some(d));
        let rows = input.len() / d;
        let mut out = Tensor::zeros(&input.shape);
        let mut x_hat = vec![0.0; input.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let x = &input.data[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[r] = istd;
            for i in 0..d {
                let xh = (x[i] - mean) * istd;
                x_hat[r * d + i] = xh;
                out.data[r * d + i] = self.gamma.value.data[i] * xh + self.beta.value.data[i];
            }
        }
        self.ctx = Some((x_hat, inv_std, input.shape.clone()));
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (x_hat, inv_std, shape) = self.ctx.take().expect("forward before backward");
        let d = self.dim;
        let rows = x_hat.len() / d;
        let mut dx = Tensor::zeros(&shape);
        for r in 0..rows {
            let g = &grad_out.data[r * d..(r + 1) * d];
            let xh = &x_hat[r * d..(r + 1) * d];
            let mut sum_dyg = 0.0;
            let mut sum_dyg_xhat = 0.0;
            for i in 0..d {
                let dyg = g[i] * self.gamma.value.data[i];
                sum_dyg += dyg;
                sum_dyg_xhat += dyg * xh[i];
                self.gamma.grad.data[i] += g[i] * xh[i];
                self.beta.grad.data[i] += g[i];
            }
            let mean_dyg = sum_dyg / d as f64;
            let mean_dyg_xhat = sum_dyg_xhat / d as f64;
            for i in 0..d {
                let dyg = g[i] * self.gamma.value.data[i];
                dx.data[r * d + i] = inv_std[r] * (dyg - mean_dyg - xh[i] * mean_dyg_xhat);
            }
        }
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Exponential linear unit, alpha = 1.
pub struct Elu {
    ctx: Option<Tensor>,
}

impl Elu {
    pub fn new() -> Elu {
        Elu { ctx: None }
    }
}

impl Default for Elu {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Elu {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let mut out = input.clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = v.exp_m1();
            }
        }
        // The output alone carries the derivative: for x < 0 the output is
        // exp(x) - 1, so d/dx = output + 1; the sign of the output matches
        // the sign of the input.
        self.ctx = Some(out.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let out = self.ctx.take().expect("forward before backward");
        let mut dx = grad_out.clone();
        for (d, &y) in dx.data.iter_mut().zip(&out.data) {
            if y < 0.0 {
                *d *= y + 1.0;
            }
        }
        dx
    }
}

/// ReLU, used inside the transformer feed-forward.
pub struct Relu {
    ctx: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Relu {
        Relu { ctx: None }
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Relu {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let mut out = input.clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.ctx = Some(input.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let input = self.ctx.take().expect("forward before backward");
        let mut dx = grad_out.clone();
        for (d, &x) in dx.data.iter_mut().zip(&input.data) {
            if x <= 0.0 {
                *d = 0.0;
            }
        }
        dx
    }
}

/// Average pooling along time by an integer factor; the remainder is dropped.
pub struct AvgPoolTime {
    pub factor: usize,
    ctx: Option<(Vec<usize>, usize)>,
}

impl AvgPoolTime {
    pub fn new(factor: usize) -> AvgPoolTime {
        AvgPoolTime { factor, ctx: None }
    }
}

impl Layer for AvgPoolTime {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (b, c, s, t) = dims4(input);
        let p = self.factor;
        let t_out = t / p;
        let mut out = Tensor::zeros(&[b, c, s, t_out]);
        for r in 0..b * c * s {
            let src = &input.data[r * t..(r + 1) * t];
            let dst = &mut out.data[r * t_out..(r + 1) * t_out];
            for (j, slot) in dst.iter_mut().enumerate() {
                let window = &src[j * p..(j + 1) * p];
                *slot = window.iter().sum::<f64>() / p as f64;
            }
        }
        self.ctx = Some((input.shape.clone(), t_out));
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (shape, t_out) = self.ctx.take().expect("forward before backward");
        let t = shape[3];
        let p = self.factor;
        let mut dx = Tensor::zeros(&shape);
        let rows = shape[0] * shape[1] * shape[2];
        for r in 0..rows {
            let g = &grad_out.data[r * t_out..(r + 1) * t_out];
            let dst = &mut dx.data[r * t..(r + 1) * t];
            for (j, &gv) in g.iter().enumerate() {
                let share = gv / p as f64;
                for slot in &mut dst[j * p..(j + 1) * p] {
                    *slot = share;
                }
            }
        }
        dx
    }
}

/// Inverted dropout with a seeded generator; identity in eval mode.
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
    ctx: Option<Option<Vec<f64>>>,
}

impl Dropout {
    pub fn new(p: f64, rng: ChaCha8Rng) -> Dropout {
        assert!((0.0..1.0).contains(&p));
        Dropout { p, rng, ctx: None }
    }

    pub fn rng_clone(&self) -> ChaCha8Rng {
        self.rng.clone()
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }
}

impl Layer for Dropout {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Eval || self.p == 0.0 {
            self.ctx = Some(None);
            return input.clone();
        }
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = (0..input.len())
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mut out = input.clone();
        for (v, m) in out.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        self.ctx = Some(Some(mask));
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mask = self.ctx.take().expect("forward before backward");
        match mask {
            None => grad_out.clone(),
            Some(mask) => {
                let mut dx = grad_out.clone();
                for (v, m) in dx.data.iter_mut().zip(&mask) {
                    *v *= m;
                }
                dx
            }
        }
    }
}

/// Collapses [b, c, s, t] to [b, c*s*t].
pub struct Flatten {
    ctx: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Flatten {
        Flatten { ctx: None }
    }
}

impl Default for Flatten {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (b, c, s, t) = dims4(input);
        self.ctx = Some(input.shape.clone());
        Tensor::from_vec(&[b, c * s * t], input.data.clone())
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let shape = self.ctx.take().expect("forward before backward");
        Tensor::from_vec(&shape, grad_out.data.clone())
    }
}

/// Dense layer y = x W^T + b on [rows, in] tensors.
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
    pub in_dim: usize,
    pub out_dim: usize,
    ctx: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Linear {
        Linear {
            weight: Parameter::glorot(
                &format!("{name}.weight"),
                &[out_dim, in_dim],
                in_dim,
                out_dim,
                rng,
            ),
            bias: Parameter::new(&format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
            ctx: None,
        }
    }
}

impl Layer for Linear {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (rows, d) = dims2(input);
        assert_eq!(d, self.in_dim);
        let mut out = Tensor::zeros(&[rows, self.out_dim]);
        // x (rows x in) * W^T (in x out)
        matmul_nt_acc(
            &input.data,
            &self.weight.value.data,
            rows,
            self.in_dim,
            self.out_dim,
            &mut out.data,
        );
        for r in 0..rows {
            for (o, bv) in self.bias.value.data.iter().enumerate() {
                out.data[r * self.out_dim + o] += bv;
            }
        }
        self.ctx = Some(input.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let input = self.ctx.take().expect("forward before backward");
        let rows = input.shape[0];
        // dW += dy^T (out x rows) * x (rows x in)
        matmul_tn_acc(
            &grad_out.data,
            &input.data,
            self.out_dim,
            rows,
            self.in_dim,
            &mut self.weight.grad.data,
        );
        for r in 0..rows {
            for o in 0..self.out_dim {
                self.bias.grad.data[o] += grad_out.data[r * self.out_dim + o];
            }
        }
        let mut dx = Tensor::zeros(&input.shape);
        // dx = dy (rows x out) * W (out x in)
        let dy_w = matmul(&grad_out.data, &self.weight.value.data, rows, self.out_dim, self.in_dim);
        dx.data.copy_from_slice(&dy_w);
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Row-wise softmax over the last dimension.
pub struct Softmax {
    ctx: Option<Tensor>,
}

impl Softmax {
    pub fn new() -> Softmax {
        Softmax { ctx: None }
    }
}

impl Default for Softmax {
    fn default() -> Self {
        Self::new()
    }
}

pub fn softmax_rows(data: &mut [f64], rows: usize, d: usize) {
    for r in 0..rows {
        let row = &mut data[r * d..(r + 1) * d];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

impl Layer for Softmax {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let d = *input.shape.last().expect("softmax needs a last dim");
        let rows = input.len() / d;
        let mut out = input.clone();
        softmax_rows(&mut out.data, rows, d);
        self.ctx = Some(out.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let y = self.ctx.take().expect("forward before backward");
        let d = *y.shape.last().unwrap();
        let rows = y.len() / d;
        let mut dx = Tensor::zeros(&y.shape);
        for r in 0..rows {
            let yr = &y.data[r * d..(r + 1) * d];
            let gr = &grad_out.data[r * d..(r + 1) * d];
            let inner = dot(yr, gr);
            for i in 0..d {
                dx.data[r * d + i] = yr[i] * (gr[i] - inner);
            }
        }
        dx
    }
}
