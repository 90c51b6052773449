//! Multi-head self-attention over a single sequence of frame encodings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::softmax_rows;
use super::{dot, matmul, matmul_nt_acc, matmul_tn_acc, Layer, Mode, Parameter, Tensor};

/// Standard multi-head self-attention on [n, d] input: packed QKV input
/// projection with bias, scaled dot-product attention per head with dropout
/// on the attention weights, and an output projection with bias.
pub struct MultiHeadSelfAttention {
    pub in_proj_weight: Parameter,
    pub in_proj_bias: Parameter,
    pub out_proj_weight: Parameter,
    pub out_proj_bias: Parameter,
    pub heads: usize,
    pub dim: usize,
    dropout_p: f64,
    rng: ChaCha8Rng,
    ctx: Option<Ctx>,
}

struct Ctx {
    input: Tensor,
    qkv: Vec<f64>,
    attn: Vec<f64>,
    attn_dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
    context: Vec<f64>,
    n: usize,
}

impl MultiHeadSelfAttention {
    pub fn new(dim: usize, heads: usize, dropout_p: f64, rng: &mut ChaCha8Rng) -> Self {
        assert_eq!(dim % heads, 0, "model dim must divide into heads");
        let dropout_rng = ChaCha8Rng::seed_from_u64_stream(rng);
        MultiHeadSelfAttention {
            in_proj_weight: Parameter::glorot("mhsa.in_proj.weight", &[3 * dim, dim], dim, dim, rng),
            in_proj_bias: Parameter::new("mhsa.in_proj.bias", Tensor::zeros(&[3 * dim])),
            out_proj_weight: Parameter::glorot("mhsa.out_proj.weight", &[dim, dim], dim, dim, rng),
            out_proj_bias: Parameter::new("mhsa.out_proj.bias", Tensor::zeros(&[dim])),
            heads,
            dim,
            dropout_p,
            rng: dropout_rng,
            ctx: None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.in_proj_weight.n_values()
            + self.in_proj_bias.n_values()
            + self.out_proj_weight.n_values()
            + self.out_proj_bias.n_values()
    }
}

trait SeedFromStream {
    fn seed_from_u64_stream(rng: &mut ChaCha8Rng) -> ChaCha8Rng;
}

impl SeedFromStream for ChaCha8Rng {
    fn seed_from_u64_stream(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
        use rand::SeedableRng;
        ChaCha8Rng::seed_from_u64(rng.gen())
    }
}

impl Layer for MultiHeadSelfAttention {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let n = input.shape[0];
        let d = self.dim;
        assert_eq!(input.shape, vec![n, d]);
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();

        // qkv[n, 3d] = x W_in^T + b_in
        let mut qkv = vec![0.0; n * 3 * d];
        matmul_nt_acc(&input.data, &self.in_proj_weight.value.data, n, d, 3 * d, &mut qkv);
        for r in 0..n {
            for (j, bv) in self.in_proj_bias.value.data.iter().enumerate() {
                qkv[r * 3 * d + j] += bv;
            }
        }

        // Per head: scores = Q K^T * scale, softmax, dropout, context = A V.
        let mut attn = vec![0.0; h * n * n];
        for hi in 0..h {
            let q_off = hi * dh;
            let k_off = d + hi * dh;
            for i in 0..n {
                let qi = &qkv[i * 3 * d + q_off..i * 3 * d + q_off + dh];
                for j in 0..n {
                    let kj = &qkv[j * 3 * d + k_off..j * 3 * d + k_off + dh];
                    attn[(hi * n + i) * n + j] = dot(qi, kj) * scale;
                }
            }
        }
        softmax_rows(&mut attn, h * n, n);

        let (attn_dropped, mask) = if mode == Mode::Train && self.dropout_p > 0.0 {
            let keep = 1.0 - self.dropout_p;
            let mask: Vec<f64> = (0..attn.len())
                .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let dropped: Vec<f64> = attn.iter().zip(&mask).map(|(a, m)| a * m).collect();
            (dropped, Some(mask))
        } else {
            (attn.clone(), None)
        };

        let mut context = vec![0.0; n * d];
        for hi in 0..h {
            let v_off = 2 * d + hi * dh;
            for i in 0..n {
                let a_row = &attn_dropped[(hi * n + i) * n..(hi * n + i + 1) * n];
                let out_row = &mut context[i * d + hi * dh..i * d + hi * dh + dh];
                for j in 0..n {
                    let vj = &qkv[j * 3 * d + v_off..j * 3 * d + v_off + dh];
                    super::axpy(a_row[j], vj, out_row);
                }
            }
        }

        // out = context W_out^T + b_out
        let mut out = Tensor::zeros(&[n, d]);
        matmul_nt_acc(&context, &self.out_proj_weight.value.data, n, d, d, &mut out.data);
        for r in 0..n {
            for (j, bv) in self.out_proj_bias.value.data.iter().enumerate() {
                out.data[r * d + j] += bv;
            }
        }

        self.ctx = Some(Ctx {
            input: input.clone(),
            qkv,
            attn,
            attn_dropped,
            mask,
            context,
            n,
        });
        out
    }

    fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let ctx = self.ctx.take().expect("forward before backward");
        let n = ctx.n;
        let d = self.dim;
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();

        // Output projection backward.
        matmul_tn_acc(
            &grad_out.data,
            &ctx.context,
            d,
            n,
            d,
            &mut self.out_proj_weight.grad.data,
        );
        for r in 0..n {
            for j in 0..d {
                self.out_proj_bias.grad.data[j] += grad_out.data[r * d + j];
            }
        }
        let dcontext = matmul(&grad_out.data, &self.out_proj_weight.value.data, n, d, d);

        // Attention backward.
        let mut dqkv = vec![0.0; n * 3 * d];
        let mut dattn_dropped = vec![0.0; h * n * n];
        for hi in 0..h {
            let v_off = 2 * d + hi * dh;
            for i in 0..n {
                let dc_row = &dcontext[i * d + hi * dh..i * d + hi * dh + dh];
                for j in 0..n {
                    let vj = &ctx.qkv[j * 3 * d + v_off..j * 3 * d + v_off + dh];
                    // d attn = dc . v
                    dattn_dropped[(hi * n + i) * n + j] = dot(dc_row, vj);
                }
                // dV_j += attn[i,j] * dc_row
                let a_row = &ctx.attn_dropped[(hi * n + i) * n..(hi * n + i + 1) * n];
                for j in 0..n {
                    let dv = &mut dqkv[j * 3 * d + v_off..j * 3 * d + v_off + dh];
                    super::axpy(a_row[j], dc_row, dv);
                }
            }
        }

        // Dropout backward on attention weights.
        let mut dattn = dattn_dropped;
        if let Some(mask) = &ctx.mask {
            for (g, m) in dattn.iter_mut().zip(mask) {
                *g *= m;
            }
        }

        // Softmax backward row-wise, then scores backward into Q and K.
        for hi in 0..h {
            let q_off = hi * dh;
            let k_off = d + hi * dh;
            for i in 0..n {
                let y = &ctx.attn[(hi * n + i) * n..(hi * n + i + 1) * n];
                let g = &dattn[(hi * n + i) * n..(hi * n + i + 1) * n];
                let inner = dot(y, g);
                // dscore[j] = y[j] * (g[j] - inner); then chain into q, k.
                let qi: Vec<f64> =
                    ctx.qkv[i * 3 * d + q_off..i * 3 * d + q_off + dh].to_vec();
                for j in 0..n {
                    let ds = y[j] * (g[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj_range = j * 3 * d + k_off..j * 3 * d + k_off + dh;
                    let kj: Vec<f64> = ctx.qkv[kj_range.clone()].to_vec();
                    super::axpy(ds, &kj, &mut dqkv[i * 3 * d + q_off..i * 3 * d + q_off + dh]);
                    super::axpy(ds, &qi, &mut dqkv[kj_range]);
                }
            }
        }

        // Input projection backward.
        matmul_tn_acc(
            &dqkv,
            &ctx.input.data,
            3 * d,
            n,
            d,
            &mut self.in_proj_weight.grad.data,
        );
        for r in 0..n {
            for j in 0..3 * d {
                self.in_proj_bias.grad.data[j] += dqkv[r * 3 * d + j];
            }
        }
        let mut dx = Tensor::zeros(&[n, d]);
        let dq_w = matmul(&dqkv, &self.in_proj_weight.value.data, n, 3 * d, d);
        dx.data.copy_from_slice(&dq_w);
        dx
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.in_proj_weight,
            &mut self.in_proj_bias,
            &mut self.out_proj_weight,
            &mut self.out_proj_bias,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parameter_count_matches_packed_projection_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mhsa = MultiHeadSelfAttention::new(288, 8, 0.0, &mut rng);
        assert_eq!(mhsa.parameter_count(), 332_928);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mhsa = MultiHeadSelfAttention::new(16, 4, 0.5, &mut rng);
        let x = Tensor::from_vec(&[3, 16], (0..48).map(|i| (i as f64 * 0.1).sin()).collect());
        let a = mhsa.forward(&x, Mode::Eval);
        let b = mhsa.forward(&x, Mode::Eval);
        assert_eq!(a.data, b.data);
    }
}
