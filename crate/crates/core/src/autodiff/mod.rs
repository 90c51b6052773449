//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Each layer owns its parameters and the forward context needed to run the
//! exact vector-Jacobian product backward. Networks are explicit structs
//! wiring layers together; there is no dynamic graph. Parameter gradients
//! accumulate across backward calls until the optimizer consumes them, which
//! is what batch-chunked training wants.

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;

use rand::Rng;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Tensor {
        assert_eq!(self.len(), shape.iter().product::<usize>());
        self.shape = shape.to_vec();
        self
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Trainable tensor with accumulated gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub step: u64,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
}

impl Parameter {
    pub fn new(name: &str, value: Tensor) -> Parameter {
        let shape = value.shape.clone();
        Parameter {
            name: name.to_string(),
            grad: Tensor::zeros(&shape),
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            step: 0,
            value,
        }
    }

    /// Glorot-uniform initialization with the given fan-in/out.
    pub fn glorot(name: &str, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Parameter {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Parameter::new(name, Tensor::from_vec(shape, data))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn n_values(&self) -> usize {
        self.value.len()
    }
}

/// Forward mode: training enables dropout and batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable layer: forward stores whatever context the exact
/// vector-Jacobian product needs; backward consumes it, accumulates parameter
/// gradients and returns the input gradient.
pub trait Layer {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor;
    fn backward(&mut self, grad_out: &Tensor) -> Tensor;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        Vec::new()
    }
}

/// C = A(m x k) * B(k x n), row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// C += A(m x k) * B^T where B is (n x k), row-major.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C += A^T(m x k from k x m) * B(k x n): A is stored (k x m) row-major.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// y += alpha * x.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with sixteen independent accumulators so the reduction
/// vectorizes; a single-chain loop would serialize on the FP add.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    const LANES: usize = 16;
    let mut acc = [0.0f64; LANES];
    let xc = x.chunks_exact(LANES);
    let yc = y.chunks_exact(LANES);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..LANES {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut total = 0.0;
    for l in 0..LANES {
        total += acc[l];
    }
    for (a, b) in xr.iter().zip(yr) {
        total += a * b;
    }
    total
}
