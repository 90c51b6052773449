//! Central finite-difference verification of layer backward rules.
//!
//! Evaluations rebuild the layer through a factory so stochastic layers
//! (dropout, attention dropout) replay the identical mask on every probe.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{Layer, Mode, Tensor};

/// Deterministic cotangent for reducing a tensor to a scalar probe loss.
fn cotangent(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(shape, data)
}

fn probe_loss(out: &Tensor, r: &Tensor) -> f64 {
    out.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Checks d(probe)/d(input) and d(probe)/d(parameters) of a layer against
/// central differences with step `h`. Returns the maximum relative error
/// over all checked coordinates (up to `max_coords` per tensor).
pub fn check_layer<L, F>(make: F, input: &Tensor, mode: Mode, h: f64, max_coords: usize, seed: u64) -> f64
where
    L: Layer,
    F: Fn() -> L,
{
    let mut layer = make();
    let out = layer.forward(input, mode);
    let r = cotangent(&out.shape, seed);
    let dx = layer.backward(&r);

    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;

    // Input coordinates.
    let coords = pick_coords(input.len(), max_coords, &mut rng);
    for &i in &coords {
        let numeric = {
            let mut xp = input.clone();
            xp.data[i] += h;
            let mut lp = make();
            let op = lp.forward(&xp, mode);
            let mut xm = input.clone();
            xm.data[i] -= h;
            let mut lm = make();
            let om = lm.forward(&xm, mode);
            (probe_loss(&op, &r) - probe_loss(&om, &r)) / (2.0 * h)
        };
        worst = worst.max(rel_err(dx.data[i], numeric));
    }

    // Parameter coordinates.
    let n_params = {
        let mut probe = make();
        probe.parameters_mut().len()
    };
    for pi in 0..n_params {
        let analytic = {
            let mut l = make();
            l.forward(input, mode);
            l.backward(&r);
            l.parameters_mut()[pi].grad.data.clone()
        };
        let coords = pick_coords(analytic.len(), max_coords, &mut rng);
        for &i in &coords {
            let eval = |delta: f64| {
                let mut l = make();
                l.parameters_mut()[pi].value.data[i] += delta;
                let o = l.forward(input, mode);
                probe_loss(&o, &r)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

fn pick_coords(len: usize, max_coords: usize, rng: &mut StdRng) -> Vec<usize> {
    if len <= max_coords {
        (0..len).collect()
    } else {
        (0..max_coords).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Random tensor for gradient-check inputs.
pub fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-1.5..1.5))
        .collect();
    Tensor::from_vec(shape, data)
}
