//! Polyphase rational resampling with a Kaiser-windowed sinc kernel.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("unsupported rate: {0}")]
    UnsupportedRate(String),
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Zeroth-order modified Bessel function, by power series.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Anti-aliasing prototype at the upsampled rate: cutoff at the tighter of
/// the two Nyquist limits, Kaiser beta 5, 20*max(L,M) half-length.
fn design_kernel(up: u64, down: u64) -> Vec<f64> {
    let max_rate = up.max(down) as f64;
    let half_len = (10.0 * max_rate) as i64;
    let fc = 0.5 / max_rate;
    let beta = 5.0;
    let denom = bessel_i0(beta);
    let mut h = Vec::with_capacity((2 * half_len + 1) as usize);
    for i in -half_len..=half_len {
        let t = i as f64 / half_len as f64;
        let window = bessel_i0(beta * (1.0 - t * t).max(0.0).sqrt()) / denom;
        h.push(2.0 * fc * sinc(2.0 * fc * i as f64) * window * up as f64);
    }
    h
}

/// Resamples one channel from `from_rate` to `to_rate` (both integral Hz).
///
/// Output length is floor(len * to / from). Identity when the rates match.
pub fn resample(signal: &[f64], from_rate: f64, to_rate: f64) -> Result<Vec<f64>, ResampleError> {
    for (name, r) in [("from_rate", from_rate), ("to_rate", to_rate)] {
        if !(r.is_finite() && r > 0.0) {
            return Err(ResampleError::UnsupportedRate(format!("{name} = {r}")));
        }
        if (r - r.round()).abs() > 1e-9 {
            return Err(ResampleError::UnsupportedRate(format!(
                "{name} = {r} is not integral"
            )));
        }
    }
    let from = from_rate.round() as u64;
    let to = to_rate.round() as u64;
    if from == to {
        return Ok(signal.to_vec());
    }
    let g = gcd(from, to);
    let up = to / g;
    let down = from / g;
    let h = design_kernel(up, down);
    let half_len = (h.len() / 2) as i64;

    let n_in = signal.len() as i64;
    let n_out = (signal.len() as u64 * up / down) as usize;
    let (up, down) = (up as i64, down as i64);
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out as i64 {
        // Output sample j sits at upsampled position j*down; sum over input
        // samples whose upsampled positions fall inside the kernel support.
        let center = j * down;
        let i_lo = (center - half_len + up - 1).div_euclid(up).max(0);
        let i_hi = ((center + half_len).div_euclid(up)).min(n_in - 1);
        let mut acc = 0.0;
        for i in i_lo..=i_hi {
            let k = half_len + center - i * up;
            acc += signal[i as usize] * h[k as usize];
        }
        out.push(acc);
    }
    Ok(out)
}
