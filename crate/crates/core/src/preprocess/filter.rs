//! IIR filters: mains notch and Butterworth high/low-pass designed as
//! cascaded biquad sections with numeric verification of the frequency-mask
//! requirements.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("frequency {freq} Hz at or above Nyquist for rate {rate} Hz")]
    FreqAboveNyquist { freq: f64, rate: f64 },
    #[error("filter mask unsatisfiable at rate {rate} Hz: {detail}")]
    SpecInfeasible { rate: f64, detail: String },
}

/// Filter kind plus its design parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterSpec {
    Notch { freq: f64, q: f64 },
    Highpass { cutoff: f64, order: usize },
    Lowpass { cutoff: f64, order: usize },
}

/// One second-order section, coefficients normalized to a0 = 1.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Causal single-pass application (direct form II transposed).
    pub fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let inp = *v;
            let out = self.b[0] * inp + z1;
            z1 = self.b[1] * inp - self.a[0] * out + z2;
            z2 = self.b[2] * inp - self.a[1] * out;
            *v = out;
        }
    }

    /// Complex gain at normalized angular frequency w (radians per sample).
    pub fn response(&self, w: f64) -> (f64, f64) {
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = self.b[1] * s1 + self.b[2] * s2;
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = self.a[0] * s1 + self.a[1] * s2;
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    }
}

/// Cascade of biquads applied in order.
#[derive(Debug, Clone, Default)]
pub struct Cascade {
    pub sections: Vec<Biquad>,
}

impl Cascade {
    pub fn run(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    /// Forward-backward application; squares the magnitude response and
    /// cancels phase. Off by default in the pipeline.
    pub fn run_zero_phase(&self, x: &mut [f64]) {
        self.run(x);
        x.reverse();
        self.run(x);
        x.reverse();
    }

    pub fn gain_at(&self, freq: f64, rate: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq / rate;
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(w);
                (re * re + im * im).sqrt()
            })
            .product()
    }

    pub fn gain_db_at(&self, freq: f64, rate: f64) -> f64 {
        20.0 * self.gain_at(freq, rate).log10()
    }
}

/// Second-order IIR notch (unit DC gain, unit Nyquist gain).
pub fn design_notch(freq: f64, q: f64, rate: f64) -> Result<Cascade, FilterError> {
    assert!(q > 0.0, "notch quality factor must be positive");
    if freq >= rate / 2.0 {
        return Err(FilterError::FreqAboveNyquist { freq, rate });
    }
    let w0 = 2.0 * std::f64::consts::PI * freq / rate;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let section = Biquad {
        b: [1.0 / a0, -2.0 * w0.cos() / a0, 1.0 / a0],
        a: [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
    };
    Ok(Cascade {
        sections: vec![section],
    })
}

#[derive(Clone, Copy)]
enum Kind {
    Lowpass,
    Highpass,
}

/// Butterworth design via analog prototype and bilinear transform.
///
/// `cutoff` is the -3 dB frequency in Hz. Sections are ordered with poles
/// closest to the unit circle last.
pub fn design_butterworth(
    kind_is_high: bool,
    cutoff: f64,
    order: usize,
    rate: f64,
) -> Result<Cascade, FilterError> {
    assert!(order >= 1, "filter order must be at least 1");
    assert!(cutoff > 0.0, "cutoff must be positive");
    if cutoff >= rate / 2.0 {
        return Err(FilterError::FreqAboveNyquist { freq: cutoff, rate });
    }
    let kind = if kind_is_high {
        Kind::Highpass
    } else {
        Kind::Lowpass
    };
    let warped = 2.0 * rate * (std::f64::consts::PI * cutoff / rate).tan();
    Ok(butter_from_analog(kind, warped, order, rate))
}

fn butter_from_analog(kind: Kind, wc: f64, order: usize, rate: f64) -> Cascade {
    use std::f64::consts::PI;
    let fs2 = 2.0 * rate;
    let mut sections = Vec::new();

    // Analog prototype poles on the unit circle, scaled/inverted per kind,
    // then mapped by the bilinear transform. Conjugate pairs share one biquad.
    let n = order;
    let mut pair_angles = Vec::new();
    for k in 0..n / 2 {
        pair_angles.push(PI * (2.0 * k as f64 + n as f64 + 1.0) / (2.0 * n as f64));
    }

    for &theta in &pair_angles {
        let (pr, pi) = (theta.cos(), theta.sin());
        // Analog pole for the requested kind.
        let (ar, ai) = match kind {
            Kind::Lowpass => (wc * pr, wc * pi),
            Kind::Highpass => {
                // wc / p for p on the unit circle is wc * conj(p); the
                // conjugate lands in the same biquad either way.
                (wc * pr, -wc * pi)
            }
        };
        // Bilinear: z = (fs2 + s) / (fs2 - s).
        let den = (fs2 - ar) * (fs2 - ar) + ai * ai;
        let zr = ((fs2 + ar) * (fs2 - ar) - ai * ai) / den;
        let zi = (ai * (fs2 - ar) + (fs2 + ar) * ai) / den;
        let b = match kind {
            Kind::Lowpass => [1.0, 2.0, 1.0],
            Kind::Highpass => [1.0, -2.0, 1.0],
        };
        sections.push(Biquad {
            b,
            a: [-2.0 * zr, zr * zr + zi * zi],
        });
    }
    if n % 2 == 1 {
        let s = match kind {
            Kind::Lowpass => -wc,
            Kind::Highpass => -wc,
        };
        let zp = (fs2 + s) / (fs2 - s);
        let b = match kind {
            Kind::Lowpass => [1.0, 1.0, 0.0],
            Kind::Highpass => [1.0, -1.0, 0.0],
        };
        sections.push(Biquad {
            b,
            a: [-zp, 0.0],
        });
    }

    // Normalize each section to unit gain at the reference frequency.
    let w_ref = match kind {
        Kind::Lowpass => 0.0,
        Kind::Highpass => std::f64::consts::PI,
    };
    for s in &mut sections {
        let (re, im) = s.response(w_ref);
        let g = (re * re + im * im).sqrt();
        for b in &mut s.b {
            *b /= g;
        }
    }
    Cascade { sections }
}

/// Frequency mask for a Butterworth design: passband edge with maximum
/// deviation from unity, and an optional stopband edge with minimum
/// attenuation (both in dB).
#[derive(Debug, Clone, Copy)]
pub struct ButterMask {
    pub highpass: bool,
    pub passband_edge: f64,
    pub max_passband_db: f64,
    pub stopband_edge: Option<f64>,
    pub min_stopband_db: f64,
}

/// The pipeline low-pass mask: cutoff 40 Hz, under 1 dB passband deviation,
/// at least 20 dB attenuation from 50 Hz up.
pub const LOWPASS_MASK: ButterMask = ButterMask {
    highpass: false,
    passband_edge: 40.0,
    max_passband_db: 1.0,
    stopband_edge: Some(50.0),
    min_stopband_db: 20.0,
};

/// The pipeline high-pass mask: under 1 dB deviation from unity at and above
/// 0.5 Hz. No stopband requirement is stated, so the order is pinned by the
/// caller.
pub const HIGHPASS_MASK: ButterMask = ButterMask {
    highpass: true,
    passband_edge: 0.5,
    max_passband_db: 1.0,
    stopband_edge: None,
    min_stopband_db: 0.0,
};

/// Checks a designed cascade against a mask on a dense frequency grid.
pub fn satisfies_mask(cascade: &Cascade, mask: &ButterMask, rate: f64) -> bool {
    let ny = rate / 2.0;
    let grid = |lo: f64, hi: f64| -> Vec<f64> {
        let n = 512;
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect()
    };
    let passband = if mask.highpass {
        grid(mask.passband_edge, ny * 0.999)
    } else {
        grid(ny * 1e-4, mask.passband_edge)
    };
    for f in passband {
        if cascade.gain_db_at(f, rate).abs() >= mask.max_passband_db {
            return false;
        }
    }
    if let Some(edge) = mask.stopband_edge {
        debug_assert!(!mask.highpass, "stopband masks are used for the low-pass");
        for f in grid(edge, ny * 0.999) {
            if -cascade.gain_db_at(f, rate) < mask.min_stopband_db {
                return false;
            }
        }
    }
    true
}

/// Designs the minimum-order Butterworth low-pass meeting `mask` at `rate`.
///
/// The order comes from the analog selectivity formula on prewarped edges;
/// the natural frequency splits the slack geometrically between the exact
/// passband and exact stopband solutions so both constraints hold strictly.
/// The result is verified on a dense grid and the order bumped if needed.
pub fn design_lowpass_for_mask(mask: &ButterMask, rate: f64) -> Result<(usize, Cascade), FilterError> {
    use std::f64::consts::PI;
    let ny = rate / 2.0;
    let ws_edge = mask.stopband_edge.expect("low-pass mask has a stopband");
    if mask.passband_edge >= ny || ws_edge >= ny {
        return Err(FilterError::SpecInfeasible {
            rate,
            detail: format!(
                "mask edges {} / {} Hz at or above Nyquist",
                mask.passband_edge, ws_edge
            ),
        });
    }
    let wp = 2.0 * rate * (PI * mask.passband_edge / rate).tan();
    let ws = 2.0 * rate * (PI * ws_edge / rate).tan();
    let gp = 10f64.powf(mask.max_passband_db / 10.0) - 1.0;
    let gs = 10f64.powf(mask.min_stopband_db / 10.0) - 1.0;
    let mut order = ((gs / gp).ln() / (2.0 * (ws / wp).ln())).ceil() as usize;
    order = order.max(1);

    for _ in 0..4 {
        let wc_pass = wp / gp.powf(1.0 / (2.0 * order as f64));
        let wc_stop = ws / gs.powf(1.0 / (2.0 * order as f64));
        let wc = (wc_pass * wc_stop).sqrt();
        let cascade = butter_from_analog(Kind::Lowpass, wc, order, rate);
        if satisfies_mask(&cascade, mask, rate) {
            return Ok((order, cascade));
        }
        order += 1;
    }
    Err(FilterError::SpecInfeasible {
        rate,
        detail: "mask still violated after raising the order".into(),
    })
}

/// Designs the pipeline high-pass: order 2 at 0.1 Hz, verified against the
/// passband mask (raising the order cannot help a passband-only mask, so a
/// violation is an infeasibility).
pub fn design_highpass_for_mask(mask: &ButterMask, rate: f64) -> Result<(usize, Cascade), FilterError> {
    let order = 2;
    let cascade = design_butterworth(true, 0.1, order, rate)?;
    if !satisfies_mask(&cascade, mask, rate) {
        return Err(FilterError::SpecInfeasible {
            rate,
            detail: "high-pass passband mask violated".into(),
        });
    }
    Ok((order, cascade))
}

/// Applies a filter spec to one channel in place.
pub fn apply_filter(
    signal: &mut [f64],
    spec: &FilterSpec,
    rate: f64,
    zero_phase: bool,
) -> Result<(), FilterError> {
    let cascade = match *spec {
        FilterSpec::Notch { freq, q } => design_notch(freq, q, rate)?,
        FilterSpec::Highpass { cutoff, order } => design_butterworth(true, cutoff, order, rate)?,
        FilterSpec::Lowpass { cutoff, order } => design_butterworth(false, cutoff, order, rate)?,
    };
    if zero_phase {
        cascade.run_zero_phase(signal);
    } else {
        cascade.run(signal);
    }
    Ok(())
}
