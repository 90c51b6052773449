//! Multitaper spectral estimation: DPSS (Slepian) tapers, band power and
//! band-wise coherence for 19-channel frames.
//!
//! Tapers are the top eigenvectors of the classic symmetric tridiagonal
//! operator, found by Sturm-sequence bisection plus inverse iteration, with
//! the sign convention that the first element is positive. The defaults are
//! a time-bandwidth product of 4 with 7 tapers.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::edf::N_CHANNELS;
use crate::features::bands::BandTable;
use crate::preprocess::{Frame, FRAME_LEN};

/// Default multitaper time-bandwidth product.
pub const DEFAULT_NW: f64 = 4.0;
/// Default taper count (2*NW - 1).
pub const DEFAULT_TAPERS: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),
}

/// Counts eigenvalues of the tridiagonal (diag, offdiag) strictly below x.
fn sturm_count(diag: &[f64], offdiag_sq: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q.abs() < 1e-300 {
            1e-300_f64.copysign(q)
        } else {
            q
        };
        q = diag[i] - x - offdiag_sq[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Inverse-iteration eigenvector for an isolated eigenvalue of T.
fn inverse_iteration(diag: &[f64], offdiag: &[f64], eigenvalue: f64, n: usize) -> Vec<f64> {
    // Deterministic start vector.
    let mut v: Vec<f64> = (0..n)
        .map(|i| ((i as f64 * 0.7548776662 + 0.31) % 1.0) - 0.5)
        .collect();
    normalize(&mut v);
    for _ in 0..4 {
        solve_tridiag(diag, offdiag, eigenvalue, &mut v);
        normalize(&mut v);
    }
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Gaussian elimination with partial pivoting specialised to the shifted
/// tridiagonal system (T - lambda I) x = b, overwriting b with x. Near-zero
/// pivots are clamped, which is exactly what inverse iteration wants.
fn solve_tridiag(diag: &[f64], offdiag: &[f64], lambda: f64, b: &mut [f64]) {
    let n = diag.len();
    // Band storage after pivoting: main d, first upper u1, second upper u2.
    let mut d: Vec<f64> = diag.iter().map(|&v| v - lambda).collect();
    let mut u1: Vec<f64> = offdiag.to_vec();
    u1.push(0.0);
    let mut u2 = vec![0.0; n];
    let scale = diag.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tiny = 1e-290 * scale.max(1.0);

    for i in 0..n - 1 {
        // Row i: (d[i], u1[i], u2[i]); row i+1 starts as (sub, d[i+1], u1[i+1]).
        let sub = offdiag[i];
        let mut row_hi = (d[i], u1[i], u2[i]);
        let mut row_lo = (sub, d[i + 1], u1[i + 1]);
        if sub.abs() > d[i].abs() {
            std::mem::swap(&mut row_hi, &mut row_lo);
            b.swap(i, i + 1);
        }
        let pivot = if row_hi.0.abs() < tiny {
            tiny.copysign(row_hi.0)
        } else {
            row_hi.0
        };
        let m = row_lo.0 / pivot;
        d[i] = pivot;
        u1[i] = row_hi.1;
        u2[i] = row_hi.2;
        d[i + 1] = row_lo.1 - m * row_hi.1;
        u1[i + 1] = row_lo.2 - m * row_hi.2;
        b[i + 1] -= m * b[i];
    }

    // Back substitution.
    let last = if d[n - 1].abs() < tiny {
        tiny.copysign(d[n - 1])
    } else {
        d[n - 1]
    };
    b[n - 1] /= last;
    if n >= 2 {
        b[n - 2] = (b[n - 2] - u1[n - 2] * b[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - u1[i] * b[i + 1] - u2[i] * b[i + 2]) / d[i];
    }
}

/// DPSS tapers for length `n`, time-bandwidth `nw`, `k` tapers.
///
/// Returns row-major tapers ordered by decreasing spectral concentration,
/// each with unit energy and a positive first element.
pub fn dpss(n: usize, nw: f64, k: usize) -> Vec<Vec<f64>> {
    assert!(k >= 1 && k < n);
    let w = nw / n as f64;
    let cos2piw = (2.0 * std::f64::consts::PI * w).cos();
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let c = (n as f64 - 1.0 - 2.0 * i as f64) / 2.0;
            c * c * cos2piw
        })
        .collect();
    let offdiag: Vec<f64> = (1..n)
        .map(|i| (i as f64) * (n as f64 - i as f64) / 2.0)
        .collect();
    let offdiag_sq: Vec<f64> = offdiag.iter().map(|v| v * v).collect();

    // Gershgorin interval.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = (if i > 0 { offdiag[i - 1].abs() } else { 0.0 })
            + (if i < n - 1 { offdiag[i].abs() } else { 0.0 });
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }

    // The j-th largest eigenvalue (j = 0 is the largest): bisection on the
    // count of eigenvalues below x.
    let mut tapers = Vec::with_capacity(k);
    for j in 0..k {
        let want_below = n - 1 - j; // eigenvalues strictly below target
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if sturm_count(&diag, &offdiag_sq, mid) > want_below {
                b = mid;
            } else {
                a = mid;
            }
            if (b - a) <= 1e-14 * hi.abs().max(1.0) {
                break;
            }
        }
        let eigenvalue = 0.5 * (a + b);
        let mut v = inverse_iteration(&diag, &offdiag, eigenvalue, n);
        // Orthogonalize against previously found tapers (guards repeated
        // convergence to a neighbour for tightly clustered eigenvalues).
        for prev in &tapers {
            let dot: f64 = v.iter().zip(prev as &Vec<f64>).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= dot * p;
            }
        }
        normalize(&mut v);
        if v[0] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        tapers.push(v);
    }
    tapers
}

struct SpectralPlan {
    tapers: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    /// FFT bin indices per band, inclusive edges.
    band_bins: Vec<Vec<usize>>,
    n_bins_kept: usize,
}

static PLAN_CACHE: Lazy<Mutex<HashMap<(usize, u64, usize), Arc<SpectralPlan>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(n: usize, nw: f64, k: usize, bands: &BandTable) -> Arc<SpectralPlan> {
    let key = (n, nw.to_bits(), k);
    let mut cache = PLAN_CACHE.lock().unwrap();
    if let Some(p) = cache.get(&key) {
        return Arc::clone(p);
    }
    let tapers = dpss(n, nw, k);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let df = crate::preprocess::TARGET_RATE / n as f64;
    let band_bins: Vec<Vec<usize>> = bands
        .bands
        .iter()
        .map(|&(lo, hi)| {
            let k_lo = (lo / df - 1e-9).ceil() as usize;
            let k_hi = (hi / df + 1e-9).floor() as usize;
            (k_lo..=k_hi.min(n / 2)).collect()
        })
        .collect();
    let n_bins_kept = band_bins
        .iter()
        .flat_map(|b| b.iter().copied())
        .max()
        .unwrap_or(0)
        + 1;
    let p = Arc::new(SpectralPlan {
        tapers,
        fft,
        band_bins,
        n_bins_kept,
    });
    cache.insert(key, Arc::clone(&p));
    p
}

/// Tapered spectra of every channel of a frame: `spectra[ch][taper]` holds
/// the first `n_bins_kept` FFT bins.
struct FrameSpectra {
    spectra: Vec<Vec<Vec<Complex64>>>,
    band_bins: Vec<Vec<usize>>,
    n_tapers: usize,
}

fn frame_spectra(frame: &Frame, bands: &BandTable, nw: f64, k: usize) -> FrameSpectra {
    let p = plan(FRAME_LEN, nw, k, bands);
    let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
    let mut scratch = vec![Complex64::new(0.0, 0.0); p.fft.get_inplace_scratch_len()];
    let mut spectra = Vec::with_capacity(N_CHANNELS);
    for ch in 0..N_CHANNELS {
        let row = frame.channel(ch);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / row.len() as f64;
        let mut per_taper = Vec::with_capacity(k);
        for taper in &p.tapers {
            for ((slot, &x), &t) in buf.iter_mut().zip(row).zip(taper) {
                *slot = Complex64::new((x as f64 - mean) * t, 0.0);
            }
            p.fft.process_with_scratch(&mut buf, &mut scratch);
            per_taper.push(buf[..p.n_bins_kept].to_vec());
        }
        spectra.push(per_taper);
    }
    FrameSpectra {
        spectra,
        band_bins: p.band_bins.clone(),
        n_tapers: k,
    }
}

/// Per-channel band powers, normalized so all 19 x 14 cells sum to one.
///
/// Output is channel-major: `out[ch * n_bands + band]`.
pub fn multitaper_band_power(
    frame: &Frame,
    bands: &BandTable,
    nw: f64,
    k: usize,
) -> Result<Vec<f64>, SpectralError> {
    let fs = frame_spectra(frame, bands, nw, k);
    let n_bands = fs.band_bins.len();
    let mut out = vec![0.0; N_CHANNELS * n_bands];
    for ch in 0..N_CHANNELS {
        for (b, bins) in fs.band_bins.iter().enumerate() {
            let mut acc = 0.0;
            for &bin in bins {
                for t in 0..fs.n_tapers {
                    acc += fs.spectra[ch][t][bin].norm_sqr();
                }
            }
            out[ch * n_bands + b] = acc / fs.n_tapers as f64;
        }
    }
    let total: f64 = out.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(SpectralError::DegenerateFrame(
            "zero total band power".into(),
        ));
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Sub-diagonal channel pairs (x, y) with x < y, in canonical channel order.
pub fn channel_pairs() -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(N_CHANNELS * (N_CHANNELS - 1) / 2);
    for x in 0..N_CHANNELS {
        for y in x + 1..N_CHANNELS {
            pairs.push((x, y));
        }
    }
    pairs
}

/// Band-wise magnitude coherence for the 171 sub-diagonal channel pairs.
///
/// Output is pair-major: `out[pair * n_bands + band]`, pairs ordered as in
/// [`channel_pairs`].
pub fn multitaper_coherence(
    frame: &Frame,
    bands: &BandTable,
    nw: f64,
    k: usize,
) -> Result<Vec<f64>, SpectralError> {
    let fs = frame_spectra(frame, bands, nw, k);
    let n_bands = fs.band_bins.len();
    let pairs = channel_pairs();
    let mut auto = vec![0.0; N_CHANNELS * n_bands];
    for ch in 0..N_CHANNELS {
        for (b, bins) in fs.band_bins.iter().enumerate() {
            let mut acc = 0.0;
            for &bin in bins {
                for t in 0..fs.n_tapers {
                    acc += fs.spectra[ch][t][bin].norm_sqr();
                }
            }
            auto[ch * n_bands + b] = acc;
        }
    }
    let mut out = vec![0.0; pairs.len() * n_bands];
    for (pi, &(x, y)) in pairs.iter().enumerate() {
        for (b, bins) in fs.band_bins.iter().enumerate() {
            let mut cross = Complex64::new(0.0, 0.0);
            for &bin in bins {
                for t in 0..fs.n_tapers {
                    cross += fs.spectra[x][t][bin] * fs.spectra[y][t][bin].conj();
                }
            }
            let sxx = auto[x * n_bands + b];
            let syy = auto[y * n_bands + b];
            if sxx <= 0.0 || syy <= 0.0 {
                return Err(SpectralError::DegenerateFrame(format!(
                    "zero auto-spectrum in band {b}"
                )));
            }
            out[pi * n_bands + b] = cross.norm() / (sxx * syy).sqrt();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::bands::BandTable;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn frame_from_rows(rows: Vec<Vec<f64>>) -> Frame {
        let mut data = Vec::with_capacity(N_CHANNELS * FRAME_LEN);
        for row in rows {
            assert_eq!(row.len(), FRAME_LEN);
            data.extend(row.into_iter().map(|v| v as f32));
        }
        Frame { data, index: 0 }
    }

    fn noise_frame(rng: &mut StdRng, amp: f64) -> Frame {
        frame_from_rows(
            (0..N_CHANNELS)
                .map(|_| (0..FRAME_LEN).map(|_| rng.gen_range(-amp..amp)).collect())
                .collect(),
        )
    }

    #[test]
    fn dpss_matches_reference_values() {
        // Reference values from scipy.signal.windows.dpss.
        let t = dpss(600, 4.0, 7);
        let checks = [
            (0usize, 0usize, 3.921597682020e-6),
            (0, 100, 4.188738623624e-3),
            (0, 300, 8.099174569043e-2),
            (3, 0, 1.137682829259e-3),
            (3, 100, 6.004040127962e-2),
            (3, 300, 7.495317060550e-4),
            (6, 0, 4.121893471007e-2),
            (6, 100, -8.812317263422e-3),
            (6, 300, -3.748960208866e-2),
        ];
        for (k, i, want) in checks {
            let got = t[k][i];
            assert!(
                (got - want).abs() < 1e-9,
                "taper {k}[{i}]: got {got:e}, want {want:e}"
            );
        }

        let t16 = dpss(16, 2.0, 3);
        let want_t1 = [
            7.5102915383e-2,
            1.5875003685e-1,
            2.5178409331e-1,
            3.2810717123e-1,
            3.6016750520e-1,
            3.2876495506e-1,
            2.3103276711e-1,
            8.3218180051e-2,
        ];
        for (i, want) in want_t1.iter().enumerate() {
            assert!((t16[1][i] - want).abs() < 1e-9);
            assert!((t16[1][15 - i] + want).abs() < 1e-9);
        }
    }

    #[test]
    fn dpss_tapers_are_orthonormal() {
        let t = dpss(600, 4.0, 7);
        for i in 0..7 {
            for j in 0..7 {
                let dot: f64 = t[i].iter().zip(&t[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "<t{i}, t{j}> = {dot}");
            }
        }
    }

    #[test]
    fn band_power_cells_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(1);
        let frame = noise_frame(&mut rng, 30.0);
        let bands = BandTable::standard();
        let p = multitaper_band_power(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        assert_eq!(p.len(), 266);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn injected_alpha_tone_dominates_its_cell() {
        let mut rng = StdRng::seed_from_u64(2);
        let mut rows: Vec<Vec<f64>> = (0..N_CHANNELS)
            .map(|_| (0..FRAME_LEN).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        for (i, v) in rows[0].iter_mut().enumerate() {
            *v += 30.0 * (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 100.0).sin();
        }
        let frame = frame_from_rows(rows);
        let bands = BandTable::standard();
        let p = multitaper_band_power(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        let argmax = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let (ch, band) = (argmax / 14, argmax % 14);
        assert_eq!(ch, 0, "dominant channel should be Fp1");
        assert_eq!(bands.bands[band], (8.0, 13.0), "dominant band should be alpha");
    }

    #[test]
    fn band_power_is_scale_invariant() {
        let mut rng = StdRng::seed_from_u64(3);
        let frame = noise_frame(&mut rng, 20.0);
        let mut scaled = frame.clone();
        for v in &mut scaled.data {
            *v *= 5.0;
        }
        let bands = BandTable::standard();
        let a = multitaper_band_power(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        let b = multitaper_band_power(&scaled, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_channels_have_unit_coherence() {
        let mut rng = StdRng::seed_from_u64(4);
        let base: Vec<f64> = (0..FRAME_LEN).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let frame = frame_from_rows((0..N_CHANNELS).map(|_| base.clone()).collect());
        let bands = BandTable::standard();
        let c = multitaper_coherence(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        assert_eq!(c.len(), 2394);
        for &v in &c {
            assert!((v - 1.0).abs() < 1e-9, "coherence {v}");
        }
    }

    #[test]
    fn independent_noise_has_low_mean_coherence() {
        let mut rng = StdRng::seed_from_u64(5);
        let bands = BandTable::standard();
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..100 {
            let frame = noise_frame(&mut rng, 25.0);
            let c = multitaper_coherence(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
            total += c.iter().sum::<f64>();
            count += c.len();
        }
        let mean = total / count as f64;
        assert!(mean < 0.3, "mean coherence {mean}");
    }

    #[test]
    fn coherence_values_lie_in_unit_interval_and_are_symmetric() {
        let mut rng = StdRng::seed_from_u64(6);
        let frame = noise_frame(&mut rng, 15.0);
        let bands = BandTable::standard();
        let c = multitaper_coherence(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        for &v in &c {
            assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        // Swapping the two channels of a pair must not change the value.
        let mut swapped = frame.clone();
        let (a, b) = (0usize, 5usize);
        for i in 0..FRAME_LEN {
            swapped.data.swap(a * FRAME_LEN + i, b * FRAME_LEN + i);
        }
        let cs = multitaper_coherence(&swapped, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        let pair_idx = channel_pairs().iter().position(|&p| p == (a, b)).unwrap();
        for band in 0..14 {
            let orig = c[pair_idx * 14 + band];
            let swap = cs[pair_idx * 14 + band];
            assert!((orig - swap).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_frame_is_degenerate() {
        let frame = Frame {
            data: vec![0.0; N_CHANNELS * FRAME_LEN],
            index: 0,
        };
        let bands = BandTable::standard();
        assert!(matches!(
            multitaper_band_power(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS),
            Err(SpectralError::DegenerateFrame(_))
        ));
        assert!(matches!(
            multitaper_coherence(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS),
            Err(SpectralError::DegenerateFrame(_))
        ));
    }
}
