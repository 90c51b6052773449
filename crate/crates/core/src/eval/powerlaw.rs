//! Saturation power-law fitting: metric(n) = asymptote - alpha * n^(-beta),
//! by multi-start separable least squares (the linear pair (asymptote, alpha)
//! solved exactly for each beta, beta refined by golden-section search).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PowerLawError {
    #[error("need at least {needed} points with distinct sizes, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("fit did not converge")]
    NoConvergence,
}

/// Fit result. A non-converged fit is returned with `converged = false`
/// rather than hidden behind an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub asymptote: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Covariance of (asymptote, alpha, beta) from the Jacobian at the
    /// optimum, row-major 3x3.
    pub covariance: [[f64; 3]; 3],
    pub r_squared: f64,
    pub converged: bool,
    /// Recordings needed to come within one asymptote standard error of the
    /// asymptote, from the fit's own uncertainty.
    pub n_db: Option<f64>,
}

impl PowerLawFit {
    pub fn asymptote_se(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }

    pub fn evaluate(&self, n: f64) -> f64 {
        self.asymptote - self.alpha * n.powf(-self.beta)
    }
}

/// Data size at which the fitted curve comes within `asymptote_se` of the
/// asymptote: n = (alpha / se)^(1/beta).
pub fn n_db(fit: &PowerLawFit, asymptote_se: f64) -> Result<f64, PowerLawError> {
    if !fit.converged {
        return Err(PowerLawError::NoConvergence);
    }
    assert!(asymptote_se > 0.0, "asymptote SE must be positive");
    Ok((fit.alpha / asymptote_se).powf(1.0 / fit.beta))
}

/// Weighted SSE of the linear sub-problem at fixed beta, with the optimal
/// (asymptote, alpha) and their design matrix pieces.
fn solve_linear(
    ns: &[f64],
    ys: &[f64],
    w: &[f64],
    beta: f64,
) -> Option<(f64, f64, f64)> {
    // Basis: y = a * 1 + alpha * (-n^-beta).
    let mut s11 = 0.0;
    let mut s12 = 0.0;
    let mut s22 = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for ((&n, &y), &wi) in ns.iter().zip(ys).zip(w) {
        let x = -n.powf(-beta);
        s11 += wi;
        s12 += wi * x;
        s22 += wi * x * x;
        b1 += wi * y;
        b2 += wi * x * y;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let a = (s22 * b1 - s12 * b2) / det;
    let alpha = (s11 * b2 - s12 * b1) / det;
    let mut sse = 0.0;
    for ((&n, &y), &wi) in ns.iter().zip(ys).zip(w) {
        let r = y - (a - alpha * n.powf(-beta));
        sse += wi * r * r;
    }
    Some((a, alpha, sse))
}

/// Fits the saturation power law to (n, metric) points. Optional per-point
/// standard errors turn the objective into weighted least squares.
pub fn fit_power_law(
    points: &[(f64, f64)],
    sigma: Option<&[f64]>,
) -> Result<PowerLawFit, PowerLawError> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 4 {
        return Err(PowerLawError::TooFewPoints {
            needed: 4,
            got: distinct.len(),
        });
    }
    let ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let w: Vec<f64> = match sigma {
        Some(s) => {
            assert_eq!(s.len(), points.len());
            s.iter().map(|&si| 1.0 / (si * si)).collect()
        }
        None => vec![1.0; points.len()],
    };

    // Multi-start over beta, then golden-section refinement around the best.
    let grid: Vec<f64> = (1..=15).map(|i| i as f64 * 0.1).collect();
    let mut best: Option<(f64, f64, f64, f64)> = None; // (beta, a, alpha, sse)
    for &beta in &grid {
        if let Some((a, alpha, sse)) = solve_linear(&ns, &ys, &w, beta) {
            if best.is_none() || sse < best.unwrap().3 {
                best = Some((beta, a, alpha, sse));
            }
        }
    }
    let (beta0, ..) = best.ok_or(PowerLawError::NoConvergence)?;

    // Golden-section on beta in a bracket around the grid winner.
    let sse_at = |beta: f64| -> f64 {
        solve_linear(&ns, &ys, &w, beta)
            .map(|(_, _, s)| s)
            .unwrap_or(f64::INFINITY)
    };
    let (mut lo, mut hi) = ((beta0 - 0.1).max(1e-3), beta0 + 0.1);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = sse_at(x1);
    let mut f2 = sse_at(x2);
    for _ in 0..200 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = sse_at(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = sse_at(x2);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let beta = 0.5 * (lo + hi);
    let (asymptote, alpha, sse) =
        solve_linear(&ns, &ys, &w, beta).ok_or(PowerLawError::NoConvergence)?;

    // A usable fit has positive decay toward the asymptote from below and a
    // beta in the searched interior.
    let converged = beta > 1.5e-3
        && beta < 1.6 - 1e-6
        && alpha.is_finite()
        && asymptote.is_finite()
        && sse.is_finite();

    // Covariance from the Jacobian at the optimum: columns d/d(asymptote),
    // d/d(alpha), d/d(beta).
    let m = points.len();
    let mut jtj: DMatrix<f64> = DMatrix::zeros(3, 3);
    for ((&n, _), &wi) in ns.iter().zip(&ys).zip(&w) {
        let nb = n.powf(-beta);
        let j = [1.0, -nb, alpha * nb * n.ln()];
        for r in 0..3 {
            for c in 0..3 {
                jtj[(r, c)] += wi * j[r] * j[c];
            }
        }
    }
    let dof = m.saturating_sub(3).max(1) as f64;
    let variance = sse / dof;
    let covariance = match jtj.try_inverse() {
        Some(inv) => {
            let mut cov = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    cov[r][c] = inv[(r, c)] * variance;
                }
            }
            cov
        }
        None => [[f64::NAN; 3]; 3],
    };

    let mean_y = ys.iter().sum::<f64>() / m as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - sse / ss_tot } else { 1.0 };

    let mut fit = PowerLawFit {
        asymptote,
        alpha,
        beta,
        covariance,
        r_squared,
        converged,
        n_db: None,
    };
    let se = fit.asymptote_se();
    if converged && se > 0.0 {
        fit.n_db = n_db(&fit, se).ok();
    }
    Ok(fit)
}

/// Published mean cross-validation AUC values of the meta-model over the
/// stratified subsets, as (recordings, AUC percent) pairs.
pub fn meta_auc_reference_points() -> Vec<(f64, f64)> {
    vec![
        (2_993.0, 81.8),
        (5_986.0, 84.7),
        (11_972.0, 86.0),
        (23_944.0, 87.5),
        (55_787.0, 88.7),
    ]
}

/// Published mean cross-validation AUC values of the gradient-boosted
/// ensemble over the stratified subsets.
pub fn gbe_auc_reference_points() -> Vec<(f64, f64)> {
    vec![
        (2_993.0, 81.9),
        (5_986.0, 83.7),
        (11_972.0, 85.3),
        (23_944.0, 86.2),
        (55_787.0, 86.5),
    ]
}
