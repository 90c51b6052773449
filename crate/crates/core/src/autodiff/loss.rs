//! Binary cross-entropy in numerically stable forms.

/// BCE from a logit: loss = max(z, 0) - z*y + ln(1 + exp(-|z|)).
/// Returns (loss, dloss/dlogit) with gradient sigmoid(z) - y.
pub fn bce_with_logit(logit: f64, target: f64) -> (f64, f64) {
    debug_assert!(logit.is_finite(), "non-finite logit");
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    let grad = sigmoid(logit) - target;
    (loss, grad)
}

/// BCE from a log-probability (used for geometric-mean aggregation where the
/// recording probability arrives as ln p = mean of per-frame ln sigmoid).
/// Returns (loss, dloss/dlnp). The log-probability is clamped just below 0
/// so ln(1 - p) stays finite.
pub fn bce_with_log_prob(ln_p: f64, target: f64) -> (f64, f64) {
    let ln_p = ln_p.min(-1e-12);
    let p = ln_p.exp();
    // ln(1 - p) via expm1 for precision near p = 1.
    let ln_1mp = (-ln_p.exp_m1()).ln();
    let loss = -target * ln_p - (1.0 - target) * ln_1mp;
    let grad = -target + (1.0 - target) * p / (1.0 - p);
    (loss, grad)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln sigmoid(z) = -softplus(-z), stable for large |z|.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_target_one_gives_ln_two() {
        let (loss, grad) = bce_with_logit(0.0, 1.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad + 0.5).abs() < 1e-15);
    }

    #[test]
    fn saturated_logit_has_negligible_loss() {
        let (loss, _) = bce_with_logit(20.0, 1.0);
        assert!(loss < 1e-8);
        let (loss, _) = bce_with_logit(-20.0, 0.0);
        assert!(loss < 1e-8);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let h = 1e-6;
        for &(z, y) in &[(0.3, 1.0), (-2.0, 0.0), (5.0, 1.0), (-0.7, 1.0)] {
            let (_, grad) = bce_with_logit(z, y);
            let (lp, _) = bce_with_logit(z + h, y);
            let (lm, _) = bce_with_logit(z - h, y);
            let numeric = (lp - lm) / (2.0 * h);
            assert!((grad - numeric).abs() < 1e-6, "z={z} y={y}");
        }
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let h = 1e-7;
        for &(lnp, y) in &[(-0.5, 1.0), (-0.5, 0.0), (-3.0, 1.0), (-0.01, 0.0)] {
            let (_, grad) = bce_with_log_prob(lnp, y);
            let (lp, _) = bce_with_log_prob(lnp + h, y);
            let (lm, _) = bce_with_log_prob(lnp - h, y);
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (grad - numeric).abs() / numeric.abs().max(1.0);
            assert!(rel < 1e-5, "lnp={lnp} y={y}: {grad} vs {numeric}");
        }
    }

    #[test]
    fn log_sigmoid_consistency() {
        for &z in &[-40.0, -3.0, 0.0, 3.0, 40.0] {
            assert!((log_sigmoid(z) - sigmoid(z).ln()).abs() < 1e-12 || z < -35.0);
        }
    }
}
