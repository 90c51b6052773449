//! Rectified Adam.
//!
//! The variance-rectification term rho_t controls the branch: while
//! rho_t <= 4 (always true for the first few steps) the update is plain
//! momentum SGD on the bias-corrected first moment; afterwards the adaptive
//! step with the rectification factor applies.

use thiserror::Error;

use super::Parameter;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
}

#[derive(Debug, Clone, Copy)]
pub struct RAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// The rectification term rho_t.
pub fn rho_t(beta2: f64, t: u64) -> f64 {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(t as i32);
    rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

/// Applies one RAdam step to each parameter, consuming and clearing the
/// accumulated gradients.
pub fn radam_step(params: &mut [&mut Parameter], cfg: &RAdamConfig) -> Result<(), OptimError> {
    let rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
    for p in params.iter_mut() {
        if p.grad.data.iter().any(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient(p.name.clone()));
        }
        p.step += 1;
        let t = p.step;
        let b1t = cfg.beta1.powi(t as i32);
        let b2t = cfg.beta2.powi(t as i32);
        let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);

        let adaptive = rho > 4.0;
        let rect = if adaptive {
            (((rho - 4.0) * (rho - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
                .sqrt()
        } else {
            0.0
        };

        for i in 0..p.value.data.len() {
            let g = p.grad.data[i];
            let m = cfg.beta1 * p.first_moment.data[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.second_moment.data[i] + (1.0 - cfg.beta2) * g * g;
            p.first_moment.data[i] = m;
            p.second_moment.data[i] = v;
            let m_hat = m / (1.0 - b1t);
            let update = if adaptive {
                let v_hat = (v / (1.0 - b2t)).sqrt();
                cfg.lr * rect * m_hat / (v_hat + cfg.eps)
            } else {
                cfg.lr * m_hat
            };
            p.value.data[i] -= update;
        }
        p.grad.fill(0.0);
    }
    Ok(())
}
