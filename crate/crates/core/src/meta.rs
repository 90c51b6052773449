//! Meta-model: L2-regularized logistic regression over the three component
//! probabilities (gradient-boosted ensemble, attention MIL network,
//! transformer network), fit by Newton iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::loss::sigmoid;

#[derive(Debug, Error, PartialEq)]
pub enum MetaError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite input probability at row {0}")]
    NonFiniteInput(usize),
}

/// Number of component models feeding the blend.
pub const N_COMPONENTS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inverse regularization strength; the penalty is ||w||^2 / (2C).
    pub inverse_regularization: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inverse_regularization: 7.9059,
            max_iterations: 4_000,
            tolerance: 1e-8,
        }
    }
}

/// Fitted blend. Component order is fixed and recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaModel {
    pub weights: [f64; N_COMPONENTS],
    pub bias: f64,
    pub components: [String; N_COMPONENTS],
    pub config: MetaConfig,
    pub converged: bool,
}

pub fn component_names() -> [String; N_COMPONENTS] {
    ["GBE".into(), "MINetP".into(), "TransNetP".into()]
}

/// Newton (IRLS) fit of sum BCE + ||w||^2 / (2C); the bias is unregularized.
pub fn train_meta(
    component_probs: &[[f64; N_COMPONENTS]],
    labels: &[u8],
    config: &MetaConfig,
) -> Result<MetaModel, MetaError> {
    assert_eq!(component_probs.len(), labels.len());
    for (i, row) in component_probs.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(MetaError::NonFiniteInput(i));
        }
    }
    let n = labels.len();
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == n {
        return Err(MetaError::SingleClass);
    }

    let dim = N_COMPONENTS + 1; // weights + bias
    let mut theta = DVector::zeros(dim);
    let inv_c = 1.0 / config.inverse_regularization;
    let mut converged = false;

    for _ in 0..config.max_iterations {
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for (row, &label) in component_probs.iter().zip(labels) {
            let mut z = theta[N_COMPONENTS];
            for j in 0..N_COMPONENTS {
                z += theta[j] * row[j];
            }
            let p = sigmoid(z);
            let r = p - label as f64;
            let s = (p * (1.0 - p)).max(1e-12);
            let x = [row[0], row[1], row[2], 1.0];
            for j in 0..dim {
                grad[j] += r * x[j];
                for k in 0..dim {
                    hess[(j, k)] += s * x[j] * x[k];
                }
            }
        }
        for j in 0..N_COMPONENTS {
            grad[j] += theta[j] * inv_c;
            hess[(j, j)] += inv_c;
        }
        if grad.amax() < config.tolerance {
            converged = true;
            break;
        }
        let step = hess
            .lu()
            .solve(&grad)
            .expect("regularized Newton system is nonsingular");
        theta -= step;
    }

    Ok(MetaModel {
        weights: [theta[0], theta[1], theta[2]],
        bias: theta[N_COMPONENTS],
        components: component_names(),
        config: config.clone(),
        converged,
    })
}

impl MetaModel {
    pub fn predict(&self, probs: &[f64; N_COMPONENTS]) -> f64 {
        let mut z = self.bias;
        for j in 0..N_COMPONENTS {
            z += self.weights[j] * probs[j];
        }
        sigmoid(z)
    }
}
