//! SPD covariance matrices, the affine-invariant Karcher mean and
//! tangent-space projection.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::edf::N_CHANNELS;
use crate::preprocess::Frame;

#[derive(Debug, Error)]
pub enum RiemannError {
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("karcher mean did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// A symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry (1e-10 relative) and positive eigenvalues.
    pub fn try_new(m: DMatrix<f64>) -> Result<SpdMatrix, RiemannError> {
        if m.nrows() != m.ncols() {
            return Err(RiemannError::NotSpd("matrix is not square".into()));
        }
        let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                    return Err(RiemannError::NotSpd(format!(
                        "asymmetry at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        let sym = symmetrize(&m);
        let eig = SymmetricEigen::new(sym.clone());
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(RiemannError::NotSpd(format!(
                "non-positive eigenvalue {:?}",
                eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        Ok(SpdMatrix { m: sym })
    }

    /// Wraps a matrix known to be SPD by construction.
    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> SpdMatrix {
        SpdMatrix { m }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.m.clone());
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
        symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        self.map_eigenvalues(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        self.map_eigenvalues(|l| 1.0 / l.sqrt())
    }

    pub fn logm(&self) -> DMatrix<f64> {
        self.map_eigenvalues(f64::ln)
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Matrix exponential of a symmetric matrix via eigendecomposition.
pub(crate) fn expm_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
    symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

/// Matrix logarithm of an SPD matrix given as a plain symmetric matrix.
fn logm_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>, RiemannError> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(RiemannError::NotSpd(
            "log of a matrix with non-positive spectrum".into(),
        ));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::ln));
    Ok(symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose())))
}

/// Sample covariance of a frame (divisor 600, per-channel mean removed),
/// ridge-regularized to SPD with epsilon = 1e-6 * trace / 19, floored at
/// 1e-12 so an all-constant frame still yields a definite matrix.
pub fn frame_covariance(frame: &Frame) -> SpdMatrix {
    let n = frame.data.len() / N_CHANNELS;
    let mut rows = vec![vec![0.0f64; n]; N_CHANNELS];
    for (ch, row) in rows.iter_mut().enumerate() {
        let src = frame.channel(ch);
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        for (dst, &v) in row.iter_mut().zip(src) {
            *dst = v as f64 - mean;
        }
    }
    let mut cov = DMatrix::zeros(N_CHANNELS, N_CHANNELS);
    for i in 0..N_CHANNELS {
        for j in i..N_CHANNELS {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let v = dot / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eps = (1e-6 * cov.trace() / N_CHANNELS as f64).max(1e-12);
    for i in 0..N_CHANNELS {
        cov[(i, i)] += eps;
    }
    SpdMatrix::new_unchecked(cov)
}

/// Result of the Karcher mean iteration.
#[derive(Debug, Clone)]
pub struct KarcherMean {
    pub mean: SpdMatrix,
    pub converged: bool,
    pub iterations: usize,
}

/// Affine-invariant (Karcher) mean of SPD matrices by fixed-point iteration:
/// M <- M^{1/2} exp(mean_i log(M^{-1/2} C_i M^{-1/2})) M^{1/2}, stopping when
/// the Frobenius norm of the tangent mean drops below 1e-9, capped at 50
/// iterations (the best iterate is returned with `converged = false`).
pub fn riemannian_mean(mats: &[SpdMatrix]) -> Result<KarcherMean, RiemannError> {
    assert!(!mats.is_empty(), "karcher mean of an empty set");
    let dim = mats[0].dim();
    assert!(mats.iter().all(|m| m.dim() == dim));
    if mats.len() == 1 {
        return Ok(KarcherMean {
            mean: mats[0].clone(),
            converged: true,
            iterations: 0,
        });
    }

    let mut mean = DMatrix::zeros(dim, dim);
    for m in mats {
        mean += m.matrix();
    }
    mean /= mats.len() as f64;
    let mut current = SpdMatrix::new_unchecked(mean);

    let max_iter = 50;
    for it in 0..max_iter {
        let half = current.sqrt();
        let inv_half = current.inv_sqrt();
        let mut tangent = DMatrix::zeros(dim, dim);
        for m in mats {
            let whitened = &inv_half * m.matrix() * &inv_half;
            tangent += logm_symmetric(&whitened)?;
        }
        tangent /= mats.len() as f64;
        let norm = tangent.norm();
        if norm < 1e-9 {
            return Ok(KarcherMean {
                mean: current,
                converged: true,
                iterations: it,
            });
        }
        let stepped = &half * expm_symmetric(&tangent) * &half;
        current = SpdMatrix::new_unchecked(symmetrize(&stepped));
    }
    Ok(KarcherMean {
        mean: current,
        converged: false,
        iterations: max_iter,
    })
}

/// Log-map of `point` at `reference`, vectorized as the upper triangle in
/// row-major order with off-diagonal entries scaled by sqrt(2).
pub fn tangent_project(reference: &SpdMatrix, point: &SpdMatrix) -> Result<Vec<f64>, RiemannError> {
    let dim = reference.dim();
    assert_eq!(point.dim(), dim);
    let inv_half = reference.inv_sqrt();
    let whitened = &inv_half * point.matrix() * &inv_half;
    let s = logm_symmetric(&whitened)?;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        for j in i..dim {
            out.push(if i == j { s[(i, i)] } else { sqrt2 * s[(i, j)] });
        }
    }
    Ok(out)
}

/// Closed-form geometric mean of two SPD matrices:
/// A^{1/2} (A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}. Used as an oracle for the
/// iterative mean.
pub fn two_matrix_geometric_mean(a: &SpdMatrix, b: &SpdMatrix) -> SpdMatrix {
    let half = a.sqrt();
    let inv_half = a.inv_sqrt();
    let inner = SpdMatrix::new_unchecked(symmetrize(&(&inv_half * b.matrix() * &inv_half)));
    SpdMatrix::new_unchecked(symmetrize(&(&half * inner.sqrt() * &half)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::FRAME_LEN;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_spd(rng: &mut StdRng, dim: usize) -> SpdMatrix {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
        SpdMatrix::try_new(m).unwrap()
    }

    #[test]
    fn covariance_of_independent_channels_is_near_identity() {
        let mut rng = StdRng::seed_from_u64(10);
        let mut acc = DMatrix::zeros(N_CHANNELS, N_CHANNELS);
        let n_frames = 30;
        for _ in 0..n_frames {
            let data: Vec<f32> = (0..N_CHANNELS * FRAME_LEN)
                .map(|_| {
                    // Unit-variance uniform noise.
                    rng.gen_range(-(3.0f64.sqrt())..(3.0f64.sqrt())) as f32
                })
                .collect();
            let frame = Frame { data, index: 0 };
            acc += frame_covariance(&frame).matrix();
        }
        acc /= n_frames as f64;
        for i in 0..N_CHANNELS {
            assert!((acc[(i, i)] - 1.0).abs() < 0.1, "diag {}", acc[(i, i)]);
            for j in 0..i {
                assert!(acc[(i, j)].abs() < 0.2, "offdiag {}", acc[(i, j)]);
            }
        }
    }

    #[test]
    fn constant_frame_covariance_is_the_ridge_floor() {
        let frame = Frame {
            data: vec![4.0; N_CHANNELS * FRAME_LEN],
            index: 0,
        };
        let cov = frame_covariance(&frame);
        for i in 0..N_CHANNELS {
            for j in 0..N_CHANNELS {
                let want = if i == j { 1e-12 } else { 0.0 };
                assert_eq!(cov.matrix()[(i, j)], want);
            }
        }
    }

    #[test]
    fn covariance_is_symmetric() {
        let mut rng = StdRng::seed_from_u64(11);
        let data: Vec<f32> = (0..N_CHANNELS * FRAME_LEN)
            .map(|_| rng.gen_range(-50.0..50.0))
            .collect();
        let cov = frame_covariance(&Frame { data, index: 0 });
        let m = cov.matrix();
        for i in 0..N_CHANNELS {
            for j in 0..N_CHANNELS {
                assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_of_equal_inputs_is_the_input() {
        let mut rng = StdRng::seed_from_u64(12);
        let c = random_spd(&mut rng, 5);
        let result = riemannian_mean(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert!(result.converged);
        let diff = (result.mean.matrix() - c.matrix()).norm();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn mean_of_commuting_diagonals_is_elementwise_geometric() {
        let a = SpdMatrix::try_new(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 4.0])).unwrap();
        let b = SpdMatrix::try_new(DMatrix::from_diagonal(&nalgebra::dvector![4.0, 1.0])).unwrap();
        let result = riemannian_mean(&[a, b]).unwrap();
        assert!(result.converged);
        let m = result.mean.matrix();
        assert!((m[(0, 0)] - 2.0).abs() < 1e-9);
        assert!((m[(1, 1)] - 2.0).abs() < 1e-9);
        assert!(m[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn mean_of_two_matches_closed_form() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..20 {
            let a = random_spd(&mut rng, 2);
            let b = random_spd(&mut rng, 2);
            let want = two_matrix_geometric_mean(&a, &b);
            let got = riemannian_mean(&[a, b]).unwrap();
            assert!(got.converged);
            let diff = (got.mean.matrix() - want.matrix()).norm();
            assert!(diff < 1e-8, "diff {diff}");
        }
    }

    #[test]
    fn congruence_invariance() {
        let mut rng = StdRng::seed_from_u64(14);
        let mats: Vec<SpdMatrix> = (0..4).map(|_| random_spd(&mut rng, 4)).collect();
        let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0))
            + DMatrix::identity(4, 4) * 2.0;
        let transformed: Vec<SpdMatrix> = mats
            .iter()
            .map(|m| SpdMatrix::try_new(symmetrize(&(&a * m.matrix() * a.transpose()))).unwrap())
            .collect();
        let lhs = riemannian_mean(&transformed).unwrap().mean;
        let rhs = &a * riemannian_mean(&mats).unwrap().mean.matrix() * a.transpose();
        let rel = (lhs.matrix() - &rhs).norm() / rhs.norm();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn mean_is_order_independent() {
        let mut rng = StdRng::seed_from_u64(15);
        let mats: Vec<SpdMatrix> = (0..6).map(|_| random_spd(&mut rng, 3)).collect();
        let fwd = riemannian_mean(&mats).unwrap().mean;
        let mut rev = mats;
        rev.reverse();
        let bwd = riemannian_mean(&rev).unwrap().mean;
        assert!((fwd.matrix() - bwd.matrix()).norm() < 1e-9);
    }

    #[test]
    fn tangent_at_self_is_zero() {
        let mut rng = StdRng::seed_from_u64(16);
        let c = random_spd(&mut rng, 19);
        let v = tangent_project(&c, &c).unwrap();
        assert_eq!(v.len(), 190);
        assert!(v.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn tangent_length_is_190_for_19_channels() {
        let mut rng = StdRng::seed_from_u64(17);
        let a = random_spd(&mut rng, 19);
        let b = random_spd(&mut rng, 19);
        assert_eq!(tangent_project(&a, &b).unwrap().len(), 190);
    }

    #[test]
    fn eigen_log_matches_taylor_series_near_identity() {
        let mut rng = StdRng::seed_from_u64(18);
        let e = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-0.01..0.01));
        let e = symmetrize(&e);
        let m = DMatrix::identity(3, 3) + &e;
        let spd = SpdMatrix::try_new(m).unwrap();
        let got = spd.logm();
        // log(I + E) = E - E^2/2 + E^3/3 - E^4/4 ...
        let mut series = DMatrix::zeros(3, 3);
        let mut power = DMatrix::identity(3, 3);
        for k in 1..=12 {
            power = &power * &e;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            series += &power * (sign / k as f64);
        }
        assert!((got - series).norm() < 1e-10);
    }

    #[test]
    fn non_spd_inputs_are_rejected() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(SpdMatrix::try_new(asym).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SpdMatrix::try_new(indefinite).is_err());
    }
}
