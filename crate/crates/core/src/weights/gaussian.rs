//! Multivariate Gaussian with a cached Cholesky factor.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GaussianParams {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianParams", into = "GaussianParams")]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    /// Row-major lower Cholesky factor of `cov`.
    chol: Vec<f64>,
    log_norm: f64,
}

impl TryFrom<GaussianParams> for Gaussian {
    type Error = Error;

    fn try_from(p: GaussianParams) -> Result<Self> {
        Gaussian::new(p.mean, p.cov)
    }
}

impl From<Gaussian> for GaussianParams {
    fn from(g: Gaussian) -> Self {
        GaussianParams {
            mean: g.mean,
            cov: g.cov,
        }
    }
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: cov.len(),
            });
        }
        let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[i][j] + cov[j][i]));
        let chol = m.cholesky().ok_or(Error::SingularCovariance)?;
        let l = chol.l();
        let mut flat = vec![0.0; d * d];
        let mut log_det_half = 0.0;
        for i in 0..d {
            for j in 0..=i {
                flat[i * d + j] = l[(i, j)];
            }
            log_det_half += l[(i, i)].ln();
        }
        if !log_det_half.is_finite() {
            return Err(Error::SingularCovariance);
        }
        Ok(Self {
            mean,
            cov,
            chol: flat,
            log_norm: 0.5 * d as f64 * (2.0 * PI).ln() + log_det_half,
        })
    }

    /// Maximum-likelihood fit (divisor `n`) over covariances whose eigenvalues
    /// are at least `floor`.
    pub fn fit(points: &[&[f64]], floor: f64) -> Result<Self> {
        let weights = vec![1.0; points.len()];
        Self::fit_weighted(points, &weights, floor)
    }

    pub(crate) fn fit_weighted(points: &[&[f64]], weights: &[f64], floor: f64) -> Result<Self> {
        let d = points.first().map(|p| p.len()).ok_or(Error::EmptyDataset)?;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("non-positive total weight".into()));
        }
        let mut mean = vec![0.0; d];
        for (p, &w) in points.iter().zip(weights) {
            for (m, v) in mean.iter_mut().zip(p.iter()) {
                *m += w * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut cov = vec![vec![0.0; d]; d];
        for (p, &w) in points.iter().zip(weights) {
            for i in 0..d {
                let di = p[i] - mean[i];
                for j in 0..=i {
                    cov[i][j] += w * di * (p[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                cov[i][j] /= total;
                cov[j][i] = cov[i][j];
            }
        }
        Self::new(mean, clip_eigenvalues(cov, floor))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    /// Natural-log density; `z` must have the model's dimension.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let d = self.mean.len();
        debug_assert_eq!(z.len(), d);
        // forward substitution L u = z - mean
        let mut u = [0.0f64; 16];
        let mut heap;
        let u: &mut [f64] = if d <= 16 {
            &mut u[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let mut acc = z[i] - self.mean[i];
            let row = &self.chol[i * d..i * d + i];
            for (j, l) in row.iter().enumerate() {
                acc -= l * u[j];
            }
            u[i] = acc / self.chol[i * d + i];
            quad += u[i] * u[i];
        }
        -0.5 * quad - self.log_norm
    }
}

/// Raise every eigenvalue of a symmetric matrix to at least `floor`.
///
/// This is the constrained maximizer of the Gaussian likelihood over
/// `cov >= floor * I`, so EM that uses it still never decreases the
/// likelihood.
fn clip_eigenvalues(cov: Vec<Vec<f64>>, floor: f64) -> Vec<Vec<f64>> {
    let d = cov.len();
    let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return cov;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..d).map(|r| v[(i, r)] * clipped[r] * v[(j, r)]).sum())
                .collect()
        })
        .collect()
}
