//! Linear (PCA) dimension reducer for high-dimensional covariates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    pub mean: Vec<f64>,
    /// `d_out` orthonormal directions, each of the raw dimension.
    pub components: Vec<Vec<f64>>,
}

/// Center by column means and keep the top `d_out` right singular vectors.
///
/// Each direction's sign is fixed so its largest-magnitude entry is positive.
pub fn fit_reducer(raw: &[Vec<f64>], d_out: usize) -> Result<Reducer> {
    let n = raw.len();
    let p = raw.first().map(|r| r.len()).ok_or(Error::EmptyDataset)?;
    if n < d_out || d_out == 0 || d_out > p {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {d_out} components from {n} x {p} data"
        )));
    }
    if let Some(bad) = raw.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: bad.len(),
        });
    }
    let mean: Vec<f64> = (0..p).map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| raw[i][j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::InvalidParameter("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[order[0]];
    let tol = top * 1e-10 * n.max(p) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < d_out || top == 0.0 {
        return Err(Error::RankDeficient {
            rank,
            requested: d_out,
        });
    }
    let components = order[..d_out]
        .iter()
        .map(|&r| {
            let mut v: Vec<f64> = v_t.row(r).iter().copied().collect();
            let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(Reducer { mean, components })
}

impl Reducer {
    pub fn raw_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.components.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(raw).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }

    /// Map features back into the raw space (orthogonal projection).
    pub fn reconstruct(&self, features: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, f) in self.components.iter().zip(features) {
            for (o, a) in out.iter_mut().zip(c) {
                *o += f * a;
            }
        }
        out
    }
}

pub fn apply_reducer(r: &Reducer, raw: &[f64]) -> Vec<f64> {
    r.apply(raw)
}
