//! Propensity-score models `p(x | z)` for the alternative weight form
//! `w_k(x, z) = 1{x = k} / p(x | z)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityModel {
    /// Bayes' rule applied to the generative components of the enclosing
    /// weight model: `p(k | z) = p(z | k) p(k) / sum_j p(z | j) p(j)`.
    Bayes,
    /// Feature-independent assignment, as in a randomized trial.
    Constant { probs: Vec<f64> },
    /// Multinomial logistic model; row `k` holds `[intercept, slopes..]`,
    /// row 0 is the reference class.
    Logistic { coefficients: Vec<Vec<f64>> },
}

pub(crate) fn softmax_logistic(coefficients: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let eta: Vec<f64> = coefficients
        .iter()
        .map(|c| c[0] + c[1..].iter().zip(z).map(|(b, v)| b * v).sum::<f64>())
        .collect();
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = eta.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Fit a multinomial logistic propensity model by damped Newton iterations
/// with a small ridge penalty (`ridge`) on all non-reference coefficients.
pub fn fit_logistic_propensity(ds: &Dataset, ridge: f64) -> Result<PropensityModel> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = ds.decision_count();
    let p = ds.dim() + 1;
    let free = (classes - 1) * p;
    let mut coefficients = vec![vec![0.0; p]; classes];
    if free == 0 {
        return Ok(PropensityModel::Logistic { coefficients });
    }
    let design: Vec<Vec<f64>> = ds
        .records()
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.z.iter().copied()).collect())
        .collect();

    let objective = |coef: &[Vec<f64>]| -> f64 {
        let mut ll = 0.0;
        for (row, r) in design.iter().zip(ds.records()) {
            let probs = softmax_logistic(coef, &row[1..]);
            ll += probs[r.x].max(1e-300).ln();
        }
        let penalty: f64 = coef[1..].iter().flatten().map(|b| b * b).sum();
        ll - 0.5 * ridge * penalty
    };

    let mut current = objective(&coefficients);
    for _ in 0..100 {
        let mut grad = DVector::<f64>::zeros(free);
        let mut hess = DMatrix::<f64>::zeros(free, free);
        for (row, r) in design.iter().zip(ds.records()) {
            let probs = softmax_logistic(&coefficients, &row[1..]);
            for a in 1..classes {
                let target = f64::from(u8::from(r.x == a));
                for i in 0..p {
                    grad[(a - 1) * p + i] += (target - probs[a]) * row[i];
                }
                for b in 1..classes {
                    let w = probs[a] * (f64::from(u8::from(a == b)) - probs[b]);
                    for i in 0..p {
                        for j in 0..p {
                            hess[((a - 1) * p + i, (b - 1) * p + j)] += w * row[i] * row[j];
                        }
                    }
                }
            }
        }
        for a in 1..classes {
            for i in 0..p {
                let idx = (a - 1) * p + i;
                grad[idx] -= ridge * coefficients[a][i];
                hess[(idx, idx)] += ridge;
            }
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| hess.lu().solve(&grad))
            .ok_or_else(|| Error::InvalidParameter("singular logistic Hessian".into()))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = coefficients.clone();
            for a in 1..classes {
                for i in 0..p {
                    trial[a][i] += scale * step[(a - 1) * p + i];
                }
            }
            let value = objective(&trial);
            if value >= current {
                let gain = value - current;
                coefficients = trial;
                current = value;
                accepted = gain > 1e-10 * current.abs().max(1.0);
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(PropensityModel::Logistic { coefficients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CostRange, Record};
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn recovers_logistic_coefficients() {
        let mut rng = rng::stream(5, 0);
        let records = (0..4000)
            .map(|_| {
                let z: f64 = rng.random_range(-2.0..2.0);
                let p1 = 1.0 / (1.0 + (-(0.5 + 1.5 * z)).exp());
                Record {
                    x: usize::from(rng.random::<f64>() < p1),
                    y: 0.0,
                    z: vec![z],
                }
            })
            .collect();
        let ds = Dataset::new(records, 2, CostRange::new(-1.0, 1.0).unwrap()).unwrap();
        let PropensityModel::Logistic { coefficients } = fit_logistic_propensity(&ds, 1e-6).unwrap() else {
            unreachable!()
        };
        assert_eq!(coefficients[0], vec![0.0, 0.0]);
        assert!((coefficients[1][0] - 0.5).abs() < 0.15, "{coefficients:?}");
        assert!((coefficients[1][1] - 1.5).abs() < 0.2, "{coefficients:?}");
    }

    #[test]
    fn softmax_sums_to_one() {
        let c = vec![vec![0.0, 0.0], vec![1.0, -2.0], vec![-0.5, 3.0]];
        let p = softmax_logistic(&c, &[0.7]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
