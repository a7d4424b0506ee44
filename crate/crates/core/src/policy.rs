//! Decision rules: the robust minimum-limit policy and the mean-optimal
//! linear baseline.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::conformal::{limit_from_masses, ConformalLimit, LimitConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::weights::{ArmCalibration, ArmWeights};

/// Ridge added when a per-arm design matrix is singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub decision: usize,
    /// Limit of the chosen decision.
    pub certificate: f64,
    pub per_arm_limits: Vec<ConformalLimit>,
    /// More than one arm was within one grid step of the minimum.
    pub tied: bool,
}

/// Chooses the decision with the smallest conformal cost limit.
///
/// Limits within one grid step of the minimum count as tied; ties are broken
/// uniformly at random with a generator split from `seed` and the context
/// index, so decisions are reproducible.
#[derive(Debug, Clone)]
pub struct RobustPolicy<W> {
    weights: W,
    arms: Vec<ArmCalibration>,
    config: LimitConfig,
    seed: u64,
}

impl<W: ArmWeights> RobustPolicy<W> {
    pub fn new(ds: &Dataset, weights: W, config: LimitConfig, seed: u64) -> Result<Self> {
        config.check()?;
        let arms = (0..ds.decision_count())
            .map(|k| ArmCalibration::prepare(ds, &weights, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights,
            arms,
            config,
            seed,
        })
    }

    pub fn config(&self) -> &LimitConfig {
        &self.config
    }

    pub fn weights(&self) -> &W {
        &self.weights
    }

    pub fn decision_count(&self) -> usize {
        self.arms.len()
    }

    pub fn limits(&self, z: &[f64], config: &LimitConfig) -> Result<Vec<ConformalLimit>> {
        self.arms
            .iter()
            .map(|cal| {
                let masses = cal.masses(&self.weights, z)?;
                Ok(limit_from_masses(cal.costs(), &masses, config))
            })
            .collect()
    }

    pub fn decide(&self, z: &[f64]) -> Result<PolicyDecision> {
        self.decide_indexed(z, 0)
    }

    /// Decision for the `index`-th context of a batch.
    pub fn decide_indexed(&self, z: &[f64], index: u64) -> Result<PolicyDecision> {
        self.decide_with(z, index, &self.config)
    }

    /// Decision at a different miscoverage level, reusing the cached weights.
    pub fn decide_at_alpha(&self, z: &[f64], index: u64, alpha: f64) -> Result<PolicyDecision> {
        let config = self.config.with_alpha(alpha);
        config.check()?;
        self.decide_with(z, index, &config)
    }

    fn decide_with(&self, z: &[f64], index: u64, config: &LimitConfig) -> Result<PolicyDecision> {
        let limits = self.limits(z, config)?;
        let values: Vec<f64> = limits.iter().map(|l| l.value).collect();
        let (decision, tied) = break_ties(&values, config.grid.step(), self.seed, index);
        Ok(PolicyDecision {
            decision,
            certificate: limits[decision].value,
            per_arm_limits: limits,
            tied,
        })
    }
}

/// Uniform choice among values within `tolerance` of the minimum.
fn break_ties(values: &[f64], tolerance: f64, seed: u64, index: u64) -> (usize, bool) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = tolerance * (1.0 + 1e-9);
    let candidates: Vec<usize> = (0..values.len()).filter(|&k| values[k] - min <= slack).collect();
    if candidates.len() == 1 {
        return (candidates[0], false);
    }
    let mut rng = rng::stream(seed, index);
    (candidates[rng.random_range(0..candidates.len())], true)
}

/// Per-arm least-squares fits of cost on `(1, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    /// `[intercept, slopes..]` per decision; `None` for arms without records.
    pub coefficients: Vec<Option<Vec<f64>>>,
}

impl LinearPolicy {
    pub fn predict(&self, k: usize, z: &[f64]) -> Option<f64> {
        self.coefficients
            .get(k)?
            .as_ref()
            .map(|c| c[0] + c[1..].iter().zip(z).map(|(b, v)| b * v).sum::<f64>())
    }
}

pub fn fit_linear_baseline(ds: &Dataset) -> Result<LinearPolicy> {
    let p = ds.dim() + 1;
    let mut coefficients = Vec::with_capacity(ds.decision_count());
    for k in 0..ds.decision_count() {
        let rows: Vec<_> = ds.arm(k).collect();
        if rows.is_empty() {
            coefficients.push(None);
            continue;
        }
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        for r in &rows {
            let x: Vec<f64> = std::iter::once(1.0).chain(r.z.iter().copied()).collect();
            for i in 0..p {
                rhs[i] += x[i] * r.y;
                for j in 0..p {
                    gram[(i, j)] += x[i] * x[j];
                }
            }
        }
        let solve = |g: DMatrix<f64>| g.cholesky().map(|c| c.solve(&rhs));
        let full_rank = rows.len() >= p && gram.clone().svd(false, false).rank(1e-10 * gram.norm().max(1.0)) == p;
        let beta = if full_rank { solve(gram.clone()) } else { None };
        let beta = match beta {
            Some(b) => b,
            None => {
                let mut ridged = gram;
                for i in 0..p {
                    ridged[(i, i)] += RIDGE_FALLBACK;
                }
                solve(ridged).ok_or_else(|| Error::InvalidParameter(format!("arm {k}: singular design")))?
            }
        };
        coefficients.push(Some(beta.iter().copied().collect()));
    }
    if coefficients.iter().all(Option::is_none) {
        return Err(Error::EmptyDataset);
    }
    Ok(LinearPolicy { coefficients })
}

/// Arm with the smallest predicted cost; ties go to the smallest id.
pub fn linear_decide(lp: &LinearPolicy, z: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for k in 0..lp.coefficients.len() {
        if let Some(pred) = lp.predict(k, z) {
            if pred < best.1 {
                best = (k, pred);
            }
        }
    }
    best.0
}
