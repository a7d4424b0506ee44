//! IHDP-style response surfaces over 25-dimensional covariates.
//!
//! Costs follow
//!
//! ```text
//! y | x = 0 ~ N(-exp((z + 0.5) . beta), sigma_0)
//! y | x = 1 ~ N(-z . beta - omega,      sigma_1)
//! ```
//!
//! with `beta` drawn coordinate-wise from `{0, .1, .2, .3, .4}` and `omega`
//! chosen so that, averaged over treated units, treatment lowers the mean cost
//! by the configured effect. The past policy is a randomized trial. Surrogate
//! covariates are standard Gaussians standardized per column; real covariates
//! can be supplied through [`simulate_ihdp_outcomes`].

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CostRange, Dataset, Record};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpStyleConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub raw_dim: usize,
    pub sigma_untreated: f64,
    pub sigma_treated: f64,
    pub beta_values: Vec<f64>,
    pub beta_probs: Vec<f64>,
    /// Mean cost reduction from treatment among the treated.
    pub treated_effect: f64,
    /// Assignment probability of the randomized past policy.
    pub treated_fraction: f64,
    pub seed: u64,
}

impl Default for IhdpStyleConfig {
    fn default() -> Self {
        Self {
            n_train: 600,
            n_test: 147,
            raw_dim: 25,
            sigma_untreated: 5.0,
            sigma_treated: 1.0,
            beta_values: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            beta_probs: vec![0.6, 0.1, 0.1, 0.1, 0.1],
            treated_effect: 2.0,
            treated_fraction: 0.186,
            seed: 0,
        }
    }
}

impl IhdpStyleConfig {
    fn check(&self) -> Result<()> {
        let total: f64 = self.beta_probs.iter().sum();
        if self.beta_values.len() != self.beta_probs.len() || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("beta probabilities must sum to 1".into()));
        }
        if self.n_train == 0 || self.raw_dim == 0 {
            return Err(Error::InvalidParameter("dimensions must be positive".into()));
        }
        if !(self.sigma_treated >= 0.0 && self.sigma_untreated >= 0.0) {
            return Err(Error::InvalidParameter("noise levels must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.treated_fraction) {
            return Err(Error::InvalidParameter("treated fraction must be a probability".into()));
        }
        Ok(())
    }
}

/// Ground truth needed to draw interventional outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpTruth {
    pub beta: Vec<f64>,
    pub omega: f64,
    pub sigma_untreated: f64,
    pub sigma_treated: f64,
    pub treated_fraction: f64,
}

impl IhdpTruth {
    pub fn mean_cost(&self, x: usize, raw: &[f64]) -> f64 {
        if x == 1 {
            -dot(raw, &self.beta) - self.omega
        } else {
            -raw.iter().zip(&self.beta).map(|(z, b)| (z + 0.5) * b).sum::<f64>().exp()
        }
    }

    pub fn outcome(&self, x: usize, raw: &[f64], rng: &mut Rng) -> f64 {
        let sd = if x == 1 { self.sigma_treated } else { self.sigma_untreated };
        let noise = if sd > 0.0 {
            Normal::new(0.0, sd).expect("valid sd").sample(rng)
        } else {
            0.0
        };
        self.mean_cost(x, raw) + noise
    }

    pub fn past_decision(&self, rng: &mut Rng) -> usize {
        usize::from(rng.random::<f64>() < self.treated_fraction)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct IhdpStyleData {
    /// Training records over the raw covariates.
    pub train: Dataset,
    pub test_covariates: Vec<Vec<f64>>,
    pub test_decisions: Vec<usize>,
    pub truth: IhdpTruth,
}

pub fn sample_beta(cfg: &IhdpStyleConfig, rng: &mut Rng) -> Vec<f64> {
    (0..cfg.raw_dim)
        .map(|_| {
            let mut u: f64 = rng.random();
            for (v, p) in cfg.beta_values.iter().zip(&cfg.beta_probs) {
                if u < *p {
                    return *v;
                }
                u -= p;
            }
            *cfg.beta_values.last().expect("non-empty support")
        })
        .collect()
}

/// Standard-Gaussian covariates standardized to zero mean and unit sd per column.
pub fn surrogate_covariates(count: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    standardize_columns(&mut rows);
    rows
}

pub fn standardize_columns(rows: &mut [Vec<f64>]) {
    let n = rows.len() as f64;
    let dim = rows.first().map_or(0, Vec::len);
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in rows.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

/// Cost range used for the grid: observed extremes widened by three noise sds.
pub fn cost_range_for(costs: &[f64], sigma_untreated: f64, sigma_treated: f64) -> CostRange {
    let pad = 3.0 * sigma_untreated.max(sigma_treated).max(1e-6);
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min) - pad;
    let hi = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad;
    CostRange::new(lo, hi).expect("finite costs")
}

/// Simulate outcomes on the given covariates (all units), then split into
/// training and test sets. `decisions = None` draws the randomized policy.
pub fn simulate_ihdp_outcomes(
    cfg: &IhdpStyleConfig,
    mut covariates: Vec<Vec<f64>>,
    decisions: Option<Vec<usize>>,
) -> Result<IhdpStyleData> {
    cfg.check()?;
    let total = cfg.n_train + cfg.n_test;
    if covariates.len() != total {
        return Err(Error::InvalidParameter(format!(
            "need {total} covariate rows, got {}",
            covariates.len()
        )));
    }
    if let Some(bad) = covariates.iter().find(|r| r.len() != cfg.raw_dim) {
        return Err(Error::DimensionMismatch {
            expected: cfg.raw_dim,
            actual: bad.len(),
        });
    }
    let mut rng = rng::stream(cfg.seed, 1);
    let beta = sample_beta(cfg, &mut rng);
    let mut decisions = decisions.unwrap_or_else(|| {
        (0..total)
            .map(|_| usize::from(rng.random::<f64>() < cfg.treated_fraction))
            .collect()
    });
    if decisions.len() != total {
        return Err(Error::InvalidParameter("one decision per covariate row required".into()));
    }
    let treated: Vec<&Vec<f64>> = covariates.iter().zip(&decisions).filter(|(_, &x)| x == 1).map(|(z, _)| z).collect();
    // mean over treated of mu_1 - mu_0 = exp((z + .5) . beta) - z . beta - omega = -effect
    let gap = if treated.is_empty() {
        0.0
    } else {
        treated
            .iter()
            .map(|z| z.iter().zip(&beta).map(|(v, b)| (v + 0.5) * b).sum::<f64>().exp() - dot(z, &beta))
            .sum::<f64>()
            / treated.len() as f64
    };
    let truth = IhdpTruth {
        beta,
        omega: gap + cfg.treated_effect,
        sigma_untreated: cfg.sigma_untreated,
        sigma_treated: cfg.sigma_treated,
        treated_fraction: cfg.treated_fraction,
    };

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let mut train_records = Vec::with_capacity(cfg.n_train);
    let mut test_covariates = Vec::with_capacity(cfg.n_test);
    let mut test_decisions = Vec::with_capacity(cfg.n_test);
    for (pos, &i) in order.iter().enumerate() {
        let z = std::mem::take(&mut covariates[i]);
        let x = std::mem::take(&mut decisions[i]);
        if pos < cfg.n_train {
            let y = truth.outcome(x, &z, &mut rng);
            train_records.push(Record { x, y, z });
        } else {
            test_covariates.push(z);
            test_decisions.push(x);
        }
    }
    let costs: Vec<f64> = train_records.iter().map(|r| r.y).collect();
    let range = cost_range_for(&costs, cfg.sigma_untreated, cfg.sigma_treated);
    let train = Dataset::with_dim(train_records, cfg.raw_dim, 2, range)?;
    Ok(IhdpStyleData {
        train,
        test_covariates,
        test_decisions,
        truth,
    })
}

pub fn generate_ihdp_style(cfg: &IhdpStyleConfig) -> Result<IhdpStyleData> {
    let mut rng = rng::stream(cfg.seed, 0);
    let covariates = surrogate_covariates(cfg.n_train + cfg.n_test, cfg.raw_dim, &mut rng);
    simulate_ihdp_outcomes(cfg, covariates, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_counts() {
        let data = generate_ihdp_style(&IhdpStyleConfig::default()).unwrap();
        assert_eq!(data.train.len(), 600);
        assert_eq!(data.test_covariates.len(), 147);
        assert_eq!(data.train.dim(), 25);
    }

    #[test]
    fn omega_forces_treated_effect() {
        let cfg = IhdpStyleConfig {
            sigma_treated: 0.0,
            sigma_untreated: 0.0,
            seed: 12,
            ..Default::default()
        };
        let mut rng = rng::stream(cfg.seed, 0);
        let covs = surrogate_covariates(747, 25, &mut rng);
        let data = simulate_ihdp_outcomes(&cfg, covs.clone(), None).unwrap();
        // recover all treated units from the regenerated decisions
        let mut rng = rng::stream(cfg.seed, 1);
        let _ = sample_beta(&cfg, &mut rng);
        let decisions: Vec<usize> = (0..747).map(|_| usize::from(rng.random::<f64>() < cfg.treated_fraction)).collect();
        let diffs: Vec<f64> = covs
            .iter()
            .zip(&decisions)
            .filter(|(_, &x)| x == 1)
            .map(|(z, _)| data.truth.mean_cost(1, z) - data.truth.mean_cost(0, z))
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!((mean + 2.0).abs() < 1e-9, "{mean}");
    }

    #[test]
    fn standardized_surrogates() {
        let mut rng = rng::stream(1, 0);
        let rows = surrogate_covariates(300, 5, &mut rng);
        for j in 0..5 {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / 300.0;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 300.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_support() {
        let cfg = IhdpStyleConfig::default();
        let mut rng = rng::stream(3, 0);
        for _ in 0..20 {
            for b in sample_beta(&cfg, &mut rng) {
                assert!(cfg.beta_values.contains(&b));
            }
        }
    }

    #[test]
    fn rejects_bad_beta_law() {
        let cfg = IhdpStyleConfig {
            beta_probs: vec![0.5, 0.1, 0.1, 0.1, 0.1],
            ..Default::default()
        };
        assert!(generate_ihdp_style(&cfg).is_err());
    }
}
