use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Empirical distribution of past decisions, `p(x = k) = count_k / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoricalModel {
    probs: Vec<f64>,
}

impl CategoricalModel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("not a probability vector: {probs:?}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn fit_decision_marginal(ds: &Dataset) -> Result<CategoricalModel> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ds.len() as f64;
    let probs = ds.arm_counts().into_iter().map(|c| c as f64 / n).collect();
    Ok(CategoricalModel { probs })
}
