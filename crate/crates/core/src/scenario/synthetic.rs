//! Synthetic blood-pressure scenario.
//!
//! Features are `z = [age, gender]` with gender 1 for females. Ages are
//! `N(30, 5)` for females and `N(45, 5)` for males, genders are fair coin
//! flips. The past policy treats with probability
//!
//! ```text
//! p(x = 1 | z) = z2 * 0.95 * f(-(z1 - 20) / 6) + (1 - z2) * 0.20 * f(-(z1 - 45) / 2)
//! ```
//!
//! with `f` the logistic sigmoid, and the blood-pressure change is
//! `N(z1 - 45, 0.2)` when treated and `N(z1 - 46, 20)` when not. The second
//! Normal parameter is a standard deviation throughout.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CostRange, Dataset, Record};
use crate::rng::{self, Rng};
use crate::weights::ArmWeights;

pub const AGE_MEAN_FEMALE: f64 = 30.0;
pub const AGE_MEAN_MALE: f64 = 45.0;
pub const AGE_SD: f64 = 5.0;
pub const COST_LO: f64 = -30.0;
pub const COST_HI: f64 = 30.0;

pub fn cost_range() -> CostRange {
    CostRange::new(COST_LO, COST_HI).expect("static range")
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub sigma_treated: f64,
    pub sigma_untreated: f64,
    /// Clip costs to `[-30, 30]` (counted in [`SyntheticSample::clipped`]).
    pub clip: bool,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            sigma_treated: 0.2,
            sigma_untreated: 20.0,
            clip: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub seed: u64,
    pub scenario: SyntheticScenario,
}

impl SyntheticConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            scenario: SyntheticScenario::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub dataset: Dataset,
    /// Number of costs that were clipped into the range.
    pub clipped: usize,
}

/// Treatment probability of the past policy.
pub fn treatment_probability(z: &[f64]) -> f64 {
    let (age, female) = (z[0], z[1]);
    female * 0.95 * sigmoid(-(age - 20.0) / 6.0) + (1.0 - female) * 0.20 * sigmoid(-(age - 45.0) / 2.0)
}

pub fn mean_cost(x: usize, z: &[f64]) -> f64 {
    if x == 1 {
        z[0] - 45.0
    } else {
        z[0] - 46.0
    }
}

impl SyntheticScenario {
    pub fn sample_context(&self, rng: &mut Rng) -> Vec<f64> {
        let female = rng.random_bool(0.5);
        let mean = if female { AGE_MEAN_FEMALE } else { AGE_MEAN_MALE };
        let age = Normal::new(mean, AGE_SD).expect("valid sd").sample(rng);
        vec![age, f64::from(u8::from(female))]
    }

    pub fn past_decision(&self, z: &[f64], rng: &mut Rng) -> usize {
        usize::from(rng.random::<f64>() < treatment_probability(z))
    }

    pub fn sigma(&self, x: usize) -> f64 {
        if x == 1 {
            self.sigma_treated
        } else {
            self.sigma_untreated
        }
    }

    /// One unclipped draw from `p(y | x, z)`.
    pub fn outcome(&self, x: usize, z: &[f64], rng: &mut Rng) -> f64 {
        let sd = self.sigma(x);
        let noise: f64 = if sd > 0.0 {
            Normal::new(0.0, sd).expect("valid sd").sample(rng)
        } else {
            0.0
        };
        mean_cost(x, z) + noise
    }

    /// Outcome as it appears in data: clipped when `clip` is set.
    pub fn observed_outcome(&self, x: usize, z: &[f64], rng: &mut Rng) -> f64 {
        let y = self.outcome(x, z, rng);
        if self.clip {
            y.clamp(COST_LO, COST_HI)
        } else {
            y
        }
    }

    pub fn cost_range(&self, observed: &[f64]) -> CostRange {
        if self.clip {
            return cost_range();
        }
        let lo = observed.iter().copied().fold(COST_LO, f64::min);
        let hi = observed.iter().copied().fold(COST_HI, f64::max);
        CostRange::new(lo, hi).expect("finite observed costs")
    }
}

/// Draw the interventional outcome with the default scenario noise levels.
pub fn synthetic_outcome(x: usize, z: &[f64], rng: &mut Rng) -> f64 {
    SyntheticScenario::default().outcome(x, z, rng)
}

/// `n` i.i.d. training records; deterministic given the seed.
pub fn sample_synthetic(cfg: &SyntheticConfig) -> SyntheticSample {
    let mut rng = rng::stream(cfg.seed, 0);
    let sc = &cfg.scenario;
    let mut clipped = 0;
    let mut records = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let z = sc.sample_context(&mut rng);
        let x = sc.past_decision(&z, &mut rng);
        let raw = sc.outcome(x, &z, &mut rng);
        let y = if sc.clip { raw.clamp(COST_LO, COST_HI) } else { raw };
        if y != raw {
            clipped += 1;
        }
        records.push(Record { x, y, z });
    }
    let costs: Vec<f64> = records.iter().map(|r| r.y).collect();
    let range = sc.cost_range(&costs);
    let dataset = Dataset::with_dim(records, 2, 2, range).expect("generated records are well-formed");
    SyntheticSample { dataset, clipped }
}

/// Weights from the true past policy: `w_k(z) = 1 / p(x = k | z)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruePastPolicyWeights;

impl ArmWeights for TruePastPolicyWeights {
    fn decision_count(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        2
    }

    fn log_weight(&self, k: usize, z: &[f64]) -> f64 {
        let p1 = treatment_probability(z);
        let p = if k == 1 { p1 } else { 1.0 - p1 };
        if p > 0.0 {
            -p.ln()
        } else {
            f64::INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_treated_outcome() {
        let sc = SyntheticScenario {
            sigma_treated: 0.0,
            ..Default::default()
        };
        let mut rng = rng::stream(1, 0);
        assert_eq!(sc.outcome(1, &[47.0, 0.0], &mut rng), 2.0);
    }

    #[test]
    fn treatment_effect_on_the_mean_is_one() {
        for age in [20.0, 33.3, 45.0, 61.0] {
            for g in [0.0, 1.0] {
                assert_eq!(mean_cost(1, &[age, g]) - mean_cost(0, &[age, g]), 1.0);
            }
        }
    }

    #[test]
    fn policy_at_reference_ages() {
        assert!((treatment_probability(&[45.0, 0.0]) - 0.10).abs() < 1e-15);
        assert!((treatment_probability(&[20.0, 1.0]) - 0.475).abs() < 1e-15);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_synthetic(&SyntheticConfig::new(50, 3));
        let b = sample_synthetic(&SyntheticConfig::new(50, 3));
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, sample_synthetic(&SyntheticConfig::new(50, 4)).dataset);
    }

    #[test]
    fn arm_counts_sum_to_n() {
        let s = sample_synthetic(&SyntheticConfig::new(200, 8));
        let report = crate::dataset::validate_dataset(&s.dataset, cost_range());
        assert_eq!(report.arm_counts.iter().sum::<usize>(), 200);
        assert!(report.is_clean());
    }
}
