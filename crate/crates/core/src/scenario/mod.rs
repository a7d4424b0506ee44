//! Data-generating processes used for training sets and for evaluation.

mod ihdp;
mod reducer;
mod synthetic;

pub use ihdp::{
    cost_range_for, generate_ihdp_style, sample_beta, simulate_ihdp_outcomes, standardize_columns,
    surrogate_covariates, IhdpStyleConfig, IhdpStyleData, IhdpTruth,
};
pub use reducer::{apply_reducer, fit_reducer, Reducer};
pub use synthetic::{
    cost_range, mean_cost, sample_synthetic, synthetic_outcome, treatment_probability, SyntheticConfig,
    SyntheticSample, SyntheticScenario, TruePastPolicyWeights, AGE_MEAN_FEMALE, AGE_MEAN_MALE, AGE_SD, COST_HI,
    COST_LO,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Record};
use crate::error::Result;
use crate::eval::{Context, Environment, Instance, Scenario};
use crate::rng::Rng;
use crate::weights::{FeatureModelConfig, ModelKind, WeightFitConfig};

/// Single Gaussian per decision over `[age, gender]` (deliberately misspecified).
pub fn synthetic_gaussian_weights() -> WeightFitConfig {
    WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Gaussian))
}

/// Bernoulli gender times a gender-conditional Gaussian age model.
pub fn synthetic_product_weights() -> WeightFitConfig {
    WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Product {
        binary_coords: vec![1],
        continuous: Box::new(ModelKind::Gaussian),
        conditional: true,
    }))
}

/// Four-component Gaussian mixture per decision over the reduced features.
pub fn ihdp_mixture_weights() -> WeightFitConfig {
    WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Mixture { components: 4 }))
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticEnv {
    pub scenario: SyntheticScenario,
}

impl Environment for SyntheticEnv {
    fn draw_context(&self, rng: &mut Rng) -> Context {
        Context::plain(self.scenario.sample_context(rng))
    }

    fn outcome(&self, x: usize, ctx: &Context, rng: &mut Rng) -> f64 {
        self.scenario.observed_outcome(x, &ctx.features, rng)
    }

    fn past_decision(&self, ctx: &Context, rng: &mut Rng) -> usize {
        self.scenario.past_decision(&ctx.features, rng)
    }
}

/// Training sets of size `n` from the synthetic scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSetup {
    pub n: usize,
    pub scenario: SyntheticScenario,
}

impl SyntheticSetup {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            scenario: SyntheticScenario::default(),
        }
    }
}

impl Scenario for SyntheticSetup {
    type Env = SyntheticEnv;

    fn instantiate(&self, seed: u64) -> Result<Instance<SyntheticEnv>> {
        let sample = sample_synthetic(&SyntheticConfig {
            n: self.n,
            seed,
            scenario: self.scenario,
        });
        Ok(Instance {
            train: sample.dataset,
            env: SyntheticEnv {
                scenario: self.scenario,
            },
        })
    }
}

/// Held-out IHDP-style contexts with their reduced features.
#[derive(Debug, Clone)]
pub struct IhdpEnv {
    pub truth: IhdpTruth,
    pub reducer: Reducer,
    pub test_covariates: Vec<Vec<f64>>,
}

impl Environment for IhdpEnv {
    /// Uniform draw from the held-out covariates.
    fn draw_context(&self, rng: &mut Rng) -> Context {
        let raw = self.test_covariates[rng.random_range(0..self.test_covariates.len())].clone();
        Context {
            features: self.reducer.apply(&raw),
            raw: Some(raw),
        }
    }

    fn outcome(&self, x: usize, ctx: &Context, rng: &mut Rng) -> f64 {
        self.truth.outcome(x, ctx.raw_or_features(), rng)
    }

    fn past_decision(&self, _ctx: &Context, rng: &mut Rng) -> usize {
        self.truth.past_decision(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpSetup {
    pub config: IhdpStyleConfig,
    pub reduced_dim: usize,
}

impl IhdpSetup {
    pub fn new(sigma_untreated: f64, sigma_treated: f64) -> Self {
        Self {
            config: IhdpStyleConfig {
                sigma_untreated,
                sigma_treated,
                ..Default::default()
            },
            reduced_dim: 4,
        }
    }
}

/// Replace raw covariates by their reduced features.
pub fn reduce_dataset(ds: &Dataset, reducer: &Reducer) -> Result<Dataset> {
    let records = ds
        .records()
        .iter()
        .map(|r| Record {
            x: r.x,
            y: r.y,
            z: reducer.apply(&r.z),
        })
        .collect();
    Dataset::with_dim(records, reducer.out_dim(), ds.decision_count(), ds.cost_range())
}

impl Scenario for IhdpSetup {
    type Env = IhdpEnv;

    /// Fresh covariates, coefficients and split; the reducer is fit on the
    /// training covariates only.
    fn instantiate(&self, seed: u64) -> Result<Instance<IhdpEnv>> {
        let cfg = IhdpStyleConfig {
            seed,
            ..self.config.clone()
        };
        let data = generate_ihdp_style(&cfg)?;
        let raw: Vec<Vec<f64>> = data.train.records().iter().map(|r| r.z.clone()).collect();
        let reducer = fit_reducer(&raw, self.reduced_dim)?;
        let train = reduce_dataset(&data.train, &reducer)?;
        Ok(Instance {
            train,
            env: IhdpEnv {
                truth: data.truth,
                reducer,
                test_covariates: data.test_covariates,
            },
        })
    }
}
