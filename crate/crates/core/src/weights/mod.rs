//! Importance weights `w_k(x, z) = 1{x = k} p(z) / (p(z | x) p(x))` learned
//! without supervision from the logged features and decisions.

mod categorical;
mod density;
mod gaussian;
mod mixture;
mod model;
mod propensity;

pub use categorical::{fit_decision_marginal, CategoricalModel};
pub use density::{fit_feature_model, Bernoulli, DensityModel, FeatureModelConfig, ModelKind, ProductModel, Stratum};
pub use gaussian::Gaussian;
pub use mixture::{EmFit, EmSettings, GaussianMixture};
pub use model::{
    fit_weight_model, normalize_log_weights, normalized_weights, ArmCalibration, ArmMasses, ArmWeights,
    NormalizedWeights, PropensitySource, WeightFitConfig, WeightMode, WeightModel, LOG_WEIGHT_CUTOFF,
};
pub use propensity::{fit_logistic_propensity, PropensityModel};

/// `log p(z | x = k)`; dimension-checked.
pub fn log_density(model: &DensityModel, z: &[f64]) -> crate::Result<f64> {
    model.log_density(z)
}
