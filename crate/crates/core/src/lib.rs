//! Decision policies with conformal cost certificates learned from
//! observational data.
//!
//! Given logged `(x, y, z)` triples from an unknown past policy, the library
//! fits importance weights for every decision, computes a weighted conformal
//! cost limit `y_alpha(x, z)` per decision, and picks the decision with the
//! smallest limit. The limit of the chosen decision is exceeded with
//! probability at most `alpha`.

pub mod conformal;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod weights;

pub use conformal::{conformal_limit, ConformalLimit, CostGrid, LimitConfig, SearchStrategy, TestMass};
pub use dataset::{load_dataset, CostRange, Dataset, Record};
pub use error::{Error, Result};
pub use policy::{fit_linear_baseline, linear_decide, LinearPolicy, PolicyDecision, RobustPolicy};
pub use weights::{fit_weight_model, ArmWeights, WeightFitConfig, WeightMode, WeightModel};
