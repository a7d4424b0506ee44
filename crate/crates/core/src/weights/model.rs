use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::child_seed;
use crate::weights::categorical::{fit_decision_marginal, CategoricalModel};
use crate::weights::density::{fit_feature_model, DensityModel, FeatureModelConfig};
use crate::weights::mixture::log_sum_exp;
use crate::weights::propensity::{fit_logistic_propensity, softmax_logistic, PropensityModel};

/// Log-weights more than this far below the maximum get exactly zero mass.
pub const LOG_WEIGHT_CUTOFF: f64 = 700.0;

/// Source of the unnormalized importance weights `w_k(x, z)`.
///
/// `log_weight(k, z)` is `log w_k` for a point that takes decision `k`
/// (indicator equal to one). `+inf` means arm `k` has no support at `z`.
pub trait ArmWeights {
    fn decision_count(&self) -> usize;
    fn dim(&self) -> usize;
    fn log_weight(&self, k: usize, z: &[f64]) -> f64;
}

impl<T: ArmWeights + ?Sized> ArmWeights for &T {
    fn decision_count(&self) -> usize {
        (**self).decision_count()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_weight(&self, k: usize, z: &[f64]) -> f64 {
        (**self).log_weight(k, z)
    }
}

impl<T: ArmWeights + ?Sized> ArmWeights for Box<T> {
    fn decision_count(&self) -> usize {
        (**self).decision_count()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_weight(&self, k: usize, z: &[f64]) -> f64 {
        (**self).log_weight(k, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Generative,
    Propensity,
}

/// How `fit_weight_model` obtains the propensity in propensity mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensitySource {
    Bayes,
    Logistic { ridge: f64 },
    /// Use the fitted decision marginal for every context.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFitConfig {
    pub features: FeatureModelConfig,
    pub mode: WeightMode,
    pub propensity: PropensitySource,
}

impl WeightFitConfig {
    pub fn generative(features: FeatureModelConfig) -> Self {
        Self {
            features,
            mode: WeightMode::Generative,
            propensity: PropensitySource::Bayes,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.features.em.seed = seed;
        cfg
    }
}

/// Fitted `p(x)` and `p(z | x = k)` (or a propensity model) defining `w_k`.
///
/// In generative mode `p(z)` is always the mixture `sum_j p(z | j) p(j)` of the
/// fitted components, never a separately fitted density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    marginal: CategoricalModel,
    /// `None` for decisions without training records.
    arms: Vec<Option<DensityModel>>,
    mode: WeightMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    propensity: Option<PropensityModel>,
    dim: usize,
}

impl WeightModel {
    pub fn new(
        marginal: CategoricalModel,
        arms: Vec<Option<DensityModel>>,
        mode: WeightMode,
        propensity: Option<PropensityModel>,
        dim: usize,
    ) -> Result<Self> {
        let model = Self {
            marginal,
            arms,
            mode,
            propensity,
            dim,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        if self.arms.len() != self.marginal.len() {
            return Err(Error::ModelMismatch(format!(
                "{} arm models for {} decisions",
                self.arms.len(),
                self.marginal.len()
            )));
        }
        for arm in self.arms.iter().flatten() {
            if arm.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: arm.dim(),
                });
            }
        }
        match (&self.mode, &self.propensity) {
            (WeightMode::Propensity, None) => Err(Error::ModelMismatch("propensity mode without a propensity model".into())),
            (_, Some(PropensityModel::Constant { probs })) if probs.len() != self.marginal.len() => {
                Err(Error::ModelMismatch("constant propensity has the wrong length".into()))
            }
            (_, Some(PropensityModel::Logistic { coefficients }))
                if coefficients.len() != self.marginal.len() || coefficients.iter().any(|c| c.len() != self.dim + 1) =>
            {
                Err(Error::ModelMismatch("logistic coefficients have the wrong shape".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn marginal(&self) -> &CategoricalModel {
        &self.marginal
    }

    pub fn arms(&self) -> &[Option<DensityModel>] {
        &self.arms
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn propensity_model(&self) -> Option<&PropensityModel> {
        self.propensity.as_ref()
    }

    /// Same components, switched to propensity mode with the given model.
    pub fn into_propensity(self, propensity: PropensityModel) -> Result<Self> {
        Self::new(self.marginal, self.arms, WeightMode::Propensity, Some(propensity), self.dim)
    }

    pub fn log_feature_density(&self, k: usize, z: &[f64]) -> f64 {
        match self.arms.get(k) {
            Some(Some(m)) => m.log_density_unchecked(z),
            _ => f64::NEG_INFINITY,
        }
    }

    /// `log p(z) = log sum_j p(z | j) p(j)`.
    pub fn log_mixture_density(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.arms.len())
            .filter(|&j| self.marginal.prob(j) > 0.0)
            .map(|j| self.log_feature_density(j, z) + self.marginal.prob(j).ln())
            .collect();
        log_sum_exp(&terms)
    }

    /// `p(x | z)` over all decisions.
    pub fn propensity(&self, z: &[f64]) -> Vec<f64> {
        match &self.propensity {
            Some(PropensityModel::Constant { probs }) => probs.clone(),
            Some(PropensityModel::Logistic { coefficients }) => softmax_logistic(coefficients, z),
            Some(PropensityModel::Bayes) | None => {
                let logits: Vec<f64> = (0..self.arms.len())
                    .map(|j| {
                        let pj = self.marginal.prob(j);
                        if pj > 0.0 {
                            self.log_feature_density(j, z) + pj.ln()
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return vec![0.0; logits.len()];
                }
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / total).collect()
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.check()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

impl ArmWeights for WeightModel {
    fn decision_count(&self) -> usize {
        self.marginal.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn log_weight(&self, k: usize, z: &[f64]) -> f64 {
        if self.marginal.prob(k) == 0.0 || self.arms.get(k).is_none_or(Option::is_none) {
            return f64::INFINITY;
        }
        match self.mode {
            WeightMode::Generative => {
                let own = self.log_feature_density(k, z);
                if own == f64::NEG_INFINITY {
                    return f64::INFINITY;
                }
                self.log_mixture_density(z) - own - self.marginal.prob(k).ln()
            }
            WeightMode::Propensity => {
                let p = self.propensity(z)[k];
                if p > 0.0 {
                    -p.ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Fit the decision marginal and one feature model per non-empty arm.
///
/// Arm `k` uses EM seed `child_seed(config seed, k)`.
pub fn fit_weight_model(ds: &Dataset, config: &WeightFitConfig) -> Result<WeightModel> {
    let marginal = fit_decision_marginal(ds)?;
    let mut arms = Vec::with_capacity(ds.decision_count());
    for k in 0..ds.decision_count() {
        if marginal.prob(k) == 0.0 {
            arms.push(None);
            continue;
        }
        let mut features = config.features.clone();
        features.em.seed = child_seed(config.features.em.seed, k as u64);
        arms.push(Some(fit_feature_model(ds, k, &features)?));
    }
    let propensity = match config.mode {
        WeightMode::Generative => None,
        WeightMode::Propensity => Some(match &config.propensity {
            PropensitySource::Bayes => PropensityModel::Bayes,
            PropensitySource::Logistic { ridge } => fit_logistic_propensity(ds, *ridge)?,
            PropensitySource::Constant => PropensityModel::Constant {
                probs: marginal.probs().to_vec(),
            },
        }),
    };
    WeightModel::new(marginal, arms, config.mode, propensity, ds.dim())
}

/// Normalized masses over the training points of one arm plus the test point.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmMasses {
    pub train: Vec<f64>,
    pub test: f64,
    /// Every weight underflowed or was undefined; `test` was forced to 1.
    pub degenerate: bool,
}

/// Normalize unnormalized log-weights of training points and the test point.
///
/// Works in log space with a max shift. `+inf` entries share all the mass;
/// entries below `max - LOG_WEIGHT_CUTOFF` and NaNs get exactly zero.
pub fn normalize_log_weights(train: &[f64], test: f64) -> ArmMasses {
    let clean = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let test = clean(test);
    let max = train.iter().copied().map(clean).fold(test, f64::max);
    if max == f64::NEG_INFINITY {
        return ArmMasses {
            train: vec![0.0; train.len()],
            test: 1.0,
            degenerate: true,
        };
    }
    let unnorm = |v: f64| -> f64 {
        let v = clean(v);
        if max == f64::INFINITY {
            f64::from(u8::from(v == f64::INFINITY))
        } else if v < max - LOG_WEIGHT_CUTOFF {
            0.0
        } else {
            (v - max).exp()
        }
    };
    let mut masses: Vec<f64> = train.iter().map(|&v| unnorm(v)).collect();
    let mut test_mass = unnorm(test);
    let total: f64 = masses.iter().sum::<f64>() + test_mass;
    masses.iter_mut().for_each(|m| *m /= total);
    test_mass /= total;
    ArmMasses {
        train: masses,
        test: test_mass,
        degenerate: false,
    }
}

/// Training records of one arm with their cached log-weights; the test point
/// enters only through its own weight.
#[derive(Debug, Clone)]
pub struct ArmCalibration {
    decision: usize,
    indices: Vec<usize>,
    costs: Vec<f64>,
    log_weights: Vec<f64>,
}

impl ArmCalibration {
    pub fn prepare<W: ArmWeights + ?Sized>(ds: &Dataset, weights: &W, k: usize) -> Result<Self> {
        check_compatible(ds, weights)?;
        if k >= ds.decision_count() {
            return Err(Error::DecisionOutOfRange {
                decision: k,
                decision_count: ds.decision_count(),
            });
        }
        let mut indices = Vec::new();
        let mut costs = Vec::new();
        let mut log_weights = Vec::new();
        for (i, r) in ds.records().iter().enumerate().filter(|(_, r)| r.x == k) {
            indices.push(i);
            costs.push(r.y);
            log_weights.push(weights.log_weight(k, &r.z));
        }
        Ok(Self {
            decision: k,
            indices,
            costs,
            log_weights,
        })
    }

    pub fn decision(&self) -> usize {
        self.decision
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// Dataset positions of the arm's records.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn masses<W: ArmWeights + ?Sized>(&self, weights: &W, z_test: &[f64]) -> Result<ArmMasses> {
        if z_test.len() != weights.dim() {
            return Err(Error::DimensionMismatch {
                expected: weights.dim(),
                actual: z_test.len(),
            });
        }
        let test = weights.log_weight(self.decision, z_test);
        Ok(normalize_log_weights(&self.log_weights, test))
    }
}

pub(crate) fn check_compatible<W: ArmWeights + ?Sized>(ds: &Dataset, weights: &W) -> Result<()> {
    if weights.decision_count() != ds.decision_count() {
        return Err(Error::ModelMismatch(format!(
            "weights cover {} decisions, dataset has {}",
            weights.decision_count(),
            ds.decision_count()
        )));
    }
    if weights.dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            actual: weights.dim(),
        });
    }
    Ok(())
}

/// Normalized probability weights over all `n` training points and the test
/// point hypothesized to take decision `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    /// Length `n`; exactly zero for records with `x_i != k`.
    pub train: Vec<f64>,
    pub test: f64,
    pub degenerate: bool,
}

pub fn normalized_weights<W: ArmWeights + ?Sized>(
    weights: &W,
    k: usize,
    ds: &Dataset,
    z_test: &[f64],
) -> Result<NormalizedWeights> {
    let cal = ArmCalibration::prepare(ds, weights, k)?;
    let masses = cal.masses(weights, z_test)?;
    let mut train = vec![0.0; ds.len()];
    for (&i, &m) in cal.indices.iter().zip(&masses.train) {
        train[i] = m;
    }
    Ok(NormalizedWeights {
        train,
        test: masses.test,
        degenerate: masses.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CostRange, Record};
    use crate::weights::density::ModelKind;

    fn dataset(rows: &[(usize, f64)]) -> Dataset {
        let records = rows.iter().map(|&(x, z)| Record { x, y: z, z: vec![z] }).collect();
        Dataset::new(records, 2, CostRange::new(-10.0, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn hand_evaluated_weights() {
        let m = normalize_log_weights(&[1f64.ln(), 3f64.ln()], 4f64.ln());
        assert!((m.train[0] - 0.125).abs() < 1e-15);
        assert!((m.train[1] - 0.375).abs() < 1e-15);
        assert!((m.test - 0.5).abs() < 1e-15);
        assert!(!m.degenerate);
    }

    #[test]
    fn no_arm_data_puts_all_mass_on_test() {
        let ds = dataset(&[(0, 1.0), (0, 2.0)]);
        let wm = fit_weight_model(&ds, &WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Gaussian))).unwrap();
        let w = normalized_weights(&wm, 1, &ds, &[1.5]).unwrap();
        assert_eq!(w.test, 1.0);
        assert!(w.train.iter().all(|&p| p == 0.0));
        assert!(wm.arms()[1].is_none());
    }

    #[test]
    fn underflow_everywhere_is_flagged() {
        let m = normalize_log_weights(&[f64::NEG_INFINITY, f64::NAN], f64::NEG_INFINITY);
        assert!(m.degenerate);
        assert_eq!(m.test, 1.0);
        assert_eq!(m.train, vec![0.0, 0.0]);
    }

    #[test]
    fn far_below_cutoff_gets_zero_mass() {
        let m = normalize_log_weights(&[0.0, -800.0], 0.0);
        assert_eq!(m.train[1], 0.0);
        assert_eq!(m.train[0], 0.5);
    }

    #[test]
    fn infinite_test_weight_saturates() {
        let m = normalize_log_weights(&[0.0, 1.0], f64::INFINITY);
        assert_eq!(m.test, 1.0);
        assert_eq!(m.train, vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_arms_give_uniform_masses() {
        // identical feature distributions on both arms and a uniform past policy
        let rows: Vec<(usize, f64)> = (0..6).map(|i| (i % 2, (i / 2) as f64)).collect();
        let ds = dataset(&rows);
        let wm = fit_weight_model(&ds, &WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Gaussian))).unwrap();
        let w = normalized_weights(&wm, 0, &ds, &[0.7]).unwrap();
        for (i, r) in ds.records().iter().enumerate() {
            let expected = if r.x == 0 { 0.25 } else { 0.0 };
            assert!((w.train[i] - expected).abs() < 1e-12);
        }
        assert!((w.test - 0.25).abs() < 1e-12);
    }

    #[test]
    fn propensity_mode_requires_model() {
        let ds = dataset(&[(0, 1.0), (1, 2.0)]);
        let wm = fit_weight_model(&ds, &WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Gaussian))).unwrap();
        let json = wm.to_json().unwrap().replace("\"generative\"", "\"propensity\"");
        assert!(WeightModel::from_json(&json).is_err());
    }

    #[test]
    fn json_layout() {
        let ds = dataset(&[(0, 1.0), (0, 3.0), (1, 2.0)]);
        let wm = fit_weight_model(&ds, &WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Gaussian))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&wm.to_json().unwrap()).unwrap();
        assert_eq!(v["mode"], "generative");
        assert_eq!(v["marginal"].as_array().unwrap().len(), 2);
        assert_eq!(v["arms"][0]["kind"], "gaussian");
        assert_eq!(WeightModel::from_json(&wm.to_json().unwrap()).unwrap(), wm);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let ds = dataset(&[(0, 1.0), (1, 2.0)]);
        let wm = fit_weight_model(&ds, &WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Gaussian))).unwrap();
        assert!(matches!(
            normalized_weights(&wm, 0, &ds, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
