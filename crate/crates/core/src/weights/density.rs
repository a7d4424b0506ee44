//! Per-decision feature densities `p(z | x = k)`.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::child_seed;
use crate::weights::gaussian::Gaussian;
use crate::weights::mixture::{EmSettings, GaussianMixture};

/// Independent Bernoulli coordinates; every value must be 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bernoulli {
    pub probs: Vec<f64>,
}

impl Bernoulli {
    pub fn fit(points: &[&[f64]]) -> Result<Self> {
        let d = points.first().map(|p| p.len()).ok_or(Error::EmptyDataset)?;
        let mut ones = vec![0usize; d];
        for p in points {
            for (j, &v) in p.iter().enumerate() {
                match binary_value(v) {
                    Some(true) => ones[j] += 1,
                    Some(false) => {}
                    None => return Err(Error::NonBinary { coord: j, value: v }),
                }
            }
        }
        let n = points.len() as f64;
        Ok(Self {
            probs: ones.into_iter().map(|c| c as f64 / n).collect(),
        })
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        self.probs
            .iter()
            .zip(z)
            .map(|(&p, &v)| match binary_value(v) {
                Some(true) => p.ln(),
                Some(false) => (1.0 - p).ln(),
                None => f64::NEG_INFINITY,
            })
            .sum()
    }
}

fn binary_value(v: f64) -> Option<bool> {
    if v == 1.0 {
        Some(true)
    } else if v == 0.0 {
        Some(false)
    } else {
        None
    }
}

/// Continuous density for the records sharing one pattern of binary values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub pattern: Vec<u8>,
    pub model: DensityModel,
}

/// `p(z) = p(z_b) * p(z_c | z_b)` over a declared split into binary
/// coordinates `z_b` and continuous coordinates `z_c`.
///
/// With `conditional = true` the continuous part is fitted separately for each
/// observed binary pattern; `pooled` (the unconditional fit) covers patterns
/// that the Bernoulli part allows but no record exhibited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductModel {
    pub binary_coords: Vec<usize>,
    pub continuous_coords: Vec<usize>,
    pub binary: Bernoulli,
    pub conditional: bool,
    pub strata: Vec<Stratum>,
    pub pooled: Option<Box<DensityModel>>,
}

impl ProductModel {
    fn log_density(&self, z: &[f64]) -> f64 {
        let zb: Vec<f64> = self.binary_coords.iter().map(|&j| z[j]).collect();
        let mut lp = self.binary.log_density(&zb);
        if self.continuous_coords.is_empty() || lp == f64::NEG_INFINITY {
            return lp;
        }
        let zc: Vec<f64> = self.continuous_coords.iter().map(|&j| z[j]).collect();
        let continuous = if self.conditional {
            let pattern = pattern_of(&zb);
            self.strata
                .iter()
                .find(|s| s.pattern == pattern)
                .map(|s| &s.model)
                .or(self.pooled.as_deref())
        } else {
            self.pooled.as_deref()
        };
        lp += continuous.map_or(f64::NEG_INFINITY, |m| m.log_density_unchecked(&zc));
        lp
    }
}

fn pattern_of(zb: &[f64]) -> Vec<u8> {
    zb.iter().map(|&v| u8::from(v == 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityModel {
    Gaussian(Gaussian),
    Mixture(GaussianMixture),
    Bernoulli(Bernoulli),
    Product(ProductModel),
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Gaussian(g) => g.dim(),
            DensityModel::Mixture(m) => m.dim(),
            DensityModel::Bernoulli(b) => b.probs.len(),
            DensityModel::Product(p) => p.binary_coords.len() + p.continuous_coords.len(),
        }
    }

    /// Natural-log density, `-inf` where the model assigns zero density.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(self.log_density_unchecked(z))
    }

    pub(crate) fn log_density_unchecked(&self, z: &[f64]) -> f64 {
        match self {
            DensityModel::Gaussian(g) => g.log_density(z),
            DensityModel::Mixture(m) => m.log_density(z),
            DensityModel::Bernoulli(b) => b.log_density(z),
            DensityModel::Product(p) => p.log_density(z),
        }
    }
}

/// Which family to fit for `p(z | x = k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Gaussian,
    Mixture {
        components: usize,
    },
    Bernoulli,
    Product {
        binary_coords: Vec<usize>,
        continuous: Box<ModelKind>,
        conditional: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModelConfig {
    pub kind: ModelKind,
    pub em: EmSettings,
}

impl FeatureModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            em: EmSettings::default(),
        }
    }
}

/// Fit `p(z | x = k)` on the records of arm `k`.
pub fn fit_feature_model(ds: &Dataset, k: usize, config: &FeatureModelConfig) -> Result<DensityModel> {
    if k >= ds.decision_count() {
        return Err(Error::DecisionOutOfRange {
            decision: k,
            decision_count: ds.decision_count(),
        });
    }
    let points: Vec<&[f64]> = ds.arm(k).map(|r| r.z.as_slice()).collect();
    if points.is_empty() {
        return Err(Error::EmptyArm(k));
    }
    fit_points(&points, &config.kind, &config.em)
}

fn fit_points(points: &[&[f64]], kind: &ModelKind, em: &EmSettings) -> Result<DensityModel> {
    match kind {
        ModelKind::Gaussian => Ok(DensityModel::Gaussian(Gaussian::fit(points, em.covariance_floor)?)),
        ModelKind::Mixture { components } => {
            let fit = GaussianMixture::fit(points, *components, em)?;
            Ok(DensityModel::Mixture(fit.model))
        }
        ModelKind::Bernoulli => Ok(DensityModel::Bernoulli(Bernoulli::fit(points)?)),
        ModelKind::Product {
            binary_coords,
            continuous,
            conditional,
        } => fit_product(points, binary_coords, continuous, *conditional, em),
    }
}

fn fit_product(
    points: &[&[f64]],
    binary_coords: &[usize],
    continuous: &ModelKind,
    conditional: bool,
    em: &EmSettings,
) -> Result<DensityModel> {
    let d = points[0].len();
    if let Some(&bad) = binary_coords.iter().find(|&&j| j >= d) {
        return Err(Error::InvalidParameter(format!("binary coordinate {bad} >= dimension {d}")));
    }
    let continuous_coords: Vec<usize> = (0..d).filter(|j| !binary_coords.contains(j)).collect();
    let select = |p: &[f64], coords: &[usize]| coords.iter().map(|&j| p[j]).collect::<Vec<f64>>();
    let zb: Vec<Vec<f64>> = points.iter().map(|p| select(p, binary_coords)).collect();
    let binary = if binary_coords.is_empty() {
        Bernoulli { probs: vec![] }
    } else {
        let refs: Vec<&[f64]> = zb.iter().map(|v| v.as_slice()).collect();
        Bernoulli::fit(&refs).map_err(|e| match e {
            Error::NonBinary { coord, value } => Error::NonBinary {
                coord: binary_coords[coord],
                value,
            },
            other => other,
        })?
    };
    let mut strata = Vec::new();
    let mut pooled = None;
    if !continuous_coords.is_empty() {
        let zc: Vec<Vec<f64>> = points.iter().map(|p| select(p, &continuous_coords)).collect();
        let all: Vec<&[f64]> = zc.iter().map(|v| v.as_slice()).collect();
        pooled = Some(Box::new(fit_points(&all, &shrink(continuous, all.len()), em)?));
        if conditional {
            let mut patterns: Vec<Vec<u8>> = zb.iter().map(|v| pattern_of(v)).collect();
            patterns.sort();
            patterns.dedup();
            for (s, pattern) in patterns.into_iter().enumerate() {
                let members: Vec<&[f64]> = zb
                    .iter()
                    .zip(&zc)
                    .filter(|(b, _)| pattern_of(b) == pattern)
                    .map(|(_, c)| c.as_slice())
                    .collect();
                let stratum_em = EmSettings {
                    seed: child_seed(em.seed, s as u64 + 1),
                    ..*em
                };
                let model = fit_points(&members, &shrink(continuous, members.len()), &stratum_em)?;
                strata.push(Stratum { pattern, model });
            }
        }
    }
    Ok(DensityModel::Product(ProductModel {
        binary_coords: binary_coords.to_vec(),
        continuous_coords,
        binary,
        conditional,
        strata,
        pooled,
    }))
}

/// Cap the mixture size at the number of available points.
fn shrink(kind: &ModelKind, n: usize) -> ModelKind {
    match kind {
        ModelKind::Mixture { components } if *components > n => ModelKind::Mixture { components: n.max(1) },
        other => other.clone(),
    }
}
