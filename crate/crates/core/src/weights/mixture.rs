//! Gaussian mixtures fitted by EM from a k-means++ start.
//!
//! All responsibilities are computed in log space. Each M-step raises the
//! eigenvalues of the weighted scatter to the covariance floor, which keeps
//! components well-conditioned when a cluster shrinks to a handful of points.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::weights::gaussian::Gaussian;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmSettings {
    pub max_iter: usize,
    /// Convergence threshold on the change of mean log-likelihood.
    pub tol: f64,
    pub covariance_floor: f64,
    pub seed: u64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            covariance_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian>,
}

/// Result of an EM run. `trace[t]` is the mean log-likelihood of the
/// parameters after `t` M-steps; the last entry belongs to `model`.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GaussianMixture,
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.len() != components.len() || components.is_empty() || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("mixture weights must sum to 1".into()));
        }
        Ok(Self { weights, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(z))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn fit(points: &[&[f64]], k: usize, settings: &EmSettings) -> Result<EmFit> {
        fit_em(points, k, settings)
    }
}

/// k-means++ seeding: returns `k` point indices.
fn kmeans_pp(points: &[&[f64]], k: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let n = points.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = points.iter().map(|p| sq(p, points[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq(p, points[next]));
        }
    }
    centers
}

fn initial_mixture(points: &[&[f64]], k: usize, settings: &EmSettings) -> Result<GaussianMixture> {
    let mut rng = rng::stream(settings.seed, 0);
    let centers = kmeans_pp(points, k, &mut rng);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
    for p in points {
        let best = (0..k)
            .min_by(|&a, &b| sq(p, points[centers[a]]).total_cmp(&sq(p, points[centers[b]])))
            .unwrap_or(0);
        members[best].push(p);
    }
    let global = Gaussian::fit(points, settings.covariance_floor)?;
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for (c, m) in centers.iter().zip(&members) {
        // near-empty clusters start at their seed with the pooled covariance
        let comp = if m.len() >= 2 {
            Gaussian::fit(m, settings.covariance_floor)?
        } else {
            Gaussian::new(points[*c].to_vec(), global.cov().to_vec())?
        };
        weights.push(m.len().max(1) as f64);
        components.push(comp);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GaussianMixture::new(weights, components)
}

/// E-step: fills `resp` (n × k, row-major) and returns the mean log-likelihood.
fn e_step(model: &GaussianMixture, points: &[&[f64]], resp: &mut [f64]) -> f64 {
    let k = model.components.len();
    let log_w: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for j in 0..k {
            row[j] = log_w[j] + model.components[j].log_density(p);
        }
        let lse = log_sum_exp(row);
        total += lse;
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
    }
    total / points.len() as f64
}

fn m_step(
    previous: &GaussianMixture,
    points: &[&[f64]],
    resp: &[f64],
    floor: f64,
) -> Result<GaussianMixture> {
    let k = previous.components.len();
    let n = points.len();
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    let mut col = vec![0.0; n];
    for j in 0..k {
        for i in 0..n {
            col[i] = resp[i * k + j];
        }
        let nk: f64 = col.iter().sum();
        if nk > 1e-300 {
            components.push(Gaussian::fit_weighted(points, &col, floor)?);
        } else {
            components.push(previous.components[j].clone());
        }
        weights.push(nk / n as f64);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(GaussianMixture { weights, components })
}

fn fit_em(points: &[&[f64]], k: usize, settings: &EmSettings) -> Result<EmFit> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidParameter(format!(
            "mixture needs 1 <= K <= n, got K = {k}, n = {}",
            points.len()
        )));
    }
    let mut model = initial_mixture(points, k, settings)?;
    let mut resp = vec![0.0; points.len() * k];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for iter in 0..settings.max_iter.max(1) {
        let ll = e_step(&model, points, &mut resp);
        if let Some(&prev) = trace.last() {
            if (ll - prev).abs() < settings.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iter + 1 == settings.max_iter.max(1) {
            break;
        }
        model = m_step(&model, points, &resp, settings.covariance_floor)?;
    }
    Ok(EmFit {
        model,
        trace,
        converged,
    })
}
