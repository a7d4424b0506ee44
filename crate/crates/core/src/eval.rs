//! Policy evaluation under a known data-generating process and Monte-Carlo
//! coverage experiments for conformal certificates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{CostGrid, LimitConfig, SearchStrategy, TestMass, DEFAULT_GRID_POINTS};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::policy::{linear_decide, LinearPolicy, RobustPolicy};
use crate::rng::{self, Rng};
use crate::weights::{fit_weight_model, ArmWeights, WeightFitConfig};

/// Complementary CDF `Pr{y > t}` at sorted thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfCurve {
    pub thresholds: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl CcdfCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,probability\n");
        for (t, p) in self.thresholds.iter().zip(&self.probabilities) {
            out.push_str(&format!("{t},{p}\n"));
        }
        out
    }
}

fn sorted_costs(costs: &[f64]) -> Result<Vec<f64>> {
    if costs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if costs.iter().any(|c| c.is_nan()) {
        return Err(Error::InvalidParameter("cost is NaN".into()));
    }
    let mut sorted = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Exact empirical exceedance fractions; thresholds are sorted in the output.
pub fn empirical_ccdf(costs: &[f64], thresholds: &[f64]) -> Result<CcdfCurve> {
    let sorted = sorted_costs(costs)?;
    let n = sorted.len() as f64;
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let probabilities = thresholds
        .iter()
        .map(|&t| (sorted.len() - sorted.partition_point(|&c| c <= t)) as f64 / n)
        .collect();
    Ok(CcdfCurve {
        thresholds,
        probabilities,
    })
}

/// `points` evenly spaced thresholds on `[lo, hi]`.
pub fn threshold_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points)
            .map(|i| if i + 1 == points { hi } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 })
            .collect(),
    }
}

/// Smallest cost `c` whose empirical CDF is at least `1 - alpha`.
pub fn cost_quantile(costs: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let sorted = sorted_costs(costs)?;
    let n = sorted.len();
    let level = 1.0 - alpha;
    // first rank r (1-based) with r / n >= level, guarding against round-off
    let mut r = ((level * n as f64).ceil() as usize).clamp(1, n);
    while r > 1 && (r - 1) as f64 / n as f64 >= level {
        r -= 1;
    }
    while (r as f64 / n as f64) < level && r < n {
        r += 1;
    }
    Ok(sorted[r - 1])
}

/// A context as seen by policies (`features`) and by outcome models (`raw`).
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub features: Vec<f64>,
    pub raw: Option<Vec<f64>>,
}

impl Context {
    pub fn plain(features: Vec<f64>) -> Self {
        Self { features, raw: None }
    }

    pub fn raw_or_features(&self) -> &[f64] {
        self.raw.as_deref().unwrap_or(&self.features)
    }
}

/// Known data-generating process for contexts and interventional costs.
pub trait Environment: Sync {
    fn draw_context(&self, rng: &mut Rng) -> Context;
    fn outcome(&self, x: usize, ctx: &Context, rng: &mut Rng) -> f64;
    fn past_decision(&self, ctx: &Context, rng: &mut Rng) -> usize;
}

pub struct Instance<E> {
    /// Training data over policy features.
    pub train: Dataset,
    pub env: E,
}

/// Source of independent training sets paired with their environment.
pub trait Scenario: Sync {
    type Env: Environment;
    fn instantiate(&self, seed: u64) -> Result<Instance<Self::Env>>;
}

/// Anything that maps a context to a decision.
pub trait Policy: Sync {
    /// `index` identifies the draw; `rng` is private to it.
    fn act(&self, ctx: &Context, index: u64, rng: &mut Rng) -> Result<usize>;
}

impl<W: ArmWeights + Sync> Policy for RobustPolicy<W> {
    fn act(&self, ctx: &Context, index: u64, _rng: &mut Rng) -> Result<usize> {
        Ok(self.decide_indexed(&ctx.features, index)?.decision)
    }
}

impl Policy for LinearPolicy {
    fn act(&self, ctx: &Context, _index: u64, _rng: &mut Rng) -> Result<usize> {
        Ok(linear_decide(self, &ctx.features))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn act(&self, _ctx: &Context, _index: u64, _rng: &mut Rng) -> Result<usize> {
        Ok(self.0)
    }
}

/// The logging policy of an environment.
pub struct PastPolicy<'a, E>(pub &'a E);

impl<E: Environment> Policy for PastPolicy<'_, E> {
    fn act(&self, ctx: &Context, _index: u64, rng: &mut Rng) -> Result<usize> {
        Ok(self.0.past_decision(ctx, rng))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub decisions: Vec<usize>,
    pub costs: Vec<f64>,
    pub ccdf: CcdfCurve,
    pub alpha: f64,
    pub quantile: f64,
}

impl Evaluation {
    pub fn mean_cost(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len() as f64
    }
}

/// `m` i.i.d. draws of `(z, x = pi(z), y)`; draw `i` uses stream `i` of `seed`.
pub fn evaluate_policy<P: Policy + ?Sized, E: Environment + ?Sized>(
    policy: &P,
    env: &E,
    m: usize,
    seed: u64,
    alpha: f64,
    thresholds: &[f64],
) -> Result<Evaluation> {
    let draws = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i);
            let ctx = env.draw_context(&mut rng);
            let x = policy.act(&ctx, i, &mut rng)?;
            Ok((x, env.outcome(x, &ctx, &mut rng)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (decisions, costs): (Vec<usize>, Vec<f64>) = draws.into_iter().unzip();
    let ccdf = empirical_ccdf(&costs, thresholds)?;
    let quantile = cost_quantile(&costs, alpha)?;
    Ok(Evaluation {
        decisions,
        costs,
        ccdf,
        alpha,
        quantile,
    })
}

pub const DEFAULT_ALPHAS: [f64; 7] = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub runs: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub strategy: SearchStrategy,
    pub test_mass: TestMass,
}

impl CoverageConfig {
    pub fn new(runs: usize, seed: u64) -> Self {
        Self {
            runs,
            seed,
            grid_points: DEFAULT_GRID_POINTS,
            strategy: SearchStrategy::IntervalHalving,
            test_mass: TestMass::AtScore,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub alpha: f64,
    /// Fraction of runs with `y > y_alpha(z)`.
    pub exceedance: f64,
    pub runs: usize,
    pub se: f64,
    /// Fraction of runs whose certificate was saturated.
    pub saturated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
}

impl CoverageTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,exceedance,runs,se,saturated\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.alpha, r.exceedance, r.runs, r.se, r.saturated));
        }
        out
    }
}

/// Per-run outcome for one alpha: `(exceeded, saturated)`.
type RunRecord = Vec<(bool, bool)>;

/// Monte-Carlo estimate of `Pr{y > y_alpha(z)}` for the robust policy.
///
/// Each run draws a fresh training set, builds weights with `build_weights`,
/// draws one fresh test context, decides at every alpha, and samples the cost
/// of the chosen decision. All alphas of a run share the outcome noise.
pub fn coverage_experiment<S, W, F>(
    scenario: &S,
    alphas: &[f64],
    cfg: &CoverageConfig,
    build_weights: F,
) -> Result<CoverageTable>
where
    S: Scenario,
    W: ArmWeights + Sync,
    F: Fn(&Dataset, u64) -> Result<W> + Sync,
{
    if cfg.runs < 30 {
        return Err(Error::InvalidParameter(format!("need at least 30 runs, got {}", cfg.runs)));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidParameter("no alpha levels".into()));
    }
    let records = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|r| coverage_run(scenario, alphas, cfg, &build_weights, rng::child_seed(cfg.seed, r)))
        .collect::<Result<Vec<RunRecord>>>()?;
    let runs = cfg.runs as f64;
    let rows = alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let exceeded = records.iter().filter(|rec| rec[a].0).count() as f64;
            let saturated = records.iter().filter(|rec| rec[a].1).count() as f64;
            let p = exceeded / runs;
            CoverageRow {
                alpha,
                exceedance: p,
                runs: cfg.runs,
                se: (p * (1.0 - p) / runs).sqrt(),
                saturated: saturated / runs,
            }
        })
        .collect();
    Ok(CoverageTable { rows })
}

fn coverage_run<S, W, F>(scenario: &S, alphas: &[f64], cfg: &CoverageConfig, build: &F, seed: u64) -> Result<RunRecord>
where
    S: Scenario,
    W: ArmWeights + Sync,
    F: Fn(&Dataset, u64) -> Result<W>,
{
    let inst = scenario.instantiate(rng::child_seed(seed, 0))?;
    let weights = build(&inst.train, rng::child_seed(seed, 1))?;
    let grid = CostGrid::new(inst.train.cost_range(), cfg.grid_points)?;
    let config = LimitConfig::new(alphas[0], grid)?
        .with_strategy(cfg.strategy)
        .with_test_mass(cfg.test_mass);
    let policy = RobustPolicy::new(&inst.train, weights, config, seed)?;
    let ctx = inst.env.draw_context(&mut rng::stream(seed, 2));
    let noise = rng::stream(seed, 3);
    alphas
        .iter()
        .map(|&alpha| {
            let d = policy.decide_at_alpha(&ctx.features, 0, alpha)?;
            let y = inst.env.outcome(d.decision, &ctx, &mut noise.clone());
            Ok((y > d.certificate, d.per_arm_limits[d.decision].saturated))
        })
        .collect()
}

/// Coverage with weights fit by [`fit_weight_model`] on every training set.
pub fn fitted_coverage<S: Scenario>(
    scenario: &S,
    alphas: &[f64],
    cfg: &CoverageConfig,
    fit: &WeightFitConfig,
) -> Result<CoverageTable> {
    coverage_experiment(scenario, alphas, cfg, |ds, seed| fit_weight_model(ds, &fit.with_seed(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ccdf_counts() {
        let c = empirical_ccdf(&[1.0, 2.0, 3.0], &[2.0, 0.0, 9.0]).unwrap();
        assert_eq!(c.thresholds, vec![0.0, 2.0, 9.0]);
        assert_eq!(c.probabilities, vec![1.0, 1.0 / 3.0, 0.0]);
        assert!(empirical_ccdf(&[], &[1.0]).is_err());
    }

    #[test]
    fn quantile_order_statistic() {
        let costs = [5.0, 3.0, 1.0, 4.0, 2.0];
        assert_eq!(cost_quantile(&costs, 0.2).unwrap(), 4.0);
        assert_eq!(cost_quantile(&costs, 1e-9).unwrap(), 5.0);
        assert_eq!(cost_quantile(&costs, 0.999).unwrap(), 1.0);
        assert!(cost_quantile(&[], 0.2).is_err());
        assert!(cost_quantile(&costs, 0.0).is_err());
    }

    #[test]
    fn quantile_at_exact_levels() {
        let costs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(cost_quantile(&costs, 0.3).unwrap(), 7.0);
        assert_eq!(cost_quantile(&costs, 0.1).unwrap(), 9.0);
    }

    #[test]
    fn threshold_grid_endpoints() {
        let g = threshold_grid(-30.0, 30.0, 7);
        assert_eq!(g.len(), 7);
        assert_eq!(g[0], -30.0);
        assert_eq!(g[6], 30.0);
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn too_few_runs() {
        let cfg = CoverageConfig::new(10, 0);
        let setup = crate::scenario::SyntheticSetup::new(50);
        let err = fitted_coverage(&setup, &[0.2], &cfg, &crate::scenario::synthetic_gaussian_weights());
        assert!(err.is_err());
    }
}
