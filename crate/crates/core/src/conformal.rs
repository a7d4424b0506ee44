//! Weighted full-conformal cost limits.
//!
//! For a hypothesized decision `k` at context `z`, every candidate cost `y` on
//! a grid over the cost range is tested: the predictor is the weighted mean of
//! the augmented data `mu = sum_i p_i y_i + p_test * y`, all residuals are
//! taken against that single `mu`, and `y` belongs to the limit set when its
//! own residual does not exceed the `(1 - alpha)` quantile of the weighted
//! residual distribution (test mass included). The limit is the largest
//! member of the set; arms without usable data fall back to the top of the
//! cost range.

use serde::{Deserialize, Serialize};

use crate::dataset::{CostRange, Dataset};
use crate::error::{Error, Result};
use crate::weights::{ArmCalibration, ArmMasses, ArmWeights};

/// Tolerance used when comparing cumulative masses with a quantile level.
pub const LEVEL_EPS: f64 = 1e-12;

/// `p_test` at or above `1 - SATURATION_EPS` short-circuits to `max(Y)`.
pub const SATURATION_EPS: f64 = 1e-12;

/// <code>mu = sum_i p_i y_i + p_test * y_cand</code>.
pub fn augmented_mean(p_vec: &[f64], costs: &[f64], p_test: f64, y_cand: f64) -> f64 {
    weighted_sum(p_vec, costs) + p_test * y_cand
}

fn weighted_sum(p_vec: &[f64], costs: &[f64]) -> f64 {
    p_vec.iter().zip(costs).map(|(p, y)| p * y).sum()
}

/// Absolute residual nonconformity score.
pub fn score(y: f64, mu: f64) -> f64 {
    (y - mu).abs()
}

/// Step function `F(s) = sum of masses of atoms with score <= s`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCdf {
    atoms: Vec<(f64, f64)>,
}

impl WeightedCdf {
    /// Sorted `(score, mass)` pairs with distinct scores.
    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.atoms.iter().take_while(|(a, _)| *a <= s).map(|(_, m)| m).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, m)| m).sum()
    }
}

/// Merge training scores (masses `p_vec`) and the test score (mass `p_test`)
/// into one step function. Zero-mass atoms are dropped.
pub fn build_cdf(scores: &[f64], p_vec: &[f64], test_score: f64, p_test: f64) -> WeightedCdf {
    debug_assert_eq!(scores.len(), p_vec.len());
    let mut atoms: Vec<(f64, f64)> = scores
        .iter()
        .zip(p_vec)
        .map(|(&s, &m)| (s, m))
        .chain(std::iter::once((test_score, p_test)))
        .filter(|(_, m)| *m > 0.0)
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (s, m) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == s => last.1 += m,
            _ => merged.push((s, m)),
        }
    }
    WeightedCdf { atoms: merged }
}

/// `inf { s : F(s) >= level }`, evaluated on the atoms.
///
/// A cumulative mass within [`LEVEL_EPS`] of `level` counts as attaining it.
/// `level >= 1` returns the largest atom.
pub fn cdf_quantile(cdf: &WeightedCdf, level: f64) -> f64 {
    let Some(&(last, _)) = cdf.atoms.last() else {
        return f64::INFINITY;
    };
    if level >= 1.0 {
        return last;
    }
    let mut cumulative = 0.0;
    for &(s, m) in &cdf.atoms {
        cumulative += m;
        if cumulative >= level - LEVEL_EPS {
            return s;
        }
    }
    last
}

/// Uniform discretization of the cost range, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostGrid {
    lo: f64,
    hi: f64,
    points: usize,
}

pub const DEFAULT_GRID_POINTS: usize = 2001;

impl CostGrid {
    pub fn new(range: CostRange, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidParameter(format!("grid needs at least 2 points, got {points}")));
        }
        if !range.lo().is_finite() {
            return Err(Error::InvalidParameter("grid needs a finite lower cost bound".into()));
        }
        Ok(Self {
            lo: range.lo(),
            hi: range.hi(),
            points,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 >= self.points {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64
        }
    }

    /// Smallest index whose value is `>= y`, or `len()` when `y > hi`.
    fn ceil_index(&self, y: f64) -> usize {
        if y <= self.lo {
            return 0;
        }
        if y > self.hi {
            return self.points;
        }
        let mut i = ((y - self.lo) / self.step()).floor() as usize;
        i = i.min(self.points - 1);
        while i > 0 && self.value(i - 1) >= y {
            i -= 1;
        }
        while i < self.points && self.value(i) < y {
            i += 1;
        }
        i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    /// Evaluate membership at every grid point (top-down, first hit wins).
    GridScan,
    /// Bisect for the upper boundary of the limit set.
    IntervalHalving,
}

/// Where the test point's mass sits in the residual distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMass {
    AtScore,
    /// Conservative variant with the test mass at `+inf`.
    AtInfinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitConfig {
    pub alpha: f64,
    pub grid: CostGrid,
    pub strategy: SearchStrategy,
    pub test_mass: TestMass,
}

impl LimitConfig {
    pub fn new(alpha: f64, grid: CostGrid) -> Result<Self> {
        let cfg = Self {
            alpha,
            grid,
            strategy: SearchStrategy::IntervalHalving,
            test_mass: TestMass::AtScore,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn with_strategy(self, strategy: SearchStrategy) -> Self {
        Self { strategy, ..self }
    }

    pub fn with_test_mass(self, test_mass: TestMass) -> Self {
        Self { test_mass, ..self }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalLimit {
    pub value: f64,
    /// Normalized mass of the test point.
    pub test_mass: f64,
    /// `(1 - alpha)` residual quantile at the returned value.
    pub quantile_at_value: f64,
    /// The limit equals `max(Y)` and carries no information.
    pub saturated: bool,
}

/// Membership test for one arm's calibration data at a fixed test mass.
pub struct LimitProblem<'a> {
    costs: &'a [f64],
    masses: &'a [f64],
    p_test: f64,
    mu0: f64,
    level: f64,
    test_mass: TestMass,
    scores: std::cell::RefCell<Vec<f64>>,
}

impl<'a> LimitProblem<'a> {
    pub fn new(costs: &'a [f64], masses: &'a [f64], p_test: f64, alpha: f64, test_mass: TestMass) -> Self {
        Self {
            costs,
            masses,
            p_test,
            mu0: weighted_sum(masses, costs),
            level: 1.0 - alpha,
            test_mass,
            scores: std::cell::RefCell::new(vec![0.0; costs.len()]),
        }
    }

    /// `(member, quantile)` for candidate `y`.
    pub fn evaluate(&self, y: f64) -> (bool, f64) {
        let mu = self.mu0 + self.p_test * y;
        let mut scores = self.scores.borrow_mut();
        for (s, &yi) in scores.iter_mut().zip(self.costs) {
            *s = score(yi, mu);
        }
        let own = score(y, mu);
        let placed = match self.test_mass {
            TestMass::AtScore => own,
            TestMass::AtInfinity => f64::INFINITY,
        };
        let cdf = build_cdf(&scores, self.masses, placed, self.p_test);
        let q = cdf_quantile(&cdf, self.level);
        (own <= q, q)
    }

    pub fn is_member(&self, y: f64) -> bool {
        self.evaluate(y).0
    }

    /// The residual of candidate `y` vanishes at `mu0 / (1 - p_test)`.
    fn zero_residual_point(&self) -> f64 {
        self.mu0 / (1.0 - self.p_test)
    }

    /// Largest member grid index, `None` when the set misses the grid.
    pub fn search(&self, grid: &CostGrid, strategy: SearchStrategy) -> Option<usize> {
        match strategy {
            SearchStrategy::GridScan => self.scan_down(grid, grid.len() - 1),
            SearchStrategy::IntervalHalving => self.halve(grid),
        }
    }

    fn scan_down(&self, grid: &CostGrid, from: usize) -> Option<usize> {
        (0..=from).rev().find(|&i| self.is_member(grid.value(i)))
    }

    fn halve(&self, grid: &CostGrid) -> Option<usize> {
        let top = grid.len() - 1;
        if self.is_member(grid.value(top)) {
            return Some(top);
        }
        // For p_test <= 1/2 the set is one interval around the zero-residual
        // point; above that it can split, so fall back to scanning.
        if self.p_test > 0.5 {
            return self.scan_down(grid, top);
        }
        let anchor = grid.ceil_index(self.zero_residual_point());
        let member = if anchor > top {
            // zero-residual point above the grid: members reach down from it
            return None;
        } else if self.is_member(grid.value(anchor)) {
            anchor
        } else if anchor > 0 && self.is_member(grid.value(anchor - 1)) {
            return Some(anchor - 1);
        } else {
            return None;
        };
        let (mut lo, mut hi) = (member, top);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.is_member(grid.value(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }
}

/// Limit from already-normalized masses of one arm.
pub fn limit_from_masses(costs: &[f64], masses: &ArmMasses, config: &LimitConfig) -> ConformalLimit {
    let grid = &config.grid;
    let problem = LimitProblem::new(costs, &masses.train, masses.test, config.alpha, config.test_mass);
    let saturated_at_top = |test_mass: f64| ConformalLimit {
        value: grid.hi(),
        test_mass,
        quantile_at_value: if test_mass >= 1.0 - SATURATION_EPS {
            0.0
        } else {
            problem.evaluate(grid.hi()).1
        },
        saturated: true,
    };
    if masses.degenerate || masses.test >= 1.0 - SATURATION_EPS {
        return saturated_at_top(masses.test);
    }
    match problem.search(grid, config.strategy) {
        Some(i) if i + 1 < grid.len() => {
            let value = grid.value(i);
            ConformalLimit {
                value,
                test_mass: masses.test,
                quantile_at_value: problem.evaluate(value).1,
                saturated: false,
            }
        }
        _ => saturated_at_top(masses.test),
    }
}

/// `y_alpha(k, z)` for decision `k` at context `z`.
pub fn conformal_limit<W: ArmWeights + ?Sized>(
    ds: &Dataset,
    weights: &W,
    k: usize,
    z: &[f64],
    config: &LimitConfig,
) -> Result<ConformalLimit> {
    config.check()?;
    let cal = ArmCalibration::prepare(ds, weights, k)?;
    let masses = cal.masses(weights, z)?;
    Ok(limit_from_masses(cal.costs(), &masses, config))
}
