use conformal_policy::conformal::{
    build_cdf, cdf_quantile, limit_from_masses, CostGrid, LimitConfig, SearchStrategy, TestMass,
};
use conformal_policy::dataset::CostRange;
use conformal_policy::eval::{coverage_experiment, CoverageConfig};
use conformal_policy::scenario::{SyntheticSetup, TruePastPolicyWeights};
use conformal_policy::weights::ArmMasses;
use proptest::prelude::*;

fn range() -> CostRange {
    CostRange::new(-30.0, 30.0).unwrap()
}

/// Costs with normalized training masses and a test mass.
fn instance(max_n: usize) -> impl Strategy<Value = (Vec<f64>, ArmMasses)> {
    (1..=max_n)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-30.0..30.0f64, n),
                prop::collection::vec(0.01..1.0f64, n + 1),
            )
        })
        .prop_map(|(costs, raw)| {
            let total: f64 = raw.iter().sum();
            let n = costs.len();
            let masses = ArmMasses {
                train: raw[..n].iter().map(|m| m / total).collect(),
                test: raw[n] / total,
                degenerate: false,
            };
            (costs, masses)
        })
}

fn config(alpha: f64, points: usize) -> LimitConfig {
    LimitConfig::new(alpha, CostGrid::new(range(), points).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn halving_matches_scan((costs, masses) in instance(8), alpha in 0.01..0.99f64, points in 2usize..=5001) {
        let halving = config(alpha, points);
        let scan = halving.with_strategy(SearchStrategy::GridScan);
        let a = limit_from_masses(&costs, &masses, &halving);
        let b = limit_from_masses(&costs, &masses, &scan);
        prop_assert_eq!(a.value, b.value);
        prop_assert_eq!(a.saturated, b.saturated);
    }

    #[test]
    fn conservative_mass_gives_the_same_limit((costs, masses) in instance(8), alpha in 0.01..0.99f64) {
        let at_score = config(alpha, 601).with_strategy(SearchStrategy::GridScan);
        let at_inf = at_score.with_test_mass(TestMass::AtInfinity);
        let a = limit_from_masses(&costs, &masses, &at_score);
        let b = limit_from_masses(&costs, &masses, &at_inf);
        prop_assert_eq!(a.value, b.value);
    }

    #[test]
    fn limit_decreases_in_alpha((costs, masses) in instance(12), a in 0.01..0.98f64, b in 0.01..0.98f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let v_lo = limit_from_masses(&costs, &masses, &config(lo, 2001)).value;
        let v_hi = limit_from_masses(&costs, &masses, &config(hi, 2001)).value;
        prop_assert!(v_hi <= v_lo);
    }

    #[test]
    fn value_stays_in_range((costs, masses) in instance(12), alpha in 0.01..0.99f64) {
        let l = limit_from_masses(&costs, &masses, &config(alpha, 2001));
        prop_assert!((-30.0..=30.0).contains(&l.value));
        prop_assert!(!l.saturated || l.value == 30.0);
    }

    #[test]
    fn refinement_moves_at_most_one_coarse_step((costs, masses) in instance(8), alpha in 0.01..0.5f64, points in 2usize..400) {
        let coarse = config(alpha, points);
        let fine = config(alpha, 2 * points - 1);
        let a = limit_from_masses(&costs, &masses, &coarse).value;
        let b = limit_from_masses(&costs, &masses, &fine).value;
        prop_assert!((a - b).abs() <= coarse.grid.step() * (1.0 + 1e-9), "{} vs {}", a, b);
    }

    #[test]
    fn quantile_matches_enumeration(
        scores in prop::collection::vec(0u8..6, 1..=8),
        raw in prop::collection::vec(0.01..1.0f64, 9),
        test_score in 0u8..6,
        level in 0.01..=1.0f64,
    ) {
        let n = scores.len();
        let total: f64 = raw[..=n].iter().sum();
        let masses: Vec<f64> = raw[..n].iter().map(|m| m / total).collect();
        let p_test = raw[n] / total;
        let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
        let cdf = build_cdf(&s, &masses, f64::from(test_score), p_test);
        prop_assert!((cdf.total_mass() - 1.0).abs() <= 1e-12);
        let mut atoms: Vec<(f64, f64)> = s.iter().copied().zip(masses.iter().copied()).collect();
        atoms.push((f64::from(test_score), p_test));
        let max = atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
        let brute = (0..6)
            .map(f64::from)
            .filter(|c| atoms.iter().any(|a| a.0 == *c))
            .find(|&c| atoms.iter().filter(|a| a.0 <= c).map(|a| a.1).sum::<f64>() >= level - 1e-12)
            .unwrap_or(max);
        prop_assert_eq!(cdf_quantile(&cdf, level), brute);
    }
}

#[test]
fn full_test_mass_saturates() {
    let masses = ArmMasses {
        train: vec![0.0, 0.0],
        test: 1.0,
        degenerate: false,
    };
    let l = limit_from_masses(&[1.0, 2.0], &masses, &config(0.2, 2001));
    assert_eq!(l.value, 30.0);
    assert!(l.saturated);
}

#[test]
fn true_weights_cover() {
    let alphas = [0.1, 0.2, 0.3];
    let runs = 300;
    let table = coverage_experiment(
        &SyntheticSetup::new(200),
        &alphas,
        &CoverageConfig::new(runs, 77),
        |_, _| Ok(TruePastPolicyWeights),
    )
    .unwrap();
    for row in &table.rows {
        let bound = row.alpha + 3.0 * (row.alpha * (1.0 - row.alpha) / runs as f64).sqrt();
        assert!(row.exceedance <= bound, "{row:?}");
        assert!((0.0..=1.0).contains(&row.exceedance));
    }
}
