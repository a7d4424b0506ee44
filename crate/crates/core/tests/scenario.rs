use conformal_policy::rng::{self, child_seed};
use conformal_policy::scenario::{
    fit_reducer, generate_ihdp_style, sample_beta, sample_synthetic, simulate_ihdp_outcomes,
    surrogate_covariates, treatment_probability, IhdpSetup, IhdpStyleConfig, SyntheticConfig,
    SyntheticScenario,
};
use conformal_policy::eval::Scenario;
use proptest::prelude::*;

#[test]
fn untreated_males_near_45_are_treated_one_time_in_ten() {
    let ds = sample_synthetic(&SyntheticConfig::new(400_000, 3)).dataset;
    let near: Vec<_> = ds
        .records()
        .iter()
        .filter(|r| r.z[1] == 0.0 && (r.z[0] - 45.0).abs() < 0.05)
        .collect();
    let n = near.len() as f64;
    let p: f64 = near.iter().map(|r| treatment_probability(&r.z)).sum::<f64>() / n;
    let freq = near.iter().filter(|r| r.x == 1).count() as f64 / n;
    assert!((p - 0.10).abs() < 0.002, "{p}");
    assert!((freq - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt(), "{freq} vs {p} over {n}");
}

#[test]
fn clipping_is_counted() {
    let s = sample_synthetic(&SyntheticConfig::new(5000, 8));
    let raw = sample_synthetic(&SyntheticConfig {
        scenario: SyntheticScenario {
            clip: false,
            ..Default::default()
        },
        ..SyntheticConfig::new(5000, 8)
    });
    let outside = raw.dataset.records().iter().filter(|r| !(-30.0..=30.0).contains(&r.y)).count();
    assert_eq!(s.clipped, outside);
    assert!(s.clipped > 0);
    assert!(s.dataset.records().iter().all(|r| (-30.0..=30.0).contains(&r.y)));
}

#[test]
fn ihdp_is_deterministic() {
    let cfg = IhdpStyleConfig {
        seed: 5,
        ..Default::default()
    };
    let a = generate_ihdp_style(&cfg).unwrap();
    let b = generate_ihdp_style(&cfg).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.test_covariates, b.test_covariates);
}

#[test]
fn beta_zero_share() {
    let cfg = IhdpStyleConfig::default();
    let mut rng = rng::stream(2, 0);
    let draws: Vec<f64> = (0..2000).flat_map(|_| sample_beta(&cfg, &mut rng)).collect();
    let frac = draws.iter().filter(|&&b| b == 0.0).count() as f64 / draws.len() as f64;
    assert!((frac - 0.6).abs() <= 4.0 * (0.24 / draws.len() as f64).sqrt(), "{frac}");
}

#[test]
fn noiseless_treated_effect_is_minus_two() {
    let cfg = IhdpStyleConfig {
        sigma_treated: 0.0,
        sigma_untreated: 0.0,
        seed: 31,
        ..Default::default()
    };
    let mut rng = rng::stream(31, 0);
    let covs = surrogate_covariates(747, 25, &mut rng);
    let decisions: Vec<usize> = (0..747).map(|i| usize::from(i % 5 == 0)).collect();
    let data = simulate_ihdp_outcomes(&cfg, covs.clone(), Some(decisions.clone())).unwrap();
    let diffs: Vec<f64> = covs
        .iter()
        .zip(&decisions)
        .filter(|(_, &x)| x == 1)
        .map(|(z, _)| data.truth.mean_cost(1, z) - data.truth.mean_cost(0, z))
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!((mean + 2.0).abs() < 1e-9, "{mean}");
    // noiseless training costs are the mean functions themselves
    for r in data.train.records() {
        assert_eq!(r.y, data.truth.mean_cost(r.x, &r.z));
    }
}

#[test]
fn ihdp_setup_reduces_to_four_features() {
    let inst = IhdpSetup::new(5.0, 1.0).instantiate(9).unwrap();
    assert_eq!(inst.train.dim(), 4);
    assert_eq!(inst.train.len(), 600);
    let counts = inst.train.arm_counts();
    assert!(counts[1] > 60 && counts[1] < 170, "{counts:?}");
}

#[test]
fn reducer_rows_orthonormal_on_ihdp_covariates() {
    let data = generate_ihdp_style(&IhdpStyleConfig::default()).unwrap();
    let raw: Vec<Vec<f64>> = data.train.records().iter().map(|r| r.z.clone()).collect();
    let r = fit_reducer(&raw, 4).unwrap();
    for a in 0..4 {
        for b in 0..4 {
            let dot: f64 = r.components[a].iter().zip(&r.components[b]).map(|(x, y)| x * y).sum();
            assert!((dot - f64::from(u8::from(a == b))).abs() < 1e-10);
        }
    }
}

#[test]
fn reducer_rejects_rank_deficient_data() {
    let raw: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
    assert!(fit_reducer(&raw, 2).is_err());
    assert!(fit_reducer(&raw, 1).is_ok());
}

proptest! {
    #[test]
    fn synthetic_is_deterministic(seed in any::<u64>(), n in 1usize..100) {
        let a = sample_synthetic(&SyntheticConfig::new(n, seed)).dataset;
        let b = sample_synthetic(&SyntheticConfig::new(n, seed)).dataset;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn child_seeds_differ(seed in any::<u64>(), i in 0u64..1000) {
        prop_assert_ne!(child_seed(seed, i), child_seed(seed, i + 1));
    }
}
