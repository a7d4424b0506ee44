use conformal_policy::dataset::{CostRange, Dataset, Record};
use conformal_policy::scenario::{sample_synthetic, synthetic_product_weights, SyntheticConfig};
use conformal_policy::weights::{
    fit_decision_marginal, fit_weight_model, normalize_log_weights, normalized_weights, ArmWeights,
    FeatureModelConfig, ModelKind, PropensityModel, WeightFitConfig, WeightMode,
};
use proptest::prelude::*;

fn dataset(rows: &[(usize, f64, f64)]) -> Dataset {
    let range = CostRange::new(-100.0, 100.0).unwrap();
    let records = rows.iter().map(|&(x, y, z)| Record { x, y, z: vec![z] }).collect();
    Dataset::new(records, 2, range).unwrap()
}

fn rows_strategy() -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
    prop::collection::vec((0usize..2, -50.0..50.0f64, -5.0..5.0f64), 6..40)
        .prop_filter("both arms need three distinct features", |rows| {
            (0..2).all(|k| {
                let mut zs: Vec<f64> = rows.iter().filter(|r| r.0 == k).map(|r| r.2).collect();
                zs.sort_by(f64::total_cmp);
                zs.dedup();
                zs.len() >= 3
            })
        })
}

proptest! {
    #[test]
    fn masses_sum_to_one(train in prop::collection::vec(-900.0..900.0f64, 0..60), test in -900.0..900.0f64) {
        let m = normalize_log_weights(&train, test);
        let total = m.train.iter().sum::<f64>() + m.test;
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(m.train.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn masses_ignore_a_common_shift(
        train in prop::collection::vec(-50.0..50.0f64, 1..30),
        test in -50.0..50.0f64,
        shift in -300.0..300.0f64,
    ) {
        let a = normalize_log_weights(&train, test);
        let shifted: Vec<f64> = train.iter().map(|v| v + shift).collect();
        let b = normalize_log_weights(&shifted, test + shift);
        for (x, y) in a.train.iter().zip(&b.train) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((a.test - b.test).abs() <= 1e-12);
    }

    #[test]
    fn other_arms_get_no_mass(rows in rows_strategy(), z in -5.0..5.0f64) {
        let ds = dataset(&rows);
        let cfg = WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Gaussian));
        let model = fit_weight_model(&ds, &cfg).unwrap();
        for k in 0..2 {
            let w = normalized_weights(&model, k, &ds, &[z]).unwrap();
            for (r, m) in ds.records().iter().zip(&w.train) {
                if r.x != k {
                    prop_assert_eq!(*m, 0.0);
                }
            }
            let total = w.train.iter().sum::<f64>() + w.test;
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn bayes_propensity_matches_generative(rows in rows_strategy(), z in -5.0..5.0f64) {
        let ds = dataset(&rows);
        let cfg = WeightFitConfig::generative(FeatureModelConfig::new(ModelKind::Gaussian));
        let gen = fit_weight_model(&ds, &cfg).unwrap();
        let prop = gen.clone().into_propensity(PropensityModel::Bayes).unwrap();
        prop_assert_eq!(prop.mode(), WeightMode::Propensity);
        for k in 0..2 {
            let a = gen.log_weight(k, &[z]);
            let b = prop.log_weight(k, &[z]);
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }
}

#[test]
fn marginal_within_binomial_error() {
    let ds = sample_synthetic(&SyntheticConfig::new(20_000, 5)).dataset;
    let p = fit_decision_marginal(&ds).unwrap();
    // treated share: average of the sigmoid mixture over the feature law, by quadrature
    let mut expected = 0.0;
    let steps = 20_000;
    for gender in [0.0, 1.0] {
        let mean = if gender == 1.0 { 30.0 } else { 45.0 };
        for i in 0..steps {
            let a = mean - 40.0 + 80.0 * (i as f64 + 0.5) / steps as f64;
            let dens = (-(a - mean) * (a - mean) / 50.0).exp() / (5.0 * (2.0 * std::f64::consts::PI).sqrt());
            expected += 0.5 * dens * (80.0 / steps as f64)
                * conformal_policy::scenario::treatment_probability(&[a, gender]);
        }
    }
    let se = (expected * (1.0 - expected) / 20_000.0).sqrt();
    assert!((p.prob(1) - expected).abs() <= 3.0 * se, "{} vs {expected}", p.prob(1));
}

#[test]
fn age_mixture_recovers_group_means() {
    let ds = sample_synthetic(&SyntheticConfig::new(4000, 21)).dataset;
    let ages: Vec<Vec<f64>> = ds.records().iter().map(|r| vec![r.z[0]]).collect();
    let pts: Vec<&[f64]> = ages.iter().map(Vec::as_slice).collect();
    let fit = conformal_policy::weights::GaussianMixture::fit(&pts, 2, &Default::default()).unwrap();
    let mut means: Vec<f64> = fit.model.components.iter().map(|c| c.mean()[0]).collect();
    means.sort_by(f64::total_cmp);
    assert!((means[0] - 30.0).abs() < 1.0 && (means[1] - 45.0).abs() < 1.0, "{means:?}");
}

#[test]
fn product_model_weights_are_finite_on_training_points() {
    let ds = sample_synthetic(&SyntheticConfig::new(300, 2)).dataset;
    let model = fit_weight_model(&ds, &synthetic_product_weights()).unwrap();
    for r in ds.records() {
        let w = model.log_weight(r.x, &r.z);
        assert!(w.is_finite() && w >= -1e-12, "{w}");
    }
}

#[test]
fn model_json_round_trip() {
    let ds = sample_synthetic(&SyntheticConfig::new(200, 3)).dataset;
    let model = fit_weight_model(&ds, &synthetic_product_weights()).unwrap();
    let text = model.to_json().unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["mode"], "generative");
    assert_eq!(value["marginal"].as_array().unwrap().len(), 2);
    assert_eq!(value["arms"][0]["kind"], "product");
    let back = conformal_policy::weights::WeightModel::from_json(&text).unwrap();
    for r in ds.records().iter().take(20) {
        assert_eq!(back.log_weight(r.x, &r.z), model.log_weight(r.x, &r.z));
    }
}
