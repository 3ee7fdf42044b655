use haipw_core::estimators::{
    aipw_estimate, confidence_interval, influence_matrix, run_estimators, standard_aipw, EstimationOptions,
};
use haipw_core::outcome_models::fit_ridge;
use haipw_core::simulation::{monte_carlo_runs, CovariateLaw, DgpConfig, MeanSpec, SyntheticModelSpec};
use haipw_core::{Arm, EstimatorSpec, ExperimentDataset, Unit};
use proptest::prelude::*;

fn dgp(models: Vec<SyntheticModelSpec>) -> DgpConfig {
    DgpConfig {
        d: 2,
        covariate_law: CovariateLaw::StandardNormal,
        mean0: MeanSpec::Linear { intercept: 0.5, coefficients: vec![1.0, -0.5] },
        mean1: MeanSpec::Quadratic { intercept: 1.5, linear: vec![1.0, 0.0], quadratic: vec![0.5, 0.0] },
        noise_sd: 1.0,
        pi1: 0.5,
        model_specs: models,
    }
}

#[test]
fn every_estimator_is_unbiased_under_every_bias_family() {
    let families = [
        SyntheticModelSpec::ConstantBias { bias: 3.0, arm: None },
        SyntheticModelSpec::ConstantBias { bias: -2.0, arm: Some(Arm::Treated) },
        SyntheticModelSpec::SlopeBias { factor: 1.5 },
        SyntheticModelSpec::PureNoise { sd: 2.0 },
        SyntheticModelSpec::ArmSwapped,
        SyntheticModelSpec::OraclePlusNoise { sd: 1.0 },
    ];
    let specs = [EstimatorSpec::Dm, EstimatorSpec::Aipw, EstimatorSpec::Haipw, EstimatorSpec::Ppct, EstimatorSpec::Procova];
    let options = EstimationOptions { folds: 10, ..Default::default() };
    let n = 150;
    for (i, family) in families.iter().enumerate() {
        let summary = monte_carlo_runs(&dgp(vec![family.clone()]), n, 1000, &specs, &options, 500 + i as u64).unwrap().summarize();
        for s in &summary.estimators {
            let err = (s.mean_estimate - summary.true_ate).abs();
            let se = s.mc_standard_error(n);
            assert!(err <= 3.0 * se, "{} under {}: |bias| {err} > 3 se {}", s.estimator, family.name(), 3.0 * se);
        }
    }
}

#[test]
fn standardized_haipw_errors_look_normal() {
    let models = vec![SyntheticModelSpec::OraclePlusNoise { sd: 0.5 }, SyntheticModelSpec::ConstantBias { bias: 3.0, arm: None }];
    let options = EstimationOptions { folds: 10, ..Default::default() };
    let run = monte_carlo_runs(&dgp(models), 200, 2000, &[EstimatorSpec::Haipw], &options, 31).unwrap();
    let z = run.standardized_errors("H-AIPW");
    let share = |k: f64| z.iter().filter(|v| v.abs() <= k).count() as f64 / z.len() as f64;
    let (one, two) = (share(1.0), share(2.0));
    assert!((0.64..=0.72).contains(&one), "within 1: {one}");
    assert!((0.93..=0.97).contains(&two), "within 2: {two}");
}

fn dataset(rows: &[(f64, f64, bool, f64)]) -> ExperimentDataset {
    let units: Vec<Unit> = rows
        .iter()
        .enumerate()
        .map(|(i, &(x1, x2, t, y))| Unit {
            id: format!("u{i:03}"),
            covariates: vec![x1, x2],
            treatment: if t { Arm::Treated } else { Arm::Control },
            outcome: y,
        })
        .collect();
    ExperimentDataset::new(units, 0.5).unwrap()
}

fn rows_strategy() -> impl Strategy<Value = Vec<(f64, f64, bool, f64)>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, any::<bool>(), -10.0..10.0f64), 12..60).prop_map(|mut rows| {
        for (i, r) in rows.iter_mut().take(6).enumerate() {
            r.2 = i % 2 == 0;
        }
        rows
    })
}

/// Analytic gradient of `Σ (y − b₀ − βᵀx)² + λ‖β‖²`.
fn ridge_gradient(x: &[Vec<f64>], y: &[f64], lambda: f64, b0: f64, beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; beta.len() + 1];
    for (row, yi) in x.iter().zip(y) {
        let r = yi - b0 - row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        g[0] -= 2.0 * r;
        for (j, xj) in row.iter().enumerate() {
            g[j + 1] -= 2.0 * r * xj;
        }
    }
    for (j, b) in beta.iter().enumerate() {
        g[j + 1] += 2.0 * lambda * b;
    }
    g
}

fn objective(x: &[Vec<f64>], y: &[f64], lambda: f64, params: &[f64]) -> f64 {
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| (yi - params[0] - row.iter().zip(&params[1..]).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    sse + lambda * params[1..].iter().map(|b| b * b).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_gradient_vanishes_and_matches_finite_differences(
        rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 8..40),
        noise in prop::collection::vec(-1.0..1.0f64, 40),
        lambda in 0.01..5.0f64,
    ) {
        let y: Vec<f64> = rows.iter().zip(&noise).map(|(r, e)| 1.0 + r[0] - 2.0 * r[2] + e).collect();
        let m = fit_ridge(&rows, &y, lambda).unwrap();
        let mut params = vec![m.intercept];
        params.extend(&m.coefficients);
        let g = ridge_gradient(&rows, &y, lambda, m.intercept, &m.coefficients);
        let h = 1e-5;
        for p in 0..params.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up[p] += h;
            down[p] -= h;
            let fd = (objective(&rows, &y, lambda, &up) - objective(&rows, &y, lambda, &down)) / (2.0 * h);
            prop_assert!(g[p].abs() <= 1e-6, "analytic gradient {}", g[p]);
            prop_assert!((g[p] - fd).abs() <= 1e-6, "analytic {} vs finite difference {}", g[p], fd);
        }
    }

    #[test]
    fn influence_column_means_are_single_model_estimates(rows in rows_strategy(), shift in -5.0..5.0f64) {
        let ds = dataset(&rows);
        let options = EstimationOptions { folds: 3, ..Default::default() };
        let (_, hhat) = standard_aipw(&ds, &options).unwrap();
        let external = haipw_core::PredictionMatrix::from_models(vec![("shifted".into(), hhat.add_constant(shift))]).unwrap();
        let influence = influence_matrix(&ds, &hhat, &external).unwrap();
        let means = influence.column_means();
        let a = aipw_estimate(&ds, &hhat, 0.05, "a").unwrap().theta_hat;
        let b = aipw_estimate(&ds, &hhat.add_constant(shift), 0.05, "b").unwrap().theta_hat;
        prop_assert!((means[0] - a).abs() <= 1e-12);
        prop_assert!((means[1] - b).abs() <= 1e-12);
    }

    #[test]
    fn reported_intervals_recompute_exactly(rows in rows_strategy(), alpha in 0.01..0.3f64) {
        let ds = dataset(&rows);
        let options = EstimationOptions { folds: 3, alpha, ..Default::default() };
        let reports = run_estimators(&ds, &haipw_core::PredictionMatrix::empty(&ds), &[EstimatorSpec::Dm, EstimatorSpec::Aipw, EstimatorSpec::Haipw], &options).unwrap();
        for r in reports {
            let ci = confidence_interval(r.theta_hat, r.variance_hat, r.n, r.alpha).unwrap();
            prop_assert_eq!(ci, r.ci);
        }
    }
}
