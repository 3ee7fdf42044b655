//! Average treatment effect estimators.
//!
//! Every AIPW-type estimator here is the sample mean of the per-unit influence
//! values
//!
//! ```text
//! ψᵢ(h) = Aᵢ/π₁·(Yᵢ − h(Xᵢ,1)) + h(Xᵢ,1) − (1−Aᵢ)/π₀·(Yᵢ − h(Xᵢ,0)) − h(Xᵢ,0)
//! ```
//!
//! for some outcome model `h`. The hybrid estimator stacks the influence
//! columns of the experimentally fitted model and of every external model,
//! and combines the per-column means with the weights minimizing `λᵀΣ̂λ`
//! subject to `Σλ = 1`.
//!
//! `variance_hat` is always the variance of `√n·θ̂`, so intervals are
//! `θ̂ ± z·sqrt(variance_hat / n)`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Arm, CovarianceEstimate, DataError, EstimateReport, ExperimentDataset, InfluenceMatrix, OutcomePredictions,
    PredictionMatrix, Weights,
};
use crate::numerics::{self, NumericError, SymmetricMatrix};
use crate::outcome_models::{self, CrossFitOptions, OutcomeModelError, OutcomeModelKind};
use crate::seeds::child_seed;

/// Shrinkage levels tried in order when `Σ̂` cannot be used as is.
pub const SHRINKAGE_ESCALATION: [f64; 3] = [1e-8, 1e-6, 1e-4];
/// Largest acceptable condition estimate of the covariance actually used.
pub const MAX_CONDITION: f64 = 1e10;
const PPCT_MIN_DENOMINATOR: f64 = 1e-12;

pub const EXPERIMENTAL_COLUMN: &str = "experimental";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    OutcomeModel(#[from] OutcomeModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("ArmTooSmall: the {arm} arm has {count} unit(s); at least 2 are needed for a variance")]
    ArmTooSmall { arm: Arm, count: usize },
    #[error("SingularCovariance: influence covariance unusable even after shrinkage {max_shrinkage:e}")]
    SingularCovariance { max_shrinkage: f64 },
    #[error("TooFewUnits: need at least {needed} units, got {actual}")]
    TooFewUnits { needed: usize, actual: usize },
    #[error("NegativeVariance: {0}")]
    NegativeVariance(f64),
    #[error("InvalidAlpha: {0} is outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("InvalidShrinkage: {0}")]
    InvalidShrinkage(f64),
    #[error("UnknownModel: {0}")]
    UnknownModel(String),
    #[error("NoExternalModel: {0} needs at least one external prediction model")]
    NoExternalModel(&'static str),
}

impl EstimatorError {
    pub fn kind(&self) -> &'static str {
        match self {
            EstimatorError::Data(e) => e.kind(),
            EstimatorError::OutcomeModel(OutcomeModelError::Data(e)) => e.kind(),
            EstimatorError::OutcomeModel(OutcomeModelError::EmptyTrainingArm { .. }) => "EmptyTrainingArm",
            EstimatorError::OutcomeModel(_) | EstimatorError::Numeric(_) => "NotPositiveDefinite",
            EstimatorError::ArmTooSmall { .. } => "ArmTooSmall",
            EstimatorError::SingularCovariance { .. } => "SingularCovariance",
            EstimatorError::TooFewUnits { .. } => "TooFewUnits",
            EstimatorError::NegativeVariance(_) => "NegativeVariance",
            EstimatorError::InvalidAlpha(_) => "InvalidAlpha",
            EstimatorError::InvalidShrinkage(_) => "InvalidShrinkage",
            EstimatorError::UnknownModel(_) => "UnknownModel",
            EstimatorError::NoExternalModel(_) => "NoExternalModel",
        }
    }

    /// Numerical failures as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            EstimatorError::SingularCovariance { .. }
                | EstimatorError::Numeric(_)
                | EstimatorError::OutcomeModel(OutcomeModelError::Numeric(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HaipwOptions {
    pub alpha: f64,
    /// Base shrinkage `ε`, relative to the mean diagonal of `Σ̂`.
    pub covariance_shrinkage: f64,
    /// Estimate the weights on one half of the units and apply them to the
    /// other half.
    pub covariance_crossfit: bool,
    pub k_folds: usize,
    pub seed: u64,
}

impl Default for HaipwOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            covariance_shrinkage: 0.0,
            covariance_crossfit: false,
            k_folds: outcome_models::DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

/// Everything needed to run the full estimator suite on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationOptions {
    pub alpha: f64,
    pub folds: usize,
    pub seed: u64,
    pub ridge_lambda: f64,
    /// Covariates kept by correlation screening; `None` keeps all.
    pub feature_select_m: Option<usize>,
    pub boost_stages: usize,
    pub learning_rate: f64,
    pub covariance_shrinkage: f64,
    pub covariance_crossfit: bool,
    /// External model used by PPCT and PROCOVA; defaults to the first one.
    pub prognostic_model: Option<String>,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        let cf = CrossFitOptions::default();
        let h = HaipwOptions::default();
        Self {
            alpha: h.alpha,
            folds: cf.folds,
            seed: cf.seed,
            ridge_lambda: cf.ridge_lambda,
            feature_select_m: cf.feature_select,
            boost_stages: cf.boost_stages,
            learning_rate: cf.learning_rate,
            covariance_shrinkage: h.covariance_shrinkage,
            covariance_crossfit: h.covariance_crossfit,
            prognostic_model: None,
        }
    }
}

impl EstimationOptions {
    pub fn cross_fit(&self) -> CrossFitOptions {
        CrossFitOptions {
            folds: self.folds,
            seed: self.seed,
            ridge_lambda: self.ridge_lambda,
            feature_select: self.feature_select_m,
            boost_stages: self.boost_stages,
            learning_rate: self.learning_rate,
        }
    }

    pub fn haipw(&self) -> HaipwOptions {
        HaipwOptions {
            alpha: self.alpha,
            covariance_shrinkage: self.covariance_shrinkage,
            covariance_crossfit: self.covariance_crossfit,
            k_folds: self.folds,
            seed: self.seed,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), EstimatorError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(EstimatorError::InvalidAlpha(alpha))
    }
}

/// `θ̂ ± z_{1−α/2}·sqrt(V̂/n)`.
pub fn confidence_interval(theta_hat: f64, variance_hat: f64, n: usize, alpha: f64) -> Result<(f64, f64), EstimatorError> {
    check_alpha(alpha)?;
    if variance_hat < 0.0 || variance_hat.is_nan() {
        return Err(EstimatorError::NegativeVariance(variance_hat));
    }
    if n == 0 {
        return Err(EstimatorError::TooFewUnits { needed: 1, actual: 0 });
    }
    let z = numerics::normal_quantile(1.0 - alpha / 2.0)?;
    let half = z * (variance_hat / n as f64).sqrt();
    Ok((theta_hat - half, theta_hat + half))
}

fn report(
    estimator: &str,
    theta_hat: f64,
    variance_hat: f64,
    n: usize,
    alpha: f64,
    weights: Option<Weights>,
    diagnostics: BTreeMap<String, f64>,
) -> Result<EstimateReport, EstimatorError> {
    let ci = confidence_interval(theta_hat, variance_hat, n, alpha)?;
    Ok(EstimateReport { estimator: estimator.to_owned(), theta_hat, variance_hat, n, alpha, ci, weights, diagnostics })
}

/// Per-unit influence values `ψᵢ(h)` for the outcome model behind
/// `predictions`. Their mean is the AIPW point estimate.
pub fn compute_influence(dataset: &ExperimentDataset, predictions: &OutcomePredictions) -> Result<Vec<f64>, EstimatorError> {
    predictions.check_aligned(dataset)?;
    let (pi1, pi0) = (dataset.pi1(), dataset.pi0());
    Ok(dataset
        .units()
        .iter()
        .zip(predictions.values())
        .map(|(u, h)| {
            let a = u.treatment.indicator();
            (a / pi1 * (u.outcome - h.treated) + h.treated) - ((1.0 - a) / pi0 * (u.outcome - h.control) + h.control)
        })
        .collect())
}

fn arm_outcomes(dataset: &ExperimentDataset, arm: Arm) -> Vec<f64> {
    dataset.units().iter().filter(|u| u.treatment == arm).map(|u| u.outcome).collect()
}

/// Treated-arm mean minus control-arm mean.
pub fn difference_in_means(dataset: &ExperimentDataset) -> f64 {
    numerics::mean(&arm_outcomes(dataset, Arm::Treated)) - numerics::mean(&arm_outcomes(dataset, Arm::Control))
}

/// Difference in means with variance `n·(s₁²/n₁ + s₀²/n₀)`.
pub fn dm_estimate(dataset: &ExperimentDataset, alpha: f64) -> Result<EstimateReport, EstimatorError> {
    check_alpha(alpha)?;
    let n = dataset.len() as f64;
    let mut variance = 0.0;
    for arm in Arm::BOTH {
        let y = arm_outcomes(dataset, arm);
        if y.len() < 2 {
            return Err(EstimatorError::ArmTooSmall { arm, count: y.len() });
        }
        variance += numerics::sample_variance(&y)? / y.len() as f64;
    }
    report("DM", difference_in_means(dataset), n * variance, dataset.len(), alpha, None, BTreeMap::new())
}

/// AIPW with a given outcome model: `θ̂ = mean(ψ)`, `V̂ = sample variance of ψ`.
pub fn aipw_estimate(
    dataset: &ExperimentDataset,
    predictions: &OutcomePredictions,
    alpha: f64,
    label: &str,
) -> Result<EstimateReport, EstimatorError> {
    check_alpha(alpha)?;
    let psi = compute_influence(dataset, predictions)?;
    let theta = numerics::mean(&psi);
    let variance = numerics::sample_variance(&psi)?;
    report(label, theta, variance, dataset.len(), alpha, None, BTreeMap::new())
}

/// Influence columns for the experimental model `hhat` followed by every
/// external model.
pub fn influence_matrix(
    dataset: &ExperimentDataset,
    hhat: &OutcomePredictions,
    external: &PredictionMatrix,
) -> Result<InfluenceMatrix, EstimatorError> {
    external.check_aligned(dataset)?;
    let mut names = vec![EXPERIMENTAL_COLUMN.to_owned()];
    let mut columns = vec![compute_influence(dataset, hhat)?];
    for (name, predictions) in external.models() {
        names.push(name.to_owned());
        columns.push(compute_influence(dataset, &predictions)?);
    }
    Ok(InfluenceMatrix { names, columns })
}

/// Applies the shrinkage policy to a raw covariance of influence columns.
///
/// The base shrinkage `ε` (relative to the mean diagonal) is applied first. If
/// the result is not positive definite or its condition estimate exceeds
/// [`MAX_CONDITION`], `ε` escalates through [`SHRINKAGE_ESCALATION`].
pub fn regularize_covariance(raw: &SymmetricMatrix, base_shrinkage: f64) -> Result<CovarianceEstimate, EstimatorError> {
    if !(base_shrinkage >= 0.0) || !base_shrinkage.is_finite() {
        return Err(EstimatorError::InvalidShrinkage(base_shrinkage));
    }
    let scale = raw.mean_diagonal();
    let candidates = std::iter::once(base_shrinkage).chain(SHRINKAGE_ESCALATION.into_iter().filter(|&e| e > base_shrinkage));
    for eps in candidates {
        let matrix = if eps > 0.0 { raw.shifted(eps * scale) } else { raw.clone() };
        let condition = numerics::condition_estimate(&matrix);
        if condition.is_finite() && condition <= MAX_CONDITION {
            return Ok(CovarianceEstimate { matrix, regularization_applied: eps, condition_estimate: condition });
        }
    }
    Err(EstimatorError::SingularCovariance { max_shrinkage: SHRINKAGE_ESCALATION[2].max(base_shrinkage) })
}

/// `λ = Σ⁻¹𝟙 / (𝟙ᵀΣ⁻¹𝟙)`, the minimizer of `λᵀΣλ` over `Σλ = 1`.
pub fn optimal_weights(sigma: &CovarianceEstimate) -> Result<Weights, EstimatorError> {
    let dim = sigma.matrix.dim();
    if dim == 1 {
        return Ok(Weights(vec![1.0]));
    }
    let singular = EstimatorError::SingularCovariance { max_shrinkage: sigma.regularization_applied };
    let x = numerics::solve_spd(&sigma.matrix, &vec![1.0; dim]).map_err(|_| singular.clone())?;
    let total: f64 = x.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(singular);
    }
    Ok(Weights(x.iter().map(|v| v / total).collect()))
}

struct Combination {
    covariance: CovarianceEstimate,
    weights: Weights,
    variance: f64,
    fallback: bool,
}

/// Weights and `λᵀΣ̂λ` for one set of influence columns. A covariance whose
/// every entry is zero gives all weight to the experimental column.
fn combine(columns: &[Vec<f64>], base_shrinkage: f64) -> Result<Combination, EstimatorError> {
    let raw = numerics::sample_covariance(columns)?;
    if raw.dim() > 1 && raw.mean_diagonal() == 0.0 {
        let mut w = vec![0.0; raw.dim()];
        w[0] = 1.0;
        let covariance = CovarianceEstimate { matrix: raw, regularization_applied: 0.0, condition_estimate: f64::INFINITY };
        return Ok(Combination { covariance, weights: Weights(w), variance: 0.0, fallback: true });
    }
    let covariance = regularize_covariance(&raw, base_shrinkage)?;
    let mut weights = optimal_weights(&covariance)?;
    let mut variance = covariance.matrix.quadratic_form(weights.as_slice());
    let diag = covariance.matrix.diag();
    let (best, best_var) = diag
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc });
    // The affine minimizer can only exceed a single column through rounding in
    // a badly conditioned solve; the best single column is then exact.
    let fallback = !(variance <= best_var);
    if fallback {
        let mut w = vec![0.0; diag.len()];
        w[best] = 1.0;
        weights = Weights(w);
        variance = best_var;
    }
    Ok(Combination { covariance, weights, variance: variance.max(0.0), fallback })
}

/// The hybrid AIPW estimator.
///
/// Stacks `ψ(ĥ), ψ(f₁), …, ψ(f_k)`, estimates their covariance `Σ̂` (divisor
/// `n − 1`), and returns `θ̂ = Σⱼ λ̂ⱼ·mean(ψ(·ⱼ))` with `V̂ = λ̂ᵀΣ̂λ̂`, where
/// `Σ̂` is the possibly shrunk matrix actually used for the weights.
pub fn haipw_estimate(
    dataset: &ExperimentDataset,
    hhat: &OutcomePredictions,
    external: &PredictionMatrix,
    options: &HaipwOptions,
) -> Result<EstimateReport, EstimatorError> {
    check_alpha(options.alpha)?;
    let k = external.num_models();
    if dataset.len() < k + 2 {
        return Err(EstimatorError::TooFewUnits { needed: k + 2, actual: dataset.len() });
    }
    let influence = influence_matrix(dataset, hhat, external)?;
    let means = influence.column_means();
    let pooled = combine(&influence.columns, options.covariance_shrinkage)?;

    let mut diagnostics = BTreeMap::new();
    let theta = if options.covariance_crossfit && k > 0 {
        let (theta, halves) = crossfit_combination(dataset, &influence, options)?;
        diagnostics.insert("covariance_crossfit".into(), 1.0);
        diagnostics.insert("covariance_crossfit.theta_half_a".into(), halves[0]);
        diagnostics.insert("covariance_crossfit.theta_half_b".into(), halves[1]);
        theta
    } else {
        numerics::dot(pooled.weights.as_slice(), &means)
    };

    for (j, name) in influence.names.iter().enumerate() {
        diagnostics.insert(format!("column_variance.{name}"), pooled.covariance.matrix.get(j, j));
        diagnostics.insert(format!("column_estimate.{name}"), means[j]);
    }
    if pooled.covariance.condition_estimate.is_finite() {
        diagnostics.insert("condition_estimate".into(), pooled.covariance.condition_estimate);
    }
    diagnostics.insert("shrinkage".into(), pooled.covariance.regularization_applied);
    if pooled.fallback {
        diagnostics.insert("weights_fallback".into(), 1.0);
    }
    report("H-AIPW", theta, pooled.variance, dataset.len(), options.alpha, Some(pooled.weights), diagnostics)
}

/// Splits units into two halves stratified by arm, computes weights on each
/// half and applies them to the other half's column means. Returns the
/// size-weighted average and the two half estimates.
fn crossfit_combination(
    dataset: &ExperimentDataset,
    influence: &InfluenceMatrix,
    options: &HaipwOptions,
) -> Result<(f64, [f64; 2]), EstimatorError> {
    let halves = split_halves(dataset, child_seed(options.seed, 0xc0f));
    let k1 = influence.num_columns();
    for half in &halves {
        if half.len() < k1 + 1 {
            return Err(EstimatorError::TooFewUnits { needed: 2 * (k1 + 1), actual: dataset.len() });
        }
    }
    let parts: Vec<InfluenceMatrix> = halves.iter().map(|h| influence.select_rows(h)).collect();
    let mut estimates = [0.0; 2];
    for (this, other) in [(0, 1), (1, 0)] {
        let fitted = combine(&parts[other].columns, options.covariance_shrinkage)?;
        estimates[this] = numerics::dot(fitted.weights.as_slice(), &parts[this].column_means());
    }
    let n = dataset.len() as f64;
    let theta = (halves[0].len() as f64 * estimates[0] + halves[1].len() as f64 * estimates[1]) / n;
    Ok((theta, estimates))
}

fn split_halves(dataset: &ExperimentDataset, seed: u64) -> [Vec<usize>; 2] {
    let mut halves = [Vec::new(), Vec::new()];
    for arm in Arm::BOTH {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.units()[i].treatment == arm).collect();
        members.sort_by(|&a, &b| dataset.units()[a].id.cmp(&dataset.units()[b].id));
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(child_seed(seed, arm.index() as u64)));
        for (pos, i) in members.into_iter().enumerate() {
            halves[pos % 2].push(i);
        }
    }
    halves.iter_mut().for_each(|h| h.sort_unstable());
    halves
}

/// Prediction-powered estimator for trials: difference in means of
/// `Yᵢ − λ·f(Xᵢ)` where `f` is the model's control-arm prediction.
///
/// `λ` minimizes the plug-in variance
/// `Var₁(Y − λf)/n₁ + Var₀(Y − λf)/n₀`, giving
/// `λ = (C₁/n₁ + C₀/n₀) / (S₁/n₁ + S₀/n₀)` with arm-wise covariances `Cₐ`
/// of `(Y, f)` and variances `Sₐ` of `f`. A vanishing denominator gives `λ = 0`.
pub fn ppct_estimate(dataset: &ExperimentDataset, f: &OutcomePredictions, alpha: f64) -> Result<EstimateReport, EstimatorError> {
    check_alpha(alpha)?;
    f.check_aligned(dataset)?;
    let mut moments = Vec::with_capacity(2);
    for arm in Arm::BOTH {
        let (y, score): (Vec<f64>, Vec<f64>) = dataset
            .units()
            .iter()
            .zip(f.values())
            .filter(|(u, _)| u.treatment == arm)
            .map(|(u, p)| (u.outcome, p.control))
            .unzip();
        if y.len() < 2 {
            return Err(EstimatorError::ArmTooSmall { arm, count: y.len() });
        }
        let cov = numerics::sample_covariance(&[y.clone(), score.clone()])?;
        moments.push((y, score, cov));
    }
    let numerator: f64 = moments.iter().map(|(y, _, c)| c.get(0, 1) / y.len() as f64).sum();
    let denominator: f64 = moments.iter().map(|(y, _, c)| c.get(1, 1) / y.len() as f64).sum();
    let lambda = if denominator < PPCT_MIN_DENOMINATOR { 0.0 } else { numerator / denominator };

    let n = dataset.len() as f64;
    let mut theta = 0.0;
    let mut variance = 0.0;
    for (arm, (y, score, _)) in Arm::BOTH.into_iter().zip(&moments) {
        let adjusted: Vec<f64> = y.iter().zip(score).map(|(y, s)| y - lambda * s).collect();
        let sign = if arm == Arm::Treated { 1.0 } else { -1.0 };
        theta += sign * numerics::mean(&adjusted);
        variance += numerics::sample_variance(&adjusted)? / adjusted.len() as f64;
    }
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("lambda".into(), lambda);
    report("PPCT", theta, n * variance, dataset.len(), alpha, None, diagnostics)
}

/// Cross-fitted linear AIPW whose outcome regression also sees the external
/// predictions `f(X,0)` and `f(X,1)` as covariates.
pub fn procova_estimate(
    dataset: &ExperimentDataset,
    f: &OutcomePredictions,
    options: &EstimationOptions,
) -> Result<EstimateReport, EstimatorError> {
    f.check_aligned(dataset)?;
    let extra: Vec<Vec<f64>> = f.values().iter().map(|p| vec![p.control, p.treated]).collect();
    let fit = outcome_models::cross_fit_predictions_with_extra(dataset, OutcomeModelKind::Ridge, &options.cross_fit(), &extra)?;
    let mut r = aipw_estimate(dataset, &fit.predictions, options.alpha, "PROCOVA")?;
    r.diagnostics.extend(fit.diagnostics);
    Ok(r)
}

/// PPI++ estimate of the treated-arm mean `E[Y(1)]` with power-tuning `λ`:
/// `mean₁(Y) + λ·(mean₀(f) − mean₁(f))`.
pub fn ppi_plusplus_counterfactual(dataset: &ExperimentDataset, f: &[f64], lambda: f64) -> f64 {
    let mut sums = [0.0; 2];
    let mut preds = [0.0; 2];
    let mut counts = [0usize; 2];
    for (u, &fx) in dataset.units().iter().zip(f) {
        let a = u.treatment.index();
        sums[a] += u.outcome;
        preds[a] += fx;
        counts[a] += 1;
    }
    let n1 = counts[1] as f64;
    let n0 = counts[0] as f64;
    sums[1] / n1 + lambda * (-preds[1] / n1 + preds[0] / n0)
}

/// AIPW estimate of `E[Y(1)]` with an arm-agnostic model `f`:
/// `(1/n) Σ (Aᵢ(Yᵢ − f(Xᵢ))/π₁ + f(Xᵢ))`.
pub fn aipw_counterfactual_mean(dataset: &ExperimentDataset, f: &[f64]) -> f64 {
    let pi1 = dataset.pi1();
    let total: f64 = dataset
        .units()
        .iter()
        .zip(f)
        .map(|(u, &fx)| u.treatment.indicator() * (u.outcome - fx) / pi1 + fx)
        .sum();
    total / dataset.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorSpec {
    Dm,
    Aipw,
    AipwBoosted,
    Haipw,
    Ppct,
    Procova,
}

impl EstimatorSpec {
    pub const ALL: [EstimatorSpec; 6] = [
        EstimatorSpec::Dm,
        EstimatorSpec::Aipw,
        EstimatorSpec::AipwBoosted,
        EstimatorSpec::Ppct,
        EstimatorSpec::Procova,
        EstimatorSpec::Haipw,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorSpec::Dm => "DM",
            EstimatorSpec::Aipw => "AIPW",
            EstimatorSpec::AipwBoosted => "AIPW (boosting)",
            EstimatorSpec::Haipw => "H-AIPW",
            EstimatorSpec::Ppct => "PPCT",
            EstimatorSpec::Procova => "PROCOVA",
        }
    }

    pub fn needs_external_model(self) -> bool {
        matches!(self, EstimatorSpec::Ppct | EstimatorSpec::Procova)
    }
}

/// Cross-fitted ridge predictions and the standard AIPW report built on them.
pub fn standard_aipw(
    dataset: &ExperimentDataset,
    options: &EstimationOptions,
) -> Result<(EstimateReport, OutcomePredictions), EstimatorError> {
    let fit = outcome_models::cross_fit_predictions(dataset, OutcomeModelKind::Ridge, &options.cross_fit())?;
    let mut r = aipw_estimate(dataset, &fit.predictions, options.alpha, EstimatorSpec::Aipw.label())?;
    r.diagnostics.extend(fit.diagnostics);
    Ok((r, fit.predictions))
}

/// Runs each requested estimator on one dataset. The experimentally fitted
/// ridge model is computed once and shared by AIPW and H-AIPW.
pub fn run_estimators(
    dataset: &ExperimentDataset,
    external: &PredictionMatrix,
    specs: &[EstimatorSpec],
    options: &EstimationOptions,
) -> Result<Vec<EstimateReport>, EstimatorError> {
    external.check_aligned(dataset)?;
    let mut standard: Option<(EstimateReport, OutcomePredictions)> = None;
    let mut reports = Vec::with_capacity(specs.len());
    for &spec in specs {
        let r = match spec {
            EstimatorSpec::Dm => dm_estimate(dataset, options.alpha)?,
            EstimatorSpec::Aipw => {
                if standard.is_none() {
                    standard = Some(standard_aipw(dataset, options)?);
                }
                standard.as_ref().map(|(r, _)| r.clone()).expect("computed above")
            }
            EstimatorSpec::Haipw => {
                if standard.is_none() {
                    standard = Some(standard_aipw(dataset, options)?);
                }
                let (_, hhat) = standard.as_ref().expect("computed above");
                haipw_estimate(dataset, hhat, external, &options.haipw())?
            }
            EstimatorSpec::AipwBoosted => {
                let fit = outcome_models::cross_fit_predictions(dataset, OutcomeModelKind::Boosted, &options.cross_fit())?;
                let mut r = aipw_estimate(dataset, &fit.predictions, options.alpha, spec.label())?;
                r.diagnostics.extend(fit.diagnostics);
                r
            }
            EstimatorSpec::Ppct | EstimatorSpec::Procova => {
                let f = prognostic_model(external, options, spec)?;
                if spec == EstimatorSpec::Ppct {
                    ppct_estimate(dataset, &f, options.alpha)?
                } else {
                    procova_estimate(dataset, &f, options)?
                }
            }
        };
        reports.push(r);
    }
    Ok(reports)
}

fn prognostic_model(
    external: &PredictionMatrix,
    options: &EstimationOptions,
    spec: EstimatorSpec,
) -> Result<OutcomePredictions, EstimatorError> {
    let index = match &options.prognostic_model {
        Some(name) => external.model_index(name).ok_or_else(|| EstimatorError::UnknownModel(name.clone()))?,
        None if external.num_models() > 0 => 0,
        None => return Err(EstimatorError::NoExternalModel(spec.label())),
    };
    Ok(external.model(index))
}
