//! Outcome-regression models fitted on the experimental data, and the
//! cross-fitting scheme that turns them into out-of-fold predictions for both
//! arms.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Arm, ArmPair, DataError, ExperimentDataset, OutcomePredictions};
use crate::numerics::{self, NumericError, SymmetricMatrix};
use crate::seeds::child_seed;

pub const DEFAULT_FOLDS: usize = 30;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;
pub const DEFAULT_SELECTED_FEATURES: usize = 5;
pub const DEFAULT_BOOST_STAGES: usize = 100;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OutcomeModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("EmptyTrainingArm: training split for fold {fold} has no {arm} units")]
    EmptyTrainingArm { fold: usize, arm: Arm },
    #[error("extra feature rows: expected {expected}, got {actual}")]
    ExtraFeatureMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModelKind {
    Ridge,
    Boosted,
}

/// `y ≈ intercept + Σ coefficients[j] · x[feature_indices[j]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub feature_indices: Vec<usize>,
}

impl LinearModel {
    pub fn intercept_only(value: f64) -> Self {
        Self { intercept: value, coefficients: Vec::new(), feature_indices: Vec::new() }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(&self.feature_indices)
                .map(|(b, &j)| b * row[j])
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    /// Fitted residual mean for `x[feature] <= threshold`.
    pub left: f64,
    pub right: f64,
}

/// Gradient-boosted depth-1 regression trees under squared loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedStumpsModel {
    pub base_value: f64,
    pub learning_rate: f64,
    pub stages: Vec<Stump>,
}

impl BoostedStumpsModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.base_value
            + self
                .stages
                .iter()
                .map(|s| self.learning_rate * if row[s.feature] <= s.threshold { s.left } else { s.right })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FittedModel {
    Linear(LinearModel),
    Boosted(BoostedStumpsModel),
}

impl FittedModel {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            FittedModel::Linear(m) => m.predict(row),
            FittedModel::Boosted(m) => m.predict(row),
        }
    }
}

/// Indices of the `m` covariates with largest absolute Pearson correlation
/// against the outcome over the whole dataset, returned in increasing order.
pub fn select_features(dataset: &ExperimentDataset, m: usize) -> Vec<usize> {
    let rows: Vec<&[f64]> = dataset.units().iter().map(|u| u.covariates.as_slice()).collect();
    select_features_from(&rows, &dataset.outcomes(), dataset.dim(), m)
}

fn select_features_from(rows: &[&[f64]], targets: &[f64], dim: usize, m: usize) -> Vec<usize> {
    let m = m.min(dim);
    if m == dim {
        return (0..dim).collect();
    }
    let mut scored: Vec<(usize, f64)> = (0..dim)
        .map(|j| {
            let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let r = numerics::pearson_correlation(&column, targets).unwrap_or(0.0);
            (j, r.abs())
        })
        .collect();
    // Stable sort keeps lower indices first among equal scores.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut chosen: Vec<usize> = scored[..m].iter().map(|&(j, _)| j).collect();
    chosen.sort_unstable();
    chosen
}

/// Ridge regression with an unpenalized intercept, minimizing
/// `Σ (yᵢ − β₀ − βᵀxᵢ)² + λ‖β‖²`.
///
/// The intercept is eliminated by centering, which leaves the normal equations
/// `(XcᵀXc + λI) β = Xcᵀ yc`; these are solved with Cholesky.
pub fn fit_ridge(features: &[Vec<f64>], targets: &[f64], ridge_lambda: f64) -> Result<LinearModel, NumericError> {
    let rows: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    fit_ridge_rows(&rows, targets, ridge_lambda)
}

fn fit_ridge_rows(rows: &[&[f64]], targets: &[f64], ridge_lambda: f64) -> Result<LinearModel, NumericError> {
    let n = rows.len();
    if n == 0 || targets.len() != n {
        return Err(NumericError::LengthMismatch { left: n, right: targets.len() });
    }
    let d = rows[0].len();
    let y_mean = numerics::mean(targets);
    if d == 0 {
        return Ok(LinearModel::intercept_only(y_mean));
    }
    let x_mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let gram = SymmetricMatrix::from_fn(d, |a, b| {
        let s: f64 = rows.iter().map(|r| (r[a] - x_mean[a]) * (r[b] - x_mean[b])).sum();
        s + if a == b { ridge_lambda } else { 0.0 }
    });
    let rhs: Vec<f64> = (0..d)
        .map(|a| rows.iter().zip(targets).map(|(r, y)| (r[a] - x_mean[a]) * (y - y_mean)).sum())
        .collect();
    let beta = numerics::solve_spd(&gram, &rhs)?;
    let intercept = y_mean - numerics::dot(&beta, &x_mean);
    Ok(LinearModel { intercept, coefficients: beta, feature_indices: (0..d).collect() })
}

/// Ridge on z-scored columns of `rows` restricted to `columns`. Columns with
/// no spread in the training data are dropped; the returned model is expressed
/// on the original scale and indexes into the full row.
fn fit_standardized_ridge(
    rows: &[&[f64]],
    targets: &[f64],
    columns: &[usize],
    ridge_lambda: f64,
) -> Result<LinearModel, NumericError> {
    let n = rows.len() as f64;
    let mut kept = Vec::new();
    let mut centers = Vec::new();
    let mut scales = Vec::new();
    for &j in columns {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + m.abs()) {
            kept.push(j);
            centers.push(m);
            scales.push(sd);
        }
    }
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| kept.iter().enumerate().map(|(c, &j)| (r[j] - centers[c]) / scales[c]).collect())
        .collect();
    let fitted = fit_ridge(&z, targets, ridge_lambda)?;
    let coefficients: Vec<f64> = fitted.coefficients.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let intercept = fitted.intercept - coefficients.iter().zip(&centers).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearModel { intercept, coefficients, feature_indices: kept })
}

/// Least-squares gradient boosting of stumps on the residuals. Each stage
/// scans every feature for the split (at midpoints of consecutive distinct
/// sorted values) with the smallest residual SSE; boosting stops early once no
/// split lowers it.
pub fn fit_boosted_stumps(features: &[Vec<f64>], targets: &[f64], stages: usize, learning_rate: f64) -> BoostedStumpsModel {
    let rows: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    let columns: Vec<usize> = (0..rows.first().map_or(0, |r| r.len())).collect();
    fit_boosted_rows(&rows, targets, &columns, stages, learning_rate)
}

fn fit_boosted_rows(
    rows: &[&[f64]],
    targets: &[f64],
    columns: &[usize],
    stages: usize,
    learning_rate: f64,
) -> BoostedStumpsModel {
    let n = rows.len();
    let base_value = numerics::mean(targets);
    let mut model = BoostedStumpsModel { base_value, learning_rate, stages: Vec::new() };
    if n < 2 {
        return model;
    }
    let orders: Vec<(usize, Vec<usize>)> = columns
        .iter()
        .map(|&j| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| rows[a][j].total_cmp(&rows[b][j]));
            (j, order)
        })
        .collect();
    let mut residuals: Vec<f64> = targets.iter().map(|y| y - base_value).collect();

    for _ in 0..stages {
        let total: f64 = residuals.iter().sum();
        let baseline_gain = total * total / n as f64;
        let mut best: Option<(f64, Stump)> = None;
        for (j, order) in &orders {
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += residuals[order[pos]];
                let here = rows[order[pos]][*j];
                let next = rows[order[pos + 1]][*j];
                if here == next {
                    continue;
                }
                let left_n = (pos + 1) as f64;
                let right_n = (n - pos - 1) as f64;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / left_n + right_sum * right_sum / right_n;
                if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    let stump = Stump {
                        feature: *j,
                        threshold: 0.5 * (here + next),
                        left: left_sum / left_n,
                        right: right_sum / right_n,
                    };
                    best = Some((gain, stump));
                }
            }
        }
        let Some((gain, stump)) = best else { break };
        if !(gain > baseline_gain) {
            break;
        }
        for (r, row) in residuals.iter_mut().zip(rows) {
            *r -= learning_rate * if row[stump.feature] <= stump.threshold { stump.left } else { stump.right };
        }
        model.stages.push(stump);
    }
    model
}

/// Fold index per unit, in dataset order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    folds: Vec<usize>,
    k: usize,
    requested_k: usize,
}

impl FoldAssignment {
    pub fn fold_of(&self, unit: usize) -> usize {
        self.folds[unit]
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    /// Effective number of folds.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn requested_k(&self) -> usize {
        self.requested_k
    }

    pub fn clamped(&self) -> bool {
        self.k < self.requested_k
    }
}

/// Splits units into `k` folds stratified by arm. Within each arm, units are
/// sorted by id, shuffled with a seeded generator and dealt round-robin, so
/// the assignment depends on ids and seed only, not on row order. `k` is
/// clamped to the size of the smaller arm.
pub fn assign_folds(dataset: &ExperimentDataset, k: usize, seed: u64) -> FoldAssignment {
    let n0 = dataset.arm_count(Arm::Control);
    let n1 = dataset.arm_count(Arm::Treated);
    let effective = k.min(n0).min(n1).max(1);
    let mut folds = vec![0; dataset.len()];
    for arm in Arm::BOTH {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.units()[i].treatment == arm).collect();
        members.sort_by(|&a, &b| dataset.units()[a].id.cmp(&dataset.units()[b].id));
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, arm.index() as u64));
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            folds[i] = pos % effective;
        }
    }
    FoldAssignment { folds, k: effective, requested_k: k }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitOptions {
    pub folds: usize,
    pub seed: u64,
    pub ridge_lambda: f64,
    /// Number of covariates kept by correlation screening; `None` keeps all.
    pub feature_select: Option<usize>,
    pub boost_stages: usize,
    pub learning_rate: f64,
}

impl Default for CrossFitOptions {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed: 0,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            feature_select: Some(DEFAULT_SELECTED_FEATURES),
            boost_stages: DEFAULT_BOOST_STAGES,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossFit {
    pub predictions: OutcomePredictions,
    pub folds: FoldAssignment,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Which units trained the model that predicted a fold.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub fold: usize,
    pub arm: Arm,
    pub training_units: Vec<usize>,
    pub predicted_units: Vec<usize>,
}

/// Out-of-fold predictions `ĥ(Xᵢ, 0)` and `ĥ(Xᵢ, 1)` for every unit.
pub fn cross_fit_predictions(
    dataset: &ExperimentDataset,
    kind: OutcomeModelKind,
    options: &CrossFitOptions,
) -> Result<CrossFit, OutcomeModelError> {
    cross_fit_impl(dataset, kind, options, None, None)
}

/// Like [`cross_fit_predictions`], with per-unit `extra` features appended to
/// the covariates. Extra columns skip correlation screening and are always
/// offered to the model.
pub fn cross_fit_predictions_with_extra(
    dataset: &ExperimentDataset,
    kind: OutcomeModelKind,
    options: &CrossFitOptions,
    extra: &[Vec<f64>],
) -> Result<CrossFit, OutcomeModelError> {
    if extra.len() != dataset.len() {
        return Err(OutcomeModelError::ExtraFeatureMismatch { expected: dataset.len(), actual: extra.len() });
    }
    cross_fit_impl(dataset, kind, options, Some(extra), None)
}

/// [`cross_fit_predictions`] that also records every training split.
pub fn cross_fit_traced(
    dataset: &ExperimentDataset,
    kind: OutcomeModelKind,
    options: &CrossFitOptions,
) -> Result<(CrossFit, Vec<TrainingRecord>), OutcomeModelError> {
    let mut trace = Vec::new();
    let fit = cross_fit_impl(dataset, kind, options, None, Some(&mut trace))?;
    Ok((fit, trace))
}

fn cross_fit_impl(
    dataset: &ExperimentDataset,
    kind: OutcomeModelKind,
    options: &CrossFitOptions,
    extra: Option<&[Vec<f64>]>,
    mut trace: Option<&mut Vec<TrainingRecord>>,
) -> Result<CrossFit, OutcomeModelError> {
    let units = dataset.units();
    let d = dataset.dim();
    let design: Vec<Vec<f64>> = match extra {
        Some(extra) => units.iter().zip(extra).map(|(u, e)| u.covariates.iter().chain(e).copied().collect()).collect(),
        None => units.iter().map(|u| u.covariates.clone()).collect(),
    };
    let extra_columns: Vec<usize> = (d..design.first().map_or(d, Vec::len)).collect();
    let folds = assign_folds(dataset, options.folds, options.seed);
    let mut predictions = vec![ArmPair::new(f64::NAN, f64::NAN); dataset.len()];

    // Training rows are visited in id order so sums do not depend on row order.
    let mut by_id: Vec<usize> = (0..units.len()).collect();
    by_id.sort_by(|&a, &b| units[a].id.cmp(&units[b].id));

    for fold in 0..folds.k() {
        let training: Vec<usize> = by_id.iter().copied().filter(|&i| folds.fold_of(i) != fold).collect();
        let held_out: Vec<usize> = (0..units.len()).filter(|&i| folds.fold_of(i) == fold).collect();

        let mut columns = match options.feature_select {
            Some(m) if m < d => {
                let rows: Vec<&[f64]> = training.iter().map(|&i| units[i].covariates.as_slice()).collect();
                let targets: Vec<f64> = training.iter().map(|&i| units[i].outcome).collect();
                select_features_from(&rows, &targets, d, m)
            }
            _ => (0..d).collect(),
        };
        columns.extend_from_slice(&extra_columns);

        let mut fitted = Vec::with_capacity(2);
        for arm in Arm::BOTH {
            let arm_training: Vec<usize> = training.iter().copied().filter(|&i| units[i].treatment == arm).collect();
            if arm_training.is_empty() {
                return Err(OutcomeModelError::EmptyTrainingArm { fold, arm });
            }
            let rows: Vec<&[f64]> = arm_training.iter().map(|&i| design[i].as_slice()).collect();
            let targets: Vec<f64> = arm_training.iter().map(|&i| units[i].outcome).collect();
            let model = match kind {
                OutcomeModelKind::Ridge => {
                    FittedModel::Linear(fit_standardized_ridge(&rows, &targets, &columns, options.ridge_lambda)?)
                }
                OutcomeModelKind::Boosted => FittedModel::Boosted(fit_boosted_rows(
                    &rows,
                    &targets,
                    &columns,
                    options.boost_stages,
                    options.learning_rate,
                )),
            };
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(TrainingRecord {
                    fold,
                    arm,
                    training_units: arm_training,
                    predicted_units: held_out.clone(),
                });
            }
            fitted.push(model);
        }
        for &i in &held_out {
            predictions[i] = ArmPair::new(fitted[0].predict(&design[i]), fitted[1].predict(&design[i]));
        }
    }

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("folds_requested".into(), folds.requested_k() as f64);
    diagnostics.insert("folds_effective".into(), folds.k() as f64);
    diagnostics.insert("folds_clamped".into(), if folds.clamped() { 1.0 } else { 0.0 });
    if kind == OutcomeModelKind::Ridge {
        diagnostics.insert("ridge_lambda".into(), options.ridge_lambda);
        diagnostics.insert("standardized".into(), 1.0);
    }
    if let Some(m) = options.feature_select {
        diagnostics.insert("selected_features".into(), m.min(d) as f64);
    }
    let predictions = OutcomePredictions::for_dataset(dataset, predictions)?;
    Ok(CrossFit { predictions, folds, diagnostics })
}
