//! Subsampling benchmark on a full study: repeated balanced subsamples of
//! size `n`, scaled variances, coverage of the full-sample difference in
//! means, and the sample-size reduction scan.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{self, EstimationOptions, EstimatorError, EstimatorSpec};
use crate::model::{Arm, DataError, EstimateReport, ExperimentDataset, PredictionMatrix};
use crate::numerics;
use crate::seeds::child_seed;

/// Smallest subsample considered by the reduction scan.
pub const MIN_SCAN_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("ArmExhausted: the {arm} arm has {available} unit(s), {needed} needed")]
    ArmExhausted { arm: Arm, needed: usize, available: usize },
    #[error("SubsampleTooLarge: n = {n} exceeds the {full} available units")]
    SubsampleTooLarge { n: usize, full: usize },
    #[error("NoRepetitions: at least one repetition is required")]
    NoRepetitions,
    #[error("UnknownModel: {0}")]
    UnknownModel(String),
    #[error("repetition {index}: {source}")]
    Repetition { index: usize, source: EstimatorError },
}

impl BenchError {
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Data(e) => e.kind(),
            BenchError::Estimator(e) | BenchError::Repetition { source: e, .. } => e.kind(),
            BenchError::ArmExhausted { .. } => "ArmExhausted",
            BenchError::SubsampleTooLarge { .. } => "SubsampleTooLarge",
            BenchError::NoRepetitions => "NoRepetitions",
            BenchError::UnknownModel(_) => "UnknownModel",
        }
    }

    pub fn is_numerical(&self) -> bool {
        match self {
            BenchError::Estimator(e) | BenchError::Repetition { source: e, .. } => e.is_numerical(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMetric {
    /// Mean of the reported `V̂_r`.
    #[default]
    Reported,
    /// `n` times the sample variance of `θ̂_r`.
    AcrossReps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub n: usize,
    pub repetitions: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variance_metric: VarianceMetric,
}

fn default_alpha() -> f64 {
    0.05
}

/// Repetition presets: a full-scale run and a quicker desk-scale one.
pub const FULL_REPETITIONS: usize = 10_000;
pub const DESK_REPETITIONS: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub estimator: String,
    /// The scaled variance under the configured metric.
    pub scaled_variance: f64,
    pub scaled_variance_reported: f64,
    /// Needs at least two repetitions.
    pub scaled_variance_across_reps: Option<f64>,
    pub coverage: f64,
    pub mean_estimate: f64,
    pub mean_ci_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub full_n: usize,
    pub repetitions: usize,
    pub alpha: f64,
    pub variance_metric: VarianceMetric,
    pub ground_truth_proxy: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn get(&self, estimator: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }
}

/// Indices of a balanced subsample: `⌊n/2⌋` treated and `⌈n/2⌉` control
/// units drawn without replacement, returned in dataset order.
pub fn subsample_indices(dataset: &ExperimentDataset, n: usize, seed: u64) -> Result<Vec<usize>, BenchError> {
    if n > dataset.len() {
        return Err(BenchError::SubsampleTooLarge { n, full: dataset.len() });
    }
    let mut chosen = Vec::with_capacity(n);
    for (arm, needed) in [(Arm::Treated, n / 2), (Arm::Control, n - n / 2)] {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.units()[i].treatment == arm).collect();
        if members.len() < needed {
            return Err(BenchError::ArmExhausted { arm, needed, available: members.len() });
        }
        members.sort_by(|&a, &b| dataset.units()[a].id.cmp(&dataset.units()[b].id));
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, arm.index() as u64));
        let (picked, _) = members.partial_shuffle(&mut rng, needed);
        chosen.extend_from_slice(picked);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Balanced subsample with `π₁ = n₁/n`.
pub fn subsample(dataset: &ExperimentDataset, n: usize, seed: u64) -> Result<ExperimentDataset, BenchError> {
    let idx = subsample_indices(dataset, n, seed)?;
    Ok(dataset.select(&idx, (n / 2) as f64 / n as f64)?)
}

/// Difference in means on the full study.
pub fn ground_truth_proxy(full: &ExperimentDataset) -> Result<f64, BenchError> {
    Ok(estimators::dm_estimate(full, 0.05)?.theta_hat)
}

/// Mean squared error of a model's factual-arm predictions.
pub fn model_mse(full: &ExperimentDataset, predictions: &PredictionMatrix, model: &str) -> Result<f64, BenchError> {
    predictions.check_aligned(full)?;
    let j = predictions.model_index(model).ok_or_else(|| BenchError::UnknownModel(model.to_owned()))?;
    let total: f64 = full
        .units()
        .iter()
        .zip(predictions.column(j))
        .map(|(u, p)| (p.get(u.treatment) - u.outcome).powi(2))
        .sum();
    Ok(total / full.len() as f64)
}

fn run_repetition(
    full: &ExperimentDataset,
    predictions: &PredictionMatrix,
    specs: &[EstimatorSpec],
    options: &EstimationOptions,
    n: usize,
    rep_seed: u64,
) -> Result<Vec<EstimateReport>, EstimatorError> {
    let idx = match subsample_indices(full, n, rep_seed) {
        Ok(idx) => idx,
        Err(BenchError::Data(e)) => return Err(e.into()),
        Err(other) => unreachable!("subsample preconditions checked before the run: {other}"),
    };
    let pi1 = (n / 2) as f64 / n as f64;
    let sub = full.select(&idx, pi1)?;
    assert_eq!(sub.arm_count(Arm::Treated), n / 2, "unbalanced subsample");
    assert_eq!(sub.arm_count(Arm::Control), n - n / 2, "unbalanced subsample");
    let opts = EstimationOptions { seed: child_seed(rep_seed, u64::MAX), ..options.clone() };
    estimators::run_estimators(&sub, &predictions.select(&idx), specs, &opts)
}

fn check_bench_inputs(full: &ExperimentDataset, predictions: &PredictionMatrix, n: usize) -> Result<(), BenchError> {
    predictions.check_aligned(full)?;
    subsample_indices(full, n, 0).map(|_| ())
}

/// Reports for every repetition, in repetition order. Repetition `r`
/// subsamples with the child seed `(seed, r)`.
pub fn bench_runs(
    full: &ExperimentDataset,
    predictions: &PredictionMatrix,
    config: &BenchConfig,
    options: &EstimationOptions,
) -> Result<Vec<Vec<EstimateReport>>, BenchError> {
    if config.repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    check_bench_inputs(full, predictions, config.n)?;
    let options = EstimationOptions { alpha: config.alpha, ..options.clone() };
    (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            run_repetition(full, predictions, &config.estimators, &options, config.n, child_seed(config.seed, r as u64))
                .map_err(|source| BenchError::Repetition { index: r, source })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

pub fn run_bench(
    full: &ExperimentDataset,
    predictions: &PredictionMatrix,
    config: &BenchConfig,
    options: &EstimationOptions,
) -> Result<BenchReport, BenchError> {
    let proxy = ground_truth_proxy(full)?;
    let runs = bench_runs(full, predictions, config, options)?;
    let r = runs.len() as f64;
    let n = config.n as f64;
    let rows = config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let reports: Vec<&EstimateReport> = runs.iter().map(|reps| &reps[j]).collect();
            let thetas: Vec<f64> = reports.iter().map(|x| x.theta_hat).collect();
            let reported = reports.iter().map(|x| x.variance_hat).sum::<f64>() / r;
            let across = numerics::sample_variance(&thetas).ok().map(|v| n * v);
            let scaled_variance = match config.variance_metric {
                VarianceMetric::Reported => reported,
                VarianceMetric::AcrossReps => across.unwrap_or(f64::NAN),
            };
            BenchRow {
                estimator: spec.label().to_owned(),
                scaled_variance,
                scaled_variance_reported: reported,
                scaled_variance_across_reps: across,
                coverage: reports.iter().filter(|x| x.covers(proxy)).count() as f64 / r,
                mean_estimate: numerics::mean(&thetas),
                mean_ci_width: reports.iter().map(|x| x.ci_width()).sum::<f64>() / r,
            }
        })
        .collect();
    Ok(BenchReport {
        n: config.n,
        full_n: full.len(),
        repetitions: config.repetitions,
        alpha: config.alpha,
        variance_metric: config.variance_metric,
        ground_truth_proxy: proxy,
        rows,
    })
}

/// Scaled variances as a Markdown table: one row per estimator, one column
/// per subsample size.
pub fn markdown_table(reports: &[BenchReport]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for rep in reports {
        for row in &rep.rows {
            if !labels.contains(&row.estimator.as_str()) {
                labels.push(&row.estimator);
            }
        }
    }
    let mut out = String::from("| Estimator |");
    for rep in reports {
        let _ = write!(out, " n = {} |", rep.n);
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(reports.len()));
    out.push('\n');
    for label in labels {
        let _ = write!(out, "| {label} |");
        for rep in reports {
            match rep.get(label) {
                Some(row) => {
                    let _ = write!(out, " {:.2} |", row.scaled_variance);
                }
                None => out.push_str(" – |"),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub n: usize,
    /// Smallest scanned size at which H-AIPW is at least as wide as the baseline.
    pub n_haipw: usize,
    pub percent: f64,
    pub baseline_mean_width: f64,
    pub haipw_mean_width: f64,
    /// H-AIPW was already as wide as the baseline at `n`.
    pub no_reduction: bool,
    /// No scanned size reached the baseline width; `n_haipw` is the scan floor.
    pub scan_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionConfig {
    pub n: usize,
    pub repetitions: usize,
    pub baseline: EstimatorSpec,
    #[serde(default)]
    pub seed: u64,
}

fn mean_width(
    full: &ExperimentDataset,
    predictions: &PredictionMatrix,
    spec: EstimatorSpec,
    options: &EstimationOptions,
    n: usize,
    config: &ReductionConfig,
) -> Result<f64, BenchError> {
    let widths = (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            run_repetition(full, predictions, &[spec], options, n, child_seed(config.seed, r as u64))
                .map(|reps| reps[0].ci_width())
                .map_err(|source| BenchError::Repetition { index: r, source })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(widths.iter().sum::<f64>() / widths.len() as f64)
}

/// Percentage of units H-AIPW saves relative to the baseline at size `n`.
///
/// The baseline's mean interval width at `n` is the target. Candidate sizes
/// `n' = n, n−1, …` are scanned with the same subsample seeds until H-AIPW's
/// mean width reaches the target; the reduction is `100·(1 − n'/n)`.
pub fn sample_size_reduction(
    full: &ExperimentDataset,
    predictions: &PredictionMatrix,
    config: &ReductionConfig,
    options: &EstimationOptions,
) -> Result<ReductionReport, BenchError> {
    if config.repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    check_bench_inputs(full, predictions, config.n)?;
    let target = mean_width(full, predictions, config.baseline, options, config.n, config)?;
    let floor = MIN_SCAN_SIZE.max(predictions.num_models() + 2).min(config.n);
    let mut last = (config.n, f64::NAN);
    for m in (floor..=config.n).rev() {
        let width = mean_width(full, predictions, EstimatorSpec::Haipw, options, m, config)?;
        last = (m, width);
        if width >= target {
            return Ok(reduction(config.n, m, target, width, false));
        }
    }
    Ok(reduction(config.n, last.0, target, last.1, true))
}

fn reduction(n: usize, m: usize, target: f64, width: f64, scan_exhausted: bool) -> ReductionReport {
    ReductionReport {
        n,
        n_haipw: m,
        percent: 100.0 * (1.0 - m as f64 / n as f64),
        baseline_mean_width: target,
        haipw_mean_width: width,
        no_reduction: m == n && !scan_exhausted,
        scan_exhausted,
    }
}
