//! Synthetic experiments with known ground truth and a Monte Carlo driver.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{self, EstimationOptions, EstimatorError, EstimatorSpec};
use crate::model::{Arm, ArmPair, DataError, EstimateReport, ExperimentDataset, OutcomePredictions, PredictionMatrix, Unit};
use crate::numerics;
use crate::seeds::child_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("DegenerateDgp: {0}")]
    DegenerateDgp(String),
    #[error("TooFewUnits: need at least {needed} units, got {actual}")]
    TooFewUnits { needed: usize, actual: usize },
    #[error("TooFewRepetitions: need at least 2, got {0}")]
    TooFewRepetitions(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("repetition {index}: {source}")]
    Repetition { index: usize, source: EstimatorError },
}

impl SimulationError {
    pub fn kind(&self) -> &'static str {
        match self {
            SimulationError::DegenerateDgp(_) => "DegenerateDgp",
            SimulationError::TooFewUnits { .. } => "TooFewUnits",
            SimulationError::TooFewRepetitions(_) => "TooFewRepetitions",
            SimulationError::Data(e) => e.kind(),
            SimulationError::Repetition { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    StandardNormal,
    /// Uniform on `(−1, 1)`.
    Uniform,
}

impl CovariateLaw {
    fn second_moment(self) -> f64 {
        match self {
            CovariateLaw::StandardNormal => 1.0,
            CovariateLaw::Uniform => 1.0 / 3.0,
        }
    }

    fn survival(self, threshold: f64) -> f64 {
        match self {
            CovariateLaw::StandardNormal => 1.0 - numerics::normal_cdf(threshold),
            CovariateLaw::Uniform => ((1.0 - threshold) / 2.0).clamp(0.0, 1.0),
        }
    }
}

/// Conditional mean `E[Y(a) | X = x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanSpec {
    Linear { intercept: f64, coefficients: Vec<f64> },
    /// `intercept + Σ linear_j x_j + Σ quadratic_j x_j²`.
    Quadratic { intercept: f64, linear: Vec<f64>, quadratic: Vec<f64> },
    /// `high` when `x[feature] > threshold`, else `low`.
    Step { feature: usize, threshold: f64, low: f64, high: f64 },
}

impl MeanSpec {
    pub fn constant(value: f64, d: usize) -> Self {
        MeanSpec::Linear { intercept: value, coefficients: vec![0.0; d] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MeanSpec::Linear { intercept, coefficients } => intercept + numerics::dot(coefficients, x),
            MeanSpec::Quadratic { intercept, linear, quadratic } => {
                intercept + numerics::dot(linear, x) + quadratic.iter().zip(x).map(|(q, v)| q * v * v).sum::<f64>()
            }
            MeanSpec::Step { feature, threshold, low, high } => {
                if x[*feature] > *threshold {
                    *high
                } else {
                    *low
                }
            }
        }
    }

    /// `E[mean(X)]` under independent coordinates drawn from `law`.
    pub fn expectation(&self, law: CovariateLaw) -> f64 {
        match self {
            MeanSpec::Linear { intercept, .. } => *intercept,
            MeanSpec::Quadratic { intercept, quadratic, .. } => {
                intercept + law.second_moment() * quadratic.iter().sum::<f64>()
            }
            MeanSpec::Step { threshold, low, high, .. } => {
                let p = law.survival(*threshold);
                low + (high - low) * p
            }
        }
    }

    fn validate(&self, d: usize) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            MeanSpec::Linear { intercept, coefficients } => {
                if coefficients.len() != d {
                    return Err(format!("linear mean has {} coefficients for d = {d}", coefficients.len()));
                }
                if !intercept.is_finite() || !finite(coefficients) {
                    return Err("linear mean has non-finite parameters".into());
                }
            }
            MeanSpec::Quadratic { intercept, linear, quadratic } => {
                if linear.len() != d || quadratic.len() != d {
                    return Err(format!("quadratic mean needs {d} linear and {d} quadratic coefficients"));
                }
                if !intercept.is_finite() || !finite(linear) || !finite(quadratic) {
                    return Err("quadratic mean has non-finite parameters".into());
                }
            }
            MeanSpec::Step { feature, threshold, low, high } => {
                if *feature >= d {
                    return Err(format!("step feature {feature} out of range for d = {d}"));
                }
                if !finite(&[*threshold, *low, *high]) {
                    return Err("step mean has non-finite parameters".into());
                }
            }
        }
        Ok(())
    }
}

/// How a synthetic external model distorts the true conditional means `h*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticModelSpec {
    Oracle,
    /// `h*` plus independent `N(0, sd²)` noise per unit and arm.
    OraclePlusNoise { sd: f64 },
    /// `h* + bias` on `arm`, or on both arms when `arm` is absent.
    ConstantBias {
        bias: f64,
        #[serde(default)]
        arm: Option<Arm>,
    },
    /// `factor · h*`.
    SlopeBias { factor: f64 },
    /// `h*(x, 1 − a)`.
    ArmSwapped,
    /// `N(0, sd²)` draws unrelated to the data.
    PureNoise { sd: f64 },
}

impl SyntheticModelSpec {
    pub fn name(&self) -> String {
        match self {
            SyntheticModelSpec::Oracle => "oracle".into(),
            SyntheticModelSpec::OraclePlusNoise { sd } => format!("oracle_plus_noise({sd})"),
            SyntheticModelSpec::ConstantBias { bias, arm: None } => format!("constant_bias({bias})"),
            SyntheticModelSpec::ConstantBias { bias, arm: Some(a) } => format!("constant_bias({bias}, arm {a})"),
            SyntheticModelSpec::SlopeBias { factor } => format!("slope_bias({factor})"),
            SyntheticModelSpec::ArmSwapped => "arm_swapped".into(),
            SyntheticModelSpec::PureNoise { sd } => format!("pure_noise({sd})"),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = match self {
            SyntheticModelSpec::OraclePlusNoise { sd } | SyntheticModelSpec::PureNoise { sd } => sd.is_finite() && *sd >= 0.0,
            SyntheticModelSpec::ConstantBias { bias, .. } => bias.is_finite(),
            SyntheticModelSpec::SlopeBias { factor } => factor.is_finite(),
            SyntheticModelSpec::Oracle | SyntheticModelSpec::ArmSwapped => true,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid parameters for model {}", self.name()))
        }
    }

    /// The model's prediction for a unit whose true means are `truth`.
    pub fn predict<R: Rng>(&self, truth: ArmPair, rng: &mut R) -> ArmPair {
        match *self {
            SyntheticModelSpec::Oracle => truth,
            SyntheticModelSpec::OraclePlusNoise { sd } => {
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                ArmPair::new(truth.control + sd * e0, truth.treated + sd * e1)
            }
            SyntheticModelSpec::ConstantBias { bias, arm } => {
                let on = |a: Arm| if arm.is_none_or(|b| b == a) { bias } else { 0.0 };
                ArmPair::new(truth.control + on(Arm::Control), truth.treated + on(Arm::Treated))
            }
            SyntheticModelSpec::SlopeBias { factor } => ArmPair::new(factor * truth.control, factor * truth.treated),
            SyntheticModelSpec::ArmSwapped => ArmPair::new(truth.treated, truth.control),
            SyntheticModelSpec::PureNoise { sd } => {
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                ArmPair::new(sd * e0, sd * e1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub d: usize,
    pub covariate_law: CovariateLaw,
    pub mean0: MeanSpec,
    pub mean1: MeanSpec,
    pub noise_sd: f64,
    pub pi1: f64,
    #[serde(default)]
    pub model_specs: Vec<SyntheticModelSpec>,
}

impl DgpConfig {
    /// Exact `E[Y(1) − Y(0)]`.
    pub fn true_ate(&self) -> f64 {
        self.mean1.expectation(self.covariate_law) - self.mean0.expectation(self.covariate_law)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let fail = |m: String| Err(SimulationError::DegenerateDgp(m));
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return fail(format!("noise_sd must be finite and non-negative, got {}", self.noise_sd));
        }
        if !(self.pi1 > 0.0 && self.pi1 < 1.0) {
            return fail(format!("pi1 must lie in (0, 1), got {}", self.pi1));
        }
        for m in [&self.mean0, &self.mean1] {
            if let Err(msg) = m.validate(self.d) {
                return fail(msg);
            }
        }
        for s in &self.model_specs {
            if let Err(msg) = s.validate() {
                return fail(msg);
            }
        }
        Ok(())
    }

    pub fn truth(&self, x: &[f64]) -> ArmPair {
        ArmPair::new(self.mean0.eval(x), self.mean1.eval(x))
    }

    /// Prediction-matrix column names, made unique by suffixing repeats.
    pub fn model_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::with_capacity(self.model_specs.len());
        for s in &self.model_specs {
            let base = s.name();
            let mut name = base.clone();
            let mut copy = 2;
            while names.contains(&name) {
                name = format!("{base} #{copy}");
                copy += 1;
            }
            names.push(name);
        }
        names
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self.covariate_law {
            CovariateLaw::StandardNormal => (0..self.d).map(|_| rng.sample(StandardNormal)).collect(),
            CovariateLaw::Uniform => {
                let u = Uniform::new(-1.0, 1.0).expect("valid bounds");
                (0..self.d).map(|_| u.sample(rng)).collect()
            }
        }
    }

    fn draw_potential<R: Rng>(&self, truth: ArmPair, rng: &mut R) -> (f64, f64) {
        if self.noise_sd == 0.0 {
            return (truth.control, truth.treated);
        }
        let noise = Normal::new(0.0, self.noise_sd).expect("validated noise");
        (truth.control + noise.sample(rng), truth.treated + noise.sample(rng))
    }
}

/// One unit with both potential outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUnit {
    pub covariates: Vec<f64>,
    pub y0: f64,
    pub y1: f64,
    pub treatment: Arm,
}

impl SyntheticUnit {
    pub fn outcome(&self) -> f64 {
        match self.treatment {
            Arm::Control => self.y0,
            Arm::Treated => self.y1,
        }
    }
}

/// `n` i.i.d. units with Bernoulli(π₁) treatment, without any arm-size
/// conditioning.
pub fn draw_units(dgp: &DgpConfig, n: usize, seed: u64) -> Result<Vec<SyntheticUnit>, SimulationError> {
    dgp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let covariates = dgp.draw_covariates(&mut rng);
            let (y0, y1) = dgp.draw_potential(dgp.truth(&covariates), &mut rng);
            let treatment = if rng.random_bool(dgp.pi1) { Arm::Treated } else { Arm::Control };
            SyntheticUnit { covariates, y0, y1, treatment }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStudy {
    pub dataset: ExperimentDataset,
    pub predictions: PredictionMatrix,
    pub true_ate: f64,
    pub oracle: OutcomePredictions,
}

/// Draws a synthetic experiment of `n` units.
///
/// Covariates and potential outcomes are i.i.d.; treatment is Bernoulli(π₁)
/// independent of them. Treatment vectors leaving an arm with fewer than two
/// units are redrawn, which keeps treatment independent of the potential
/// outcomes. Each external model draws from its own stream, so adding a model
/// leaves the data unchanged.
pub fn generate(dgp: &DgpConfig, n: usize, seed: u64) -> Result<SyntheticStudy, SimulationError> {
    dgp.validate()?;
    if n < 4 {
        return Err(SimulationError::TooFewUnits { needed: 4, actual: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0));
    let mut draws: Vec<(Vec<f64>, ArmPair, f64, f64)> = Vec::with_capacity(n);
    for _ in 0..n {
        let x = dgp.draw_covariates(&mut rng);
        let truth = dgp.truth(&x);
        let (y0, y1) = dgp.draw_potential(truth, &mut rng);
        draws.push((x, truth, y0, y1));
    }
    let mut treat_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 1));
    let treatment = loop {
        let t: Vec<bool> = (0..n).map(|_| treat_rng.random_bool(dgp.pi1)).collect();
        let n1 = t.iter().filter(|&&b| b).count();
        if n1 >= 2 && n - n1 >= 2 {
            break t;
        }
    };

    let ids: Vec<String> = (0..n).map(|i| format!("s{i:06}")).collect();
    let units: Vec<Unit> = draws
        .iter()
        .zip(&treatment)
        .zip(&ids)
        .map(|(((x, _, y0, y1), &t), id)| Unit {
            id: id.clone(),
            covariates: x.clone(),
            treatment: if t { Arm::Treated } else { Arm::Control },
            outcome: if t { *y1 } else { *y0 },
        })
        .collect();
    let dataset = ExperimentDataset::new(units, dgp.pi1)?;
    let truths: Vec<ArmPair> = draws.iter().map(|(_, t, _, _)| *t).collect();
    let oracle = OutcomePredictions::new(ids.clone(), truths.clone())?;

    let names = dgp.model_names();
    let values: Vec<Vec<ArmPair>> = dgp
        .model_specs
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let mut r = ChaCha8Rng::seed_from_u64(child_seed(seed, 2 + j as u64));
            truths.iter().map(|&t| spec.predict(t, &mut r)).collect()
        })
        .collect();
    let predictions = PredictionMatrix::new(names, ids, values)?;
    Ok(SyntheticStudy { dataset, predictions, true_ate: dgp.true_ate(), oracle })
}

/// Monte Carlo summary for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub mean_estimate: f64,
    /// `n` times the sample variance of the estimates across repetitions.
    pub empirical_variance_of_sqrt_n_theta: f64,
    pub mean_reported_variance: f64,
    pub coverage: f64,
    pub mean_ci_width: f64,
    pub repetitions: usize,
}

impl EstimatorSummary {
    /// Monte Carlo standard error of `mean_estimate`.
    pub fn mc_standard_error(&self, n: usize) -> f64 {
        (self.empirical_variance_of_sqrt_n_theta / (n as f64 * self.repetitions as f64)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n: usize,
    pub true_ate: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl McSummary {
    pub fn get(&self, estimator: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == estimator)
    }
}

/// Reports of every estimator for every repetition, in repetition order.
#[derive(Debug, Clone, PartialEq)]
pub struct McRun {
    pub n: usize,
    pub true_ate: f64,
    pub repetitions: Vec<Vec<EstimateReport>>,
}

impl McRun {
    pub fn summarize(&self) -> McSummary {
        let r = self.repetitions.len();
        let labels: Vec<String> = self.repetitions.first().map(|reps| reps.iter().map(|x| x.estimator.clone()).collect()).unwrap_or_default();
        let estimators = labels
            .iter()
            .enumerate()
            .map(|(j, label)| {
                let reports: Vec<&EstimateReport> = self.repetitions.iter().map(|reps| &reps[j]).collect();
                let thetas: Vec<f64> = reports.iter().map(|x| x.theta_hat).collect();
                let avg = |f: &dyn Fn(&EstimateReport) -> f64| reports.iter().map(|x| f(x)).sum::<f64>() / r as f64;
                EstimatorSummary {
                    estimator: label.clone(),
                    mean_estimate: numerics::mean(&thetas),
                    empirical_variance_of_sqrt_n_theta: self.n as f64 * numerics::sample_variance(&thetas).unwrap_or(f64::NAN),
                    mean_reported_variance: avg(&|x| x.variance_hat),
                    coverage: avg(&|x| if x.covers(self.true_ate) { 1.0 } else { 0.0 }),
                    mean_ci_width: avg(&|x| x.ci_width()),
                    repetitions: r,
                }
            })
            .collect();
        McSummary { n: self.n, true_ate: self.true_ate, estimators }
    }

    /// Standardized errors `(θ̂_r − θ)/sqrt(V̂_r/n)` of one estimator.
    pub fn standardized_errors(&self, estimator: &str) -> Vec<f64> {
        self.repetitions
            .iter()
            .filter_map(|reps| reps.iter().find(|x| x.estimator == estimator))
            .map(|x| (x.theta_hat - self.true_ate) / (x.variance_hat / self.n as f64).sqrt())
            .collect()
    }
}

/// Runs the estimators on `repetitions` independent draws. Repetition `r`
/// uses the child seed `(seed, r)` for data and cross-fitting.
pub fn monte_carlo_runs(
    dgp: &DgpConfig,
    n: usize,
    repetitions: usize,
    specs: &[EstimatorSpec],
    options: &EstimationOptions,
    seed: u64,
) -> Result<McRun, SimulationError> {
    if repetitions < 2 {
        return Err(SimulationError::TooFewRepetitions(repetitions));
    }
    dgp.validate()?;
    let results: Vec<Result<Vec<EstimateReport>, SimulationError>> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let rep_seed = child_seed(seed, r as u64);
            let study = generate(dgp, n, rep_seed)?;
            let opts = EstimationOptions { seed: child_seed(rep_seed, u64::MAX), ..options.clone() };
            estimators::run_estimators(&study.dataset, &study.predictions, specs, &opts)
                .map_err(|source| SimulationError::Repetition { index: r, source })
        })
        .collect();
    let repetitions = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(McRun { n, true_ate: dgp.true_ate(), repetitions })
}

pub fn monte_carlo(
    dgp: &DgpConfig,
    n: usize,
    repetitions: usize,
    specs: &[EstimatorSpec],
    options: &EstimationOptions,
    seed: u64,
) -> Result<McSummary, SimulationError> {
    Ok(monte_carlo_runs(dgp, n, repetitions, specs, options, seed)?.summarize())
}

/// Population-level check of the excess-variance identity for a fixed model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessVarianceCheck {
    /// `mean((ψ(ĥ) − θ)²) − mean((ψ(h*) − θ)²)`.
    pub lhs: f64,
    /// `mean((sqrt(π₁/π₀)·Δh₀ + sqrt(π₀/π₁)·Δh₁)²)`.
    pub rhs: f64,
    /// Standard error of `lhs − rhs`.
    pub se: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
}

pub const MIN_EXCESS_DRAWS: usize = 100_000;

/// Draws `big_n` single units and compares the excess influence variance of
/// `hhat_spec` over the oracle with the weighted squared model error.
/// Both sides are centered at the true ATE.
pub fn excess_variance_check(
    dgp: &DgpConfig,
    hhat_spec: &SyntheticModelSpec,
    big_n: usize,
    seed: u64,
) -> Result<ExcessVarianceCheck, SimulationError> {
    dgp.validate()?;
    if let Err(msg) = hhat_spec.validate() {
        return Err(SimulationError::DegenerateDgp(msg));
    }
    if big_n < MIN_EXCESS_DRAWS {
        return Err(SimulationError::TooFewUnits { needed: MIN_EXCESS_DRAWS, actual: big_n });
    }
    let theta = dgp.true_ate();
    let (pi1, pi0) = (dgp.pi1, 1.0 - dgp.pi1);
    let (w0, w1) = ((pi1 / pi0).sqrt(), (pi0 / pi1).sqrt());
    let units = draw_units(dgp, big_n, child_seed(seed, 0))?;
    let mut model_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 1));
    let psi = |u: &SyntheticUnit, h: ArmPair| {
        let a = u.treatment.indicator();
        let y = u.outcome();
        (a / pi1 * (y - h.treated) + h.treated) - ((1.0 - a) / pi0 * (y - h.control) + h.control)
    };
    let mut excess = Vec::with_capacity(big_n);
    let mut penalty = Vec::with_capacity(big_n);
    for u in &units {
        let truth = dgp.truth(&u.covariates);
        let h = hhat_spec.predict(truth, &mut model_rng);
        let (p_hat, p_star) = (psi(u, h) - theta, psi(u, truth) - theta);
        excess.push(p_hat * p_hat - p_star * p_star);
        let dh = w0 * (h.control - truth.control) + w1 * (h.treated - truth.treated);
        penalty.push(dh * dh);
    }
    let diff: Vec<f64> = excess.iter().zip(&penalty).map(|(a, b)| a - b).collect();
    let se_of = |v: &[f64]| (numerics::sample_variance(v).unwrap_or(0.0) / v.len() as f64).sqrt();
    Ok(ExcessVarianceCheck {
        lhs: numerics::mean(&excess),
        rhs: numerics::mean(&penalty),
        se: se_of(&diff),
        se_lhs: se_of(&excess),
        se_rhs: se_of(&penalty),
    })
}
