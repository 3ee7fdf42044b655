//! JSON run configuration. Relative paths resolve against the config file's
//! directory; unknown keys are rejected.

use std::path::{Path, PathBuf};

use haipw_client::ProviderConfig;
use haipw_core::bench::VarianceMetric;
use haipw_core::estimators::EstimationOptions;
use haipw_core::simulation::{DgpConfig, SyntheticModelSpec};
use haipw_core::EstimatorSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub predictions: Option<PredictionsSection>,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub bench: Option<BenchSection>,
    #[serde(default)]
    pub reduce: Option<ReduceSection>,
    #[serde(default)]
    pub dgp: Option<DgpConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub predict: Option<PredictSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub path: PathBuf,
    #[serde(default)]
    pub pi1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsSection {
    pub path: PathBuf,
    /// Keep only these models, in this order.
    #[serde(default)]
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub alpha: f64,
    pub folds: usize,
    pub ridge_lambda: f64,
    pub feature_select_m: Option<usize>,
    pub boost_stages: usize,
    pub learning_rate: f64,
    pub shrinkage: f64,
    pub covariance_crossfit: bool,
    pub prognostic_model: Option<String>,
    pub estimators: Vec<EstimatorSpec>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let o = EstimationOptions::default();
        Self {
            alpha: o.alpha,
            folds: o.folds,
            ridge_lambda: o.ridge_lambda,
            feature_select_m: o.feature_select_m,
            boost_stages: o.boost_stages,
            learning_rate: o.learning_rate,
            shrinkage: o.covariance_shrinkage,
            covariance_crossfit: o.covariance_crossfit,
            prognostic_model: None,
            estimators: EstimatorSpec::ALL.to_vec(),
        }
    }
}

impl EstimatorSection {
    pub fn options(&self, seed: u64) -> EstimationOptions {
        EstimationOptions {
            alpha: self.alpha,
            folds: self.folds,
            seed,
            ridge_lambda: self.ridge_lambda,
            feature_select_m: self.feature_select_m,
            boost_stages: self.boost_stages,
            learning_rate: self.learning_rate,
            covariance_shrinkage: self.shrinkage,
            covariance_crossfit: self.covariance_crossfit,
            prognostic_model: self.prognostic_model.clone(),
        }
    }
}

/// One size or a list of sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sizes {
    One(usize),
    Many(Vec<usize>),
}

impl Sizes {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            Sizes::One(n) => vec![*n],
            Sizes::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub n: Sizes,
    #[serde(default = "default_bench_reps", rename = "R", alias = "repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub variance_metric: VarianceMetric,
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorSpec>>,
}

fn default_bench_reps() -> usize {
    haipw_core::bench::DESK_REPETITIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceSection {
    pub n: Sizes,
    #[serde(default = "default_reduce_reps", rename = "R", alias = "repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_baseline")]
    pub baseline: EstimatorSpec,
}

fn default_reduce_reps() -> usize {
    1000
}

fn default_baseline() -> EstimatorSpec {
    EstimatorSpec::Aipw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    #[serde(rename = "R", alias = "repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorSpec>>,
    #[serde(default)]
    pub excess_variance: Option<ExcessVarianceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcessVarianceSection {
    pub hhat: SyntheticModelSpec,
    #[serde(default = "default_big_n")]
    pub big_n: usize,
}

fn default_big_n() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub template: PathBuf,
    pub provider: ProviderConfig,
    #[serde(default = "default_prompts")]
    pub prompts_per_unit: usize,
    pub cache: PathBuf,
}

fn default_prompts() -> usize {
    10
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(s) = self.study.as_mut() {
            fix(&mut s.path);
        }
        if let Some(p) = self.predictions.as_mut() {
            fix(&mut p.path);
        }
        if let Some(p) = self.predict.as_mut() {
            fix(&mut p.template);
            fix(&mut p.cache);
        }
    }

    /// Checks value ranges that the JSON schema alone cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let e = &self.estimator;
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return bad(format!("estimator.alpha must lie in (0, 1), got {}", e.alpha));
        }
        if e.folds == 0 {
            return bad("estimator.folds must be at least 1".into());
        }
        if !(e.ridge_lambda >= 0.0) || !(e.shrinkage >= 0.0) {
            return bad("estimator.ridge_lambda and estimator.shrinkage must be non-negative".into());
        }
        if let Some(p) = self.study.as_ref().and_then(|s| s.pi1) {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("study.pi1 must lie in (0, 1), got {p}"));
            }
        }
        if let Some(b) = &self.bench {
            if b.repetitions == 0 || b.n.to_vec().is_empty() {
                return bad("bench needs at least one size and one repetition".into());
            }
        }
        if let Some(r) = &self.reduce {
            if r.repetitions == 0 || r.n.to_vec().is_empty() {
                return bad("reduce needs at least one size and one repetition".into());
            }
        }
        if let Some(s) = &self.simulate {
            if s.repetitions < 2 {
                return bad("simulate.R must be at least 2".into());
            }
        }
        if let Some(dgp) = &self.dgp {
            dgp.validate()?;
        }
        Ok(())
    }
}
