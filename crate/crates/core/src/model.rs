//! Experimental data, outcome predictions and estimate reports.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::SymmetricMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("EmptyArm: no units in the {0} arm")]
    EmptyArm(Arm),
    #[error("NonFinite: unit {0} has a non-finite covariate or outcome")]
    NonFinite(String),
    #[error("DuplicateId: unit id {0} appears more than once")]
    DuplicateId(String),
    #[error("BadPropensity: treatment probability {0} is outside (0, 1)")]
    BadPropensity(f64),
    #[error("DimensionMismatch: unit {id} has {actual} covariates, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, actual: usize },
    #[error("TooFewUnits: need at least {needed} units, got {actual}")]
    TooFewUnits { needed: usize, actual: usize },
    #[error("MissingUnit: no prediction for unit {0}")]
    MissingUnit(String),
    #[error("UnknownUnit: prediction for unit {0} which is not in the dataset")]
    UnknownUnit(String),
    #[error("MisalignedPredictions: prediction rows do not follow dataset unit order")]
    MisalignedPredictions,
}

impl DataError {
    /// Stable error name used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            DataError::EmptyArm(_) => "EmptyArm",
            DataError::NonFinite(_) => "NonFinite",
            DataError::DuplicateId(_) => "DuplicateId",
            DataError::BadPropensity(_) => "BadPropensity",
            DataError::DimensionMismatch { .. } => "DimensionMismatch",
            DataError::TooFewUnits { .. } => "TooFewUnits",
            DataError::MissingUnit(_) => "MissingUnit",
            DataError::UnknownUnit(_) => "UnknownUnit",
            DataError::MisalignedPredictions => "MisalignedPredictions",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn from_index(i: u8) -> Option<Arm> {
        match i {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    /// `1.0` for treated, `0.0` for control.
    pub fn indicator(self) -> f64 {
        self.index() as f64
    }
}

impl From<Arm> for u8 {
    fn from(arm: Arm) -> u8 {
        arm.index() as u8
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Arm::from_index(v).ok_or_else(|| format!("treatment must be 0 or 1, got {v}"))
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Control => write!(f, "control"),
            Arm::Treated => write!(f, "treated"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    pub covariates: Vec<f64>,
    pub treatment: Arm,
    pub outcome: f64,
}

/// Units of a randomized experiment together with the design probability of
/// treatment. Construction validates every invariant, so a value of this type
/// is always usable by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct ExperimentDataset {
    units: Vec<Unit>,
    pi1: f64,
    dim: usize,
}

#[derive(Deserialize)]
struct RawDataset {
    units: Vec<Unit>,
    pi1: f64,
}

impl TryFrom<RawDataset> for ExperimentDataset {
    type Error = DataError;
    fn try_from(raw: RawDataset) -> Result<Self, DataError> {
        ExperimentDataset::new(raw.units, raw.pi1)
    }
}

impl ExperimentDataset {
    pub fn new(units: Vec<Unit>, pi1: f64) -> Result<Self, DataError> {
        let dim = units.first().map_or(0, |u| u.covariates.len());
        let dataset = Self { units, pi1, dim };
        validate_dataset(&dataset)?;
        Ok(dataset)
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn pi1(&self) -> f64 {
        self.pi1
    }

    pub fn pi0(&self) -> f64 {
        1.0 - self.pi1
    }

    pub fn pi(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.pi0(),
            Arm::Treated => self.pi1,
        }
    }

    /// Covariate dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn arm_count(&self, arm: Arm) -> usize {
        self.units.iter().filter(|u| u.treatment == arm).count()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.units.iter().map(|u| u.id.as_str())
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.outcome).collect()
    }

    /// Same units with a different treatment probability.
    pub fn with_pi1(&self, pi1: f64) -> Result<Self, DataError> {
        Self::new(self.units.clone(), pi1)
    }

    /// Units at `indices`, in that order, with treatment probability `pi1`.
    pub fn select(&self, indices: &[usize], pi1: f64) -> Result<Self, DataError> {
        Self::new(indices.iter().map(|&i| self.units[i].clone()).collect(), pi1)
    }
}

/// Checks every [`ExperimentDataset`] invariant.
pub fn validate_dataset(dataset: &ExperimentDataset) -> Result<(), DataError> {
    let units = &dataset.units;
    if !(dataset.pi1 > 0.0 && dataset.pi1 < 1.0) {
        return Err(DataError::BadPropensity(dataset.pi1));
    }
    if units.len() < 2 {
        return Err(DataError::TooFewUnits { needed: 2, actual: units.len() });
    }
    let mut seen = HashSet::with_capacity(units.len());
    for u in units {
        if u.covariates.len() != dataset.dim {
            return Err(DataError::DimensionMismatch {
                id: u.id.clone(),
                expected: dataset.dim,
                actual: u.covariates.len(),
            });
        }
        if !u.outcome.is_finite() || u.covariates.iter().any(|x| !x.is_finite()) {
            return Err(DataError::NonFinite(u.id.clone()));
        }
        if !seen.insert(u.id.as_str()) {
            return Err(DataError::DuplicateId(u.id.clone()));
        }
    }
    for arm in Arm::BOTH {
        if !units.iter().any(|u| u.treatment == arm) {
            return Err(DataError::EmptyArm(arm));
        }
    }
    Ok(())
}

/// Predicted outcomes `(f(x, 0), f(x, 1))` for one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPair {
    pub control: f64,
    pub treated: f64,
}

impl ArmPair {
    pub fn new(control: f64, treated: f64) -> Self {
        Self { control, treated }
    }

    pub fn get(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.control,
            Arm::Treated => self.treated,
        }
    }

    fn is_finite(&self) -> bool {
        self.control.is_finite() && self.treated.is_finite()
    }
}

/// Predictions of a single outcome model, one [`ArmPair`] per unit id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomePredictions {
    ids: Vec<String>,
    values: Vec<ArmPair>,
}

impl OutcomePredictions {
    pub fn new(ids: Vec<String>, values: Vec<ArmPair>) -> Result<Self, DataError> {
        if ids.len() != values.len() {
            return Err(DataError::TooFewUnits { needed: ids.len(), actual: values.len() });
        }
        check_predictions(&ids, std::iter::once(values.as_slice()))?;
        Ok(Self { ids, values })
    }

    /// Predictions listed in the dataset's unit order.
    pub fn for_dataset(dataset: &ExperimentDataset, values: Vec<ArmPair>) -> Result<Self, DataError> {
        Self::new(dataset.ids().map(str::to_owned).collect(), values)
    }

    /// The same prediction for every unit.
    pub fn constant(dataset: &ExperimentDataset, pair: ArmPair) -> Self {
        Self {
            ids: dataset.ids().map(str::to_owned).collect(),
            values: vec![pair; dataset.len()],
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[ArmPair] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Errors unless rows follow the dataset's unit order exactly.
    pub fn check_aligned(&self, dataset: &ExperimentDataset) -> Result<(), DataError> {
        if self.ids.len() != dataset.len() || !self.ids.iter().map(String::as_str).eq(dataset.ids()) {
            return Err(DataError::MisalignedPredictions);
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            values: indices.iter().map(|&i| self.values[i]).collect(),
        }
    }

    pub fn add_constant(&self, shift: f64) -> Self {
        Self {
            ids: self.ids.clone(),
            values: self
                .values
                .iter()
                .map(|p| ArmPair::new(p.control + shift, p.treated + shift))
                .collect(),
        }
    }
}

/// Predictions of `k` external models. Rows are unit ids; each model
/// contributes one [`ArmPair`] per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    model_names: Vec<String>,
    ids: Vec<String>,
    /// `values[model][row]`
    values: Vec<Vec<ArmPair>>,
}

impl PredictionMatrix {
    pub fn new(model_names: Vec<String>, ids: Vec<String>, values: Vec<Vec<ArmPair>>) -> Result<Self, DataError> {
        if model_names.len() != values.len() {
            return Err(DataError::TooFewUnits { needed: model_names.len(), actual: values.len() });
        }
        for column in &values {
            if column.len() != ids.len() {
                return Err(DataError::TooFewUnits { needed: ids.len(), actual: column.len() });
            }
        }
        check_predictions(&ids, values.iter().map(Vec::as_slice))?;
        Ok(Self { model_names, ids, values })
    }

    /// A matrix without models covering `dataset`.
    pub fn empty(dataset: &ExperimentDataset) -> Self {
        Self { model_names: Vec::new(), ids: dataset.ids().map(str::to_owned).collect(), values: Vec::new() }
    }

    pub fn from_models(models: Vec<(String, OutcomePredictions)>) -> Result<Self, DataError> {
        let ids = models.first().map(|(_, p)| p.ids.clone()).unwrap_or_default();
        let mut names = Vec::with_capacity(models.len());
        let mut values = Vec::with_capacity(models.len());
        for (name, p) in models {
            if p.ids != ids {
                return Err(DataError::MisalignedPredictions);
            }
            names.push(name);
            values.push(p.values);
        }
        Self::new(names, ids, values)
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn num_models(&self) -> usize {
        self.model_names.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.model_names.iter().position(|m| m == name)
    }

    pub fn column(&self, model: usize) -> &[ArmPair] {
        &self.values[model]
    }

    /// One model's predictions as a standalone [`OutcomePredictions`].
    pub fn model(&self, model: usize) -> OutcomePredictions {
        OutcomePredictions { ids: self.ids.clone(), values: self.values[model].clone() }
    }

    pub fn models(&self) -> impl Iterator<Item = (&str, OutcomePredictions)> + '_ {
        self.model_names.iter().enumerate().map(|(j, name)| (name.as_str(), self.model(j)))
    }

    pub fn check_aligned(&self, dataset: &ExperimentDataset) -> Result<(), DataError> {
        if self.ids.len() != dataset.len() || !self.ids.iter().map(String::as_str).eq(dataset.ids()) {
            return Err(DataError::MisalignedPredictions);
        }
        Ok(())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            model_names: self.model_names.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            values: self.values.iter().map(|col| indices.iter().map(|&i| col[i]).collect()).collect(),
        }
    }

    /// Keeps only the named models, in the given order.
    pub fn subset(&self, names: &[String]) -> Result<Self, String> {
        let mut values = Vec::with_capacity(names.len());
        for name in names {
            let j = self.model_index(name).ok_or_else(|| name.clone())?;
            values.push(self.values[j].clone());
        }
        Ok(Self { model_names: names.to_vec(), ids: self.ids.clone(), values })
    }
}

fn check_predictions<'a>(ids: &[String], columns: impl Iterator<Item = &'a [ArmPair]>) -> Result<(), DataError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DataError::DuplicateId(id.clone()));
        }
    }
    for column in columns {
        if let Some(row) = column.iter().position(|p| !p.is_finite()) {
            return Err(DataError::NonFinite(ids[row].clone()));
        }
    }
    Ok(())
}

/// Reorders `predictions` to the dataset's unit order. Alignment is by id;
/// every dataset unit must be present and no other id may appear.
pub fn align_predictions(
    dataset: &ExperimentDataset,
    predictions: &PredictionMatrix,
) -> Result<PredictionMatrix, DataError> {
    let position: HashMap<&str, usize> =
        predictions.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let dataset_ids: HashSet<&str> = dataset.ids().collect();
    if let Some(extra) = predictions.ids.iter().find(|id| !dataset_ids.contains(id.as_str())) {
        return Err(DataError::UnknownUnit(extra.clone()));
    }
    let mut order = Vec::with_capacity(dataset.len());
    for id in dataset.ids() {
        match position.get(id) {
            Some(&i) => order.push(i),
            None => return Err(DataError::MissingUnit(id.to_owned())),
        }
    }
    Ok(predictions.select(&order))
}

/// Per-unit influence values, one named column per candidate outcome model.
/// Column 0 is always the model fitted on the experimental data.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl InfluenceMatrix {
    pub fn num_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_means(&self) -> Vec<f64> {
        self.columns.iter().map(|c| crate::numerics::mean(c)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
        }
    }
}

/// Combination weights on the affine set `{λ : Σλ = 1}`. Entries may be
/// negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights(pub Vec<f64>);

impl Weights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Covariance of influence columns after any ridge-style shrinkage.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: SymmetricMatrix,
    /// `ε` such that `matrix = Σ̂ + ε·mean(diag Σ̂)·I`.
    pub regularization_applied: f64,
    pub condition_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub theta_hat: f64,
    /// Variance of `√n·θ̂`.
    pub variance_hat: f64,
    pub n: usize,
    pub alpha: f64,
    pub ci: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub fn ci_width(&self) -> f64 {
        self.ci.1 - self.ci.0
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }
}
