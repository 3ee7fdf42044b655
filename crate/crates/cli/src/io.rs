//! Study and prediction CSV files.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use haipw_core::{Arm, ArmPair, DataError, ExperimentDataset, PredictionMatrix, Unit};
use serde::Serialize;

use crate::error::CliError;

const UNIT_ID: &str = "unit_id";
const TREATMENT: &str = "treatment";
const OUTCOME: &str = "outcome";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pi1Source {
    Override,
    Realized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedStudy {
    pub dataset: ExperimentDataset,
    pub covariate_names: Vec<String>,
    pub pi1_source: Pi1Source,
    pub warnings: Vec<String>,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path.display(), e))
}

fn headers(path: &Path, rdr: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>, CliError> {
    let headers: Vec<String> = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(CliError::Schema(format!("{}: duplicate column {h:?}", path.display())));
        }
    }
    Ok(headers)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.position() {
        Some(pos) => CliError::Parse { path: path.display().to_string(), line: pos.line(), column: 0, message: e.to_string() },
        None => CliError::io(path.display(), e),
    }
}

fn column(path: &Path, headers: &[String], name: &str) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Schema(format!("{}: missing required column {name:?}", path.display())))
}

fn parse_decimal(path: &Path, line: u64, column: usize, field: &str) -> Result<f64, CliError> {
    field.parse::<f64>().map_err(|_| CliError::Parse {
        path: path.display().to_string(),
        line,
        column: column + 1,
        message: format!("{field:?} is not a decimal number"),
    })
}

fn parse_arm(path: &Path, line: u64, column: usize, field: &str) -> Result<Arm, CliError> {
    match field {
        "0" => Ok(Arm::Control),
        "1" => Ok(Arm::Treated),
        other => Err(CliError::Parse {
            path: path.display().to_string(),
            line,
            column: column + 1,
            message: format!("{other:?} is not 0 or 1"),
        }),
    }
}

/// Reads a study file. Without an override, `π₁` is the realized treated
/// share and a warning is recorded.
pub fn load_study(path: &Path, pi1_override: Option<f64>) -> Result<LoadedStudy, CliError> {
    let mut rdr = reader(path)?;
    let headers = headers(path, &mut rdr)?;
    let id_col = column(path, &headers, UNIT_ID)?;
    let t_col = column(path, &headers, TREATMENT)?;
    let y_col = column(path, &headers, OUTCOME)?;
    let covariate_cols: Vec<usize> = (0..headers.len()).filter(|&j| j != id_col && j != t_col && j != y_col).collect();
    let covariate_names = covariate_cols.iter().map(|&j| headers[j].clone()).collect();

    let mut units = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let treatment = parse_arm(path, line, t_col, &record[t_col])?;
        let outcome = parse_decimal(path, line, y_col, &record[y_col])?;
        let covariates = covariate_cols
            .iter()
            .map(|&j| parse_decimal(path, line, j, &record[j]))
            .collect::<Result<Vec<f64>, _>>()?;
        units.push(Unit { id: record[id_col].to_owned(), covariates, treatment, outcome });
    }

    let n1 = units.iter().filter(|u| u.treatment == Arm::Treated).count();
    for (arm, count) in [(Arm::Treated, n1), (Arm::Control, units.len() - n1)] {
        if count == 0 {
            return Err(DataError::EmptyArm(arm).into());
        }
    }
    let (pi1, pi1_source, warnings) = match pi1_override {
        Some(p) => (p, Pi1Source::Override, Vec::new()),
        None => {
            let p = n1 as f64 / units.len() as f64;
            let w = format!(
                "WARNING: treatment probability not supplied; using the realized share pi1 = {p} ({n1} of {} units). \
                 Set study.pi1 to the design value.",
                units.len()
            );
            (p, Pi1Source::Realized, vec![w])
        }
    };
    let dataset = ExperimentDataset::new(units, pi1)?;
    Ok(LoadedStudy { dataset, covariate_names, pi1_source, warnings })
}

/// Reads a long-format predictions file and aligns it to `dataset`.
/// Repeated `(unit, model, arm)` rows are averaged.
pub fn load_predictions(path: &Path, dataset: &ExperimentDataset) -> Result<PredictionMatrix, CliError> {
    let mut rdr = reader(path)?;
    let headers = headers(path, &mut rdr)?;
    let expected = [UNIT_ID, "model", "arm", "value"];
    if let Some(extra) = headers.iter().find(|h| !expected.contains(&h.as_str())) {
        return Err(CliError::Schema(format!("{}: unexpected column {extra:?}", path.display())));
    }
    let cols: Vec<usize> = expected.iter().map(|name| column(path, &headers, name)).collect::<Result<_, _>>()?;

    let known: HashSet<&str> = dataset.ids().collect();
    let mut models: Vec<String> = Vec::new();
    let mut cells: HashMap<(String, String, Arm), (f64, usize)> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let unit = &record[cols[0]];
        if !known.contains(unit) {
            return Err(DataError::UnknownUnit(unit.to_owned()).into());
        }
        let model = &record[cols[1]];
        let arm = parse_arm(path, line, cols[2], &record[cols[2]])?;
        let value = parse_decimal(path, line, cols[3], &record[cols[3]])?;
        if !models.iter().any(|m| m == model) {
            models.push(model.to_owned());
        }
        let cell = cells.entry((model.to_owned(), unit.to_owned(), arm)).or_insert((0.0, 0));
        cell.0 += value;
        cell.1 += 1;
    }

    let mut values = Vec::with_capacity(models.len());
    for model in &models {
        let mut column = Vec::with_capacity(dataset.len());
        for unit in dataset.units() {
            let mut pair = [0.0; 2];
            for arm in Arm::BOTH {
                let (sum, count) = cells.get(&(model.clone(), unit.id.clone(), arm)).ok_or_else(|| CliError::MissingCell {
                    unit: unit.id.clone(),
                    model: model.clone(),
                    arm,
                })?;
                pair[arm.index()] = sum / *count as f64;
            }
            column.push(ArmPair::new(pair[0], pair[1]));
        }
        values.push(column);
    }
    Ok(PredictionMatrix::new(models, dataset.ids().map(str::to_owned).collect(), values)?)
}

/// Writes predictions in long format, one row per unit, model and arm.
pub fn write_predictions(path: &Path, predictions: &PredictionMatrix) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
    let io = |e: csv::Error| CliError::io(path.display(), e);
    wtr.write_record([UNIT_ID, "model", "arm", "value"]).map_err(io)?;
    for (j, model) in predictions.model_names().iter().enumerate() {
        for (id, pair) in predictions.ids().iter().zip(predictions.column(j)) {
            for arm in Arm::BOTH {
                let arm_text = (arm.index()).to_string();
                wtr.write_record([id.as_str(), model.as_str(), arm_text.as_str(), pair.get(arm).to_string().as_str()]).map_err(io)?;
            }
        }
    }
    wtr.flush().map_err(|e| CliError::io(path.display(), e))
}
