use haipw_client::ClientError;
use haipw_core::bench::BenchError;
use haipw_core::simulation::SimulationError;
use haipw_core::{Arm, DataError, EstimatorError};
use serde_json::json;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: String, line: u64, column: usize, message: String },
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Config(String),
    #[error("no prediction for unit {unit}, model {model}, arm {arm}")]
    MissingCell { unit: String, model: String, arm: Arm },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

impl CliError {
    pub fn io(path: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_string(), message: err.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Io { .. } => "IoError",
            CliError::Parse { .. } => "ParseError",
            CliError::Schema(_) => "SchemaError",
            CliError::Config(_) => "ConfigError",
            CliError::MissingCell { .. } => "MissingUnit",
            CliError::Data(e) => e.kind(),
            CliError::Estimator(e) => e.kind(),
            CliError::Bench(e) => e.kind(),
            CliError::Simulation(e) => e.kind(),
            CliError::Client(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        let numerical = match self {
            CliError::Usage(_) => return EXIT_USAGE,
            CliError::Estimator(e) => e.is_numerical(),
            CliError::Bench(e) => e.is_numerical(),
            CliError::Simulation(SimulationError::Repetition { source, .. }) => source.is_numerical(),
            _ => false,
        };
        if numerical {
            EXIT_NUMERICAL
        } else {
            EXIT_DATA
        }
    }

    /// Single-line JSON for standard error.
    pub fn to_json_line(&self) -> String {
        json!({"error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code()}).to_string()
    }
}
