//! Average treatment effect estimation for randomized experiments.
//!
//! The crate combines the cross-fitted AIPW estimator with AIPW estimators
//! built on external prediction models, choosing the variance-minimizing
//! affine combination. Baseline estimators, a Monte Carlo validator and the
//! subsampling benchmark protocol live alongside it.

pub mod bench;
pub mod estimators;
pub mod model;
pub mod numerics;
pub mod outcome_models;
pub mod seeds;
pub mod simulation;

pub use estimators::{EstimatorError, EstimatorSpec, HaipwOptions};
pub use model::{
    align_predictions, validate_dataset, Arm, ArmPair, DataError, EstimateReport, ExperimentDataset,
    InfluenceMatrix, OutcomePredictions, PredictionMatrix, Unit, Weights,
};
