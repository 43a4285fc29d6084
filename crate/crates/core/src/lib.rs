//! Confidence calibration for familiar and novel samples.
//!
//! The crate measures how well a classifier's confidence tracks its
//! correctness (NLL, Brier error, label error, ECE, E99), fits temperature
//! and novelty-weighted calibrators, averages ensembles, and ships a small
//! dense-network engine used to train single models, ensembles, distilled
//! students and MC-dropout models on 2D toy problems where part of the
//! feature space is never seen during training.

pub mod calibration;
pub mod distillation;
pub mod ensemble;
pub mod error;
pub mod math;
pub mod metrics;
pub mod mlp;
pub mod predictions;
pub mod report;
pub mod toybench;
pub mod uncertainty;

pub use calibration::Calibrator;
pub use error::{Error, Result};
pub use metrics::{EceBreakdown, GroupReports, MetricsReport};
pub use mlp::{MlpConfig, MlpModel, TrainConfig};
pub use predictions::{GroupTag, PredictionRecord, PredictionSet, ProbabilitySet};
pub use report::ReportTable;
