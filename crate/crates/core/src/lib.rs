//! Design-based logistic regression for two-phase complex survey samples.
//!
//! The second-phase weights are calibrated to the weighted first-phase sample
//! on influence functions of a proxy model fitted over the whole first phase,
//! which recovers most of the first-phase information for the coefficients
//! while staying design consistent regardless of how good the proxy is.
//!
//! Module map:
//!
//! * [`datamodel`] rows, datasets, design frames, validation and CSV IO
//! * [`wlogit`] weighted logistic estimating equations and influence functions
//! * [`calib`] weight calibration (chi-square closed form, general Newton)
//! * [`pipeline`] the three-step calibration estimator and its comparators
//! * [`varest`] Taylor-linearization (stacked sandwich) variances and Wald intervals
//! * [`simgen`] finite-population generator and two-phase PPS samplers
//! * [`mcstudy`] Monte Carlo replication, summaries and efficiency sweeps
//! * [`config`] flat `key = value` configuration files
//! * [`cli`] the `twophase` command-line front end

pub mod calib;
pub mod cli;
pub mod config;
pub mod datamodel;
pub mod linalg;
pub mod mcstudy;
pub mod pipeline;
pub mod simgen;
pub mod varest;
pub mod wlogit;

pub use calib::{CalibrationProblem, CalibrationResult, Distance};
pub use datamodel::{DesignFrame, DesignType, Row, TwoPhaseDataset};
pub use pipeline::{EstimatorOutput, Method, PredictorSpec};
pub use varest::VarianceEstimate;
pub use wlogit::{LogisticFit, ModelSpec};

/// Tool version recorded in output metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
