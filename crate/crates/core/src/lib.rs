//! Model-robust standardization for cluster-randomized trials.
//!
//! A working regression model (linear, mixed, GEE, or GLMM) is fitted to the
//! trial, its counterfactual cluster-mean predictions are combined with
//! inverse-probability weighted residuals, and the result is averaged with
//! cluster or individual weights. The estimator stays consistent for the
//! cluster-average and individual-average treatment effects whether or not
//! the working model is correct. Inference uses a leave-one-cluster-out
//! jackknife with t(m − 1) intervals.
//!
//! ```
//! use mrstd_core::{estimate, ClusterRecord, Contrast, EstimandSpec, EstimateOptions,
//!     ModelSpec, RandomizationDesign, TrialData};
//!
//! let c = |id: &str, t: bool, y: Vec<f64>| ClusterRecord::new(id, t, y, vec![], vec![]);
//! let data = TrialData::new(vec![
//!     c("a", true, vec![2.0, 4.0]),
//!     c("b", true, vec![5.0, 5.0, 5.0]),
//!     c("c", false, vec![1.0]),
//!     c("d", false, vec![2.0, 4.0, 3.0]),
//! ], 0, 0);
//! let r = estimate(&data, &RandomizationDesign::Simple(0.5), &ModelSpec::null(),
//!     &EstimandSpec::cluster(Contrast::Difference), EstimateOptions::default()).unwrap();
//! assert_eq!(r.estimate, 2.0);
//! ```

pub mod data;
pub mod error;
pub mod estimand;
pub mod ics;
pub mod inference;
pub(crate) mod linalg;
pub mod models;
pub(crate) mod optim;
pub mod randomization;
pub mod simulation;
pub mod standardization;

pub use data::{
    summarize, validate, ClusterRecord, ClusterSummary, LongFormatBuilder, LongRow, TrialData, Violation,
    ViolationKind,
};
pub use error::{Error, Result};
pub use estimand::{weights, Contrast, ContrastValue, CustomWeight, EstimandSpec, WeightScheme, Weights};
pub use ics::{ics_covariance_diagnostic, ics_test, IcsScale, IcsTestResult};
pub use inference::{jackknife, JackknifeResult, RefitPolicy};
pub use models::coef::{coef_estimate, CoefEstimate, SePolicy};
pub use models::{
    fit, icc, predict_cluster_mean, Family, FitDiagnostics, FittedWorkingModel, Icc, Link, Marginalization,
    ModelSpec, VarianceComponents, WorkingCorrelation,
};
pub use randomization::{assignment_probabilities, RandomizationDesign, SchemeMatrix};
pub use simulation::config::{SimulationConfig, SimulationPlan};
pub use simulation::{
    run_experiment, run_ics_power, true_estimands, DgpSpec, ExperimentConfig, ExperimentOutput, MetricsRow, Scenario,
    TruthValues,
};
pub use standardization::{estimate, estimate_many, EstimateOptions, EstimationResult, StandardizedMeans};
