//! Monte Carlo harness: data-generating processes, super-population truth,
//! and replicated experiments with performance metrics.

pub mod config;
pub mod dgp;
pub mod experiment;
pub mod truth;

pub use dgp::{generate_replicate, generate_trial, DgpSpec, OutcomeType, Scenario};
pub use experiment::{
    base_models, run_experiment, run_ics_power, standard_models, Estimator, ExperimentConfig, ExperimentOutput,
    IcsPowerRow, MetricsRow, ModelEntry, Target,
};
pub use config::{Adjustment, ScenarioName, SimulationConfig, SimulationPlan, TruthConfig};
pub use truth::{scenario_contrast, true_estimands, TruthValues};
