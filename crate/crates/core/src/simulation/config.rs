//! Experiment configuration schema. Parsing the text format is left to the
//! caller; this module defines the fields, their defaults and their checks.

use serde::{Deserialize, Serialize};

use super::dgp::{DgpSpec, OutcomeType, Scenario};
use super::experiment::{base_models, standard_models, Estimator, ExperimentConfig, ModelEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    #[serde(rename = "cont_noninf")]
    ContNonInf,
    ContInf,
    #[serde(rename = "bin_noninf")]
    BinNonInf,
    BinInf,
    ContIcs,
    BinIcs,
}

impl ScenarioName {
    fn with_delta(self, delta: f64) -> Scenario {
        match self {
            ScenarioName::ContNonInf => Scenario::ContNonInf,
            ScenarioName::ContInf => Scenario::ContInf,
            ScenarioName::BinNonInf => Scenario::BinNonInf,
            ScenarioName::BinInf => Scenario::BinInf,
            ScenarioName::ContIcs => Scenario::ContIcs { delta },
            ScenarioName::BinIcs => Scenario::BinIcs { delta },
        }
    }

    fn is_ics(self) -> bool {
        matches!(self, ScenarioName::ContIcs | ScenarioName::BinIcs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    Unadjusted,
    Adjusted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    /// Super-population size.
    #[serde(default = "default_truth_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Known values; when both are given no super-population is simulated.
    pub delta_c: Option<f64>,
    pub delta_i: Option<f64>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self { size: default_truth_size(), seed: 0, delta_c: None, delta_i: None }
    }
}

fn default_truth_size() -> usize {
    1_000_000
}

fn default_level() -> f64 {
    0.95
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenario: ScenarioName,
    pub m: usize,
    pub n_sim: usize,
    #[serde(default)]
    pub seed: u64,
    /// δ grid for the ICS scenarios.
    #[serde(default)]
    pub deltas: Vec<f64>,
    pub size_min: Option<usize>,
    pub size_max: Option<usize>,
    pub gamma_variance: Option<f64>,
    /// Base model names (W1–W4 continuous, W5–W8 binary); all by default.
    pub models: Option<Vec<String>>,
    /// Which adjustment variants to run; both by default (adjusted only for ICS).
    pub adjustment: Option<Vec<Adjustment>>,
    /// Further working models given in full.
    #[serde(default)]
    pub custom_models: Vec<ModelEntry>,
    pub estimators: Option<Vec<Estimator>>,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Test level for the ICS scenarios.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub truth: TruthConfig,
}

/// What a configuration asks for.
#[derive(Debug, Clone)]
pub enum SimulationPlan {
    Metrics { experiment: ExperimentConfig, truth: TruthConfig },
    IcsPower { dgps: Vec<DgpSpec>, models: Vec<ModelEntry>, n_sim: usize, seed: u64, alpha: f64 },
}

impl SimulationConfig {
    fn dgp(&self, delta: f64) -> DgpSpec {
        let mut d = DgpSpec::new(self.scenario.with_delta(delta), self.m);
        if let Some(lo) = self.size_min {
            d.size_min = lo;
        }
        if let Some(hi) = self.size_max {
            d.size_max = hi;
        }
        if let Some(v) = self.gamma_variance {
            d.gamma_variance = v;
        }
        d
    }

    fn model_grid(&self, outcome: OutcomeType) -> Result<Vec<ModelEntry>> {
        let default_adj =
            if self.scenario.is_ics() { vec![Adjustment::Adjusted] } else { vec![Adjustment::Unadjusted, Adjustment::Adjusted] };
        let adjustments = self.adjustment.clone().unwrap_or(default_adj);
        let mut grid = Vec::new();
        for adj in adjustments {
            let all = base_models(outcome, adj == Adjustment::Adjusted);
            match &self.models {
                None => grid.extend(all),
                Some(names) => {
                    for name in names {
                        let entry = all.iter().find(|e| &e.name == name).ok_or_else(|| {
                            let known: Vec<&str> = all.iter().map(|e| e.name.as_str()).collect();
                            Error::InvalidInput(format!(
                                "unknown model '{name}' for this outcome type (expected one of {})",
                                known.join(", ")
                            ))
                        })?;
                        grid.push(entry.clone());
                    }
                }
            }
        }
        for custom in &self.custom_models {
            custom.spec.check()?;
            grid.push(custom.clone());
        }
        if grid.is_empty() {
            return Err(Error::InvalidInput("the model grid is empty".into()));
        }
        debug_assert!(standard_models(outcome).len() == 8);
        Ok(grid)
    }

    /// Checks every field and resolves defaults.
    pub fn plan(&self) -> Result<SimulationPlan> {
        if self.n_sim == 0 {
            return Err(Error::InvalidInput("n_sim must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput("level and alpha must lie in (0, 1)".into()));
        }
        let outcome = self.dgp(0.0).scenario.outcome();
        let models = self.model_grid(outcome)?;
        if self.scenario.is_ics() {
            if self.deltas.is_empty() {
                return Err(Error::InvalidInput("ICS scenarios need a non-empty `deltas` list".into()));
            }
            let dgps: Vec<DgpSpec> = self.deltas.iter().map(|&d| self.dgp(d)).collect();
            for d in &dgps {
                d.check()?;
            }
            return Ok(SimulationPlan::IcsPower { dgps, models, n_sim: self.n_sim, seed: self.seed, alpha: self.alpha });
        }
        if !self.deltas.is_empty() {
            return Err(Error::InvalidInput("`deltas` only applies to the ICS scenarios".into()));
        }
        let dgp = self.dgp(0.0);
        dgp.check()?;
        if self.truth.delta_c.is_some() != self.truth.delta_i.is_some() {
            return Err(Error::InvalidInput("give both truth.delta_c and truth.delta_i, or neither".into()));
        }
        let mut experiment = ExperimentConfig::new(dgp, self.n_sim, self.seed).with_models(models);
        if let Some(e) = &self.estimators {
            if e.is_empty() {
                return Err(Error::InvalidInput("the estimator list is empty".into()));
            }
            experiment = experiment.with_estimators(e.clone());
        }
        experiment.level = self.level;
        Ok(SimulationPlan::Metrics { experiment, truth: self.truth.clone() })
    }
}
