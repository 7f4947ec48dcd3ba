//! Analysis configuration read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mrstd_core::simulation::{base_models, OutcomeType};
use mrstd_core::{Contrast, IcsScale, ModelSpec, RefitPolicy};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    pub cluster_id: String,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub cluster_covariates: Vec<String>,
    pub stratum: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignConfig {
    Simple {
        #[serde(default = "half")]
        probability: f64,
    },
    Stratified {
        probabilities: BTreeMap<String, f64>,
    },
    PairMatched,
    /// Scheme matrix file: one row per admissible scheme, one 0/1 column per cluster.
    Constrained {
        schemes: PathBuf,
        #[serde(default)]
        header: bool,
    },
}

fn half() -> f64 {
    0.5
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig::Simple { probability: 0.5 }
    }
}

/// A working model: a named preset (W1–W8) or a full specification.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: Option<String>,
    pub preset: Option<String>,
    pub adjusted: Option<bool>,
    pub spec: Option<ModelSpec>,
}

impl ModelConfig {
    pub fn resolve(&self) -> Result<(String, ModelSpec), CliError> {
        match (&self.preset, &self.spec) {
            (Some(preset), None) => {
                let adjusted = self.adjusted.unwrap_or(false);
                let entry = [OutcomeType::Continuous, OutcomeType::Binary]
                    .into_iter()
                    .flat_map(|o| base_models(o, adjusted))
                    .find(|e| &e.name == preset)
                    .ok_or_else(|| CliError::input(format!("unknown model preset '{preset}' (W1 to W8)")))?;
                Ok((self.name.clone().unwrap_or_else(|| entry.label()), entry.spec))
            }
            (None, Some(spec)) => {
                if self.adjusted.is_some() {
                    return Err(CliError::input("`adjusted` belongs inside `spec` for a full model specification"));
                }
                spec.check().map_err(CliError::input)?;
                Ok((self.name.clone().unwrap_or_else(|| spec.label()), spec.clone()))
            }
            _ => Err(CliError::input("each model needs exactly one of `preset` or `spec`")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum WeightsConfig {
    Named(NamedWeights),
    /// Clusters whose cluster covariate `subgroup` equals `value`.
    Subgroup { subgroup: String, value: f64 },
    /// A cluster-constant column of the input holding ω_i.
    Column { column: String },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedWeights {
    Cluster,
    Individual,
}

impl WeightsConfig {
    pub fn label(&self) -> String {
        match self {
            WeightsConfig::Named(NamedWeights::Cluster) => "cluster".into(),
            WeightsConfig::Named(NamedWeights::Individual) => "individual".into(),
            WeightsConfig::Subgroup { subgroup, value } => format!("subgroup:{subgroup}={value}"),
            WeightsConfig::Column { column } => format!("column:{column}"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimandConfig {
    pub weights: WeightsConfig,
    #[serde(default = "difference")]
    pub contrast: Contrast,
}

fn difference() -> Contrast {
    Contrast::Difference
}

fn default_estimands() -> Vec<EstimandConfig> {
    vec![
        EstimandConfig { weights: WeightsConfig::Named(NamedWeights::Cluster), contrast: Contrast::Difference },
        EstimandConfig { weights: WeightsConfig::Named(NamedWeights::Individual), contrast: Contrast::Difference },
    ]
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Long-format CSV, one row per individual; relative to the config file.
    pub input: PathBuf,
    pub columns: Columns,
    #[serde(default)]
    pub design: DesignConfig,
    pub models: Vec<ModelConfig>,
    #[serde(default = "default_estimands")]
    pub estimands: Vec<EstimandConfig>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub refit_policy: RefitPolicy,
    /// Scale of the informative-cluster-size test; defaults to the first estimand's.
    pub ics_scale: Option<IcsScale>,
    #[serde(default)]
    pub seed: u64,
}

impl AnalysisConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut c: AnalysisConfig =
            toml::from_str(text).map_err(|e| CliError::input(format!("configuration: {e}")))?;
        c.input = base.join(&c.input);
        if let DesignConfig::Constrained { schemes, .. } = &mut c.design {
            *schemes = base.join(&*schemes);
        }
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.models.is_empty() {
            return Err(CliError::input("at least one model is required"));
        }
        for m in &self.models {
            m.resolve()?;
        }
        if self.estimands.is_empty() {
            return Err(CliError::input("at least one estimand is required"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::input(format!("level {} is not in (0, 1)", self.level)));
        }
        let c = &self.columns;
        for e in &self.estimands {
            if let WeightsConfig::Subgroup { subgroup, .. } = &e.weights {
                if !c.cluster_covariates.contains(subgroup) {
                    return Err(CliError::input(format!(
                        "subgroup column '{subgroup}' must be listed among the cluster covariates"
                    )));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        let roles = [&c.cluster_id, &c.treatment, &c.outcome].into_iter().chain(&c.covariates).chain(&c.cluster_covariates);
        for name in roles.chain(c.stratum.as_ref()) {
            if !seen.insert(name) {
                return Err(CliError::input(format!("column '{name}' is given more than one role")));
            }
        }
        Ok(())
    }

    pub fn scale(&self) -> IcsScale {
        self.ics_scale.unwrap_or_else(|| IcsScale::for_contrast(self.estimands[0].contrast))
    }

    /// Extra cluster-constant columns needed by the estimands.
    pub fn weight_columns(&self) -> Vec<String> {
        self.estimands
            .iter()
            .filter_map(|e| match &e.weights {
                WeightsConfig::Column { column } => Some(column.clone()),
                _ => None,
            })
            .collect()
    }
}
