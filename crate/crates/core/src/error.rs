use thiserror::Error;

use crate::data::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("trial data failed validation ({} violation(s)); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Validation(Vec<Violation>),

    #[error("positivity violation: cluster {index} ('{cluster_id}') is deterministic under the design")]
    Positivity { index: usize, cluster_id: String },

    #[error("unknown stratum '{stratum}' for cluster '{cluster_id}'")]
    UnknownStratum { stratum: String, cluster_id: String },

    #[error("empty weighted population")]
    EmptyWeightedPopulation,

    #[error("negative weight {value} for cluster '{cluster_id}'")]
    NegativeWeight { cluster_id: String, value: f64 },

    #[error("rank-deficient design matrix ({0})")]
    RankDeficient(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("outcome outside the link domain: {0}")]
    OutcomeDomain(String),

    #[error("contrast domain violation: {0}")]
    ContrastDomain(String),

    #[error("non-finite contribution for cluster '{0}'")]
    NonFinite(String),

    #[error("degenerate jackknife: zero variance with a nonzero difference")]
    DegenerateJackknife,

    #[error("need at least {need} clusters, got {got}")]
    TooFewClusters { need: usize, got: usize },

    #[error("refit failed after deleting cluster '{cluster_id}': {source}")]
    RefitFailed {
        cluster_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("ICC is not defined for the {0} family")]
    IccUndefined(&'static str),

    #[error("simulation aborted: {failures} of {n_sim} replicates failed")]
    SimulationAborted { failures: usize, n_sim: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Strips any stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
