//! The conventional "Coef" estimator: the working model's treatment
//! coefficient with the standard error each family customarily reports.

use rayon::prelude::*;
use serde::Serialize;

use super::{fit_prepared, Family, FitOptions, FittedWorkingModel, ModelSpec, PreparedData, TREATMENT_COLUMN};
use crate::data::TrialData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SePolicy {
    /// Heteroskedasticity-robust HC0 sandwich on the cluster-level regression.
    Hc0Sandwich,
    /// Leave-one-cluster-out jackknife of the coefficient.
    Jackknife,
    /// Mancl–DeRouen bias-corrected GEE sandwich.
    ManclDerouen,
    /// Inverse model information.
    ModelBased,
}

impl SePolicy {
    pub fn for_spec(spec: &ModelSpec) -> Option<SePolicy> {
        match spec.family {
            Family::Null => None,
            Family::ClusterLm => Some(SePolicy::Hc0Sandwich),
            Family::Lmm => Some(SePolicy::Jackknife),
            Family::Gee => Some(SePolicy::ManclDerouen),
            Family::ClusterGlmLogit | Family::GlmmLogit | Family::GlmmLog => Some(SePolicy::ModelBased),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SePolicy::Hc0Sandwich => "hc0_sandwich",
            SePolicy::Jackknife => "jackknife",
            SePolicy::ManclDerouen => "mancl_derouen",
            SePolicy::ModelBased => "model_based",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefEstimate {
    pub estimate: f64,
    pub se: f64,
    pub policy: SePolicy,
}

/// Coefficient and analytic SE from a fit made with `coef_cov` requested.
/// Not available for the jackknife policy, which needs the deletion fits.
pub fn coef_from_fit(model: &FittedWorkingModel) -> Result<CoefEstimate> {
    let policy = SePolicy::for_spec(&model.spec)
        .ok_or_else(|| Error::InvalidInput("the null model has no treatment coefficient".into()))?;
    if policy == SePolicy::Jackknife {
        return Err(Error::InvalidInput("jackknife coefficient SE needs deletion fits".into()));
    }
    let estimate = model.coefficients[TREATMENT_COLUMN];
    let cov = model
        .coef_cov
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("fit was made without a coefficient covariance".into()))?;
    let var = cov[(TREATMENT_COLUMN, TREATMENT_COLUMN)];
    if !(var >= 0.0) {
        return Err(Error::NonFinite(format!("coefficient variance {var}")));
    }
    Ok(CoefEstimate { estimate, se: var.sqrt(), policy })
}

/// √{(m − 1)/m · Σ_g (θ^{−g} − θ̄)²}
pub fn jackknife_se(loo: &[f64]) -> f64 {
    let m = loo.len() as f64;
    let mean = loo.iter().sum::<f64>() / m;
    let ss: f64 = loo.iter().map(|v| (v - mean) * (v - mean)).sum();
    ((m - 1.0) / m * ss).sqrt()
}

/// Treatment coefficient with the family's SE policy on a full data set.
pub fn coef_estimate(spec: &ModelSpec, data: &TrialData) -> Result<CoefEstimate> {
    let prep = PreparedData::new(spec, data)?;
    let m = prep.m();
    let all: Vec<usize> = (0..m).collect();
    let full = fit_prepared(spec, &prep, &all, FitOptions { coef_cov: true, start: None })?;
    if SePolicy::for_spec(spec) != Some(SePolicy::Jackknife) {
        return coef_from_fit(&full);
    }
    if m < 3 {
        return Err(Error::TooFewClusters { need: 3, got: m });
    }
    let loo: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|g| {
            let active: Vec<usize> = (0..m).filter(|&i| i != g).collect();
            fit_prepared(spec, &prep, &active, FitOptions { coef_cov: false, start: Some(&full) })
                .map(|f| f.coefficients[TREATMENT_COLUMN])
        })
        .collect::<Result<_>>()?;
    Ok(CoefEstimate {
        estimate: full.coefficients[TREATMENT_COLUMN],
        se: jackknife_se(&loo),
        policy: SePolicy::Jackknife,
    })
}
