//! The model-robust standardization estimator.
//!
//! For each arm a,
//!
//! μ̂_ω(a) = Σ_i (ω_i/ω_+) [ m̂_i(a) + I(A_i = a)(Ȳ_i − m̂_i(a)) / (π_i^a (1 − π_i)^{1−a}) ],
//!
//! i.e. the model's counterfactual prediction plus an inverse-probability
//! weighted cluster residual. The null model (m̂ ≡ 0) gives the unadjusted
//! weighting estimator.

use serde::Serialize;

use crate::data::{ClusterSummary, TrialData};
use crate::estimand::{weights, Contrast, ContrastValue, EstimandSpec, WeightScheme, Weights};
use crate::error::{Error, Result};
use crate::inference::{self, JackknifeResult, RefitPaths, RefitPolicy};
use crate::models::{icc, predict_all, FitDiagnostics, FittedWorkingModel, Icc, ModelSpec, PreparedData};
use crate::randomization::{assignment_probabilities, RandomizationDesign};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardizedMeans {
    pub mu1: f64,
    pub mu0: f64,
    /// Per-cluster bracketed terms for a = 1, before weighting.
    pub contributions1: Vec<f64>,
    /// Per-cluster bracketed terms for a = 0, before weighting.
    pub contributions0: Vec<f64>,
}

/// Predicted cluster means under both arms, one entry per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub m1: Vec<f64>,
    pub m0: Vec<f64>,
}

impl Predictions {
    /// The null model's predictions.
    pub fn zeros(m: usize) -> Self {
        Self { m1: vec![0.0; m], m0: vec![0.0; m] }
    }
}

/// m̂(a) + I(A = a)(Ȳ − m̂(a)) / P(A = a).
#[inline]
pub(crate) fn contribution(s: &ClusterSummary, pi: f64, pred: f64, a: u8) -> f64 {
    if u8::from(s.treated) == a {
        let p = if a == 1 { pi } else { 1.0 - pi };
        pred + (s.ybar - pred) / p
    } else {
        pred
    }
}

/// Weighted arm means over every cluster except `skip`, accumulated in
/// cluster order. Shared by the point estimate and every deletion.
///
/// Each weight is normalized before multiplying, so proportional weight
/// vectors with integer entries (e.g. equal cluster sizes) give bitwise
/// identical means.
pub(crate) fn weighted_means(
    summaries: &[ClusterSummary],
    w: &[f64],
    probs: &[f64],
    pred: &Predictions,
    skip: Option<usize>,
) -> Result<(f64, f64)> {
    let total: f64 = w.iter().enumerate().filter(|&(i, _)| Some(i) != skip).map(|(_, v)| v).sum();
    if total <= 0.0 {
        return Err(Error::EmptyWeightedPopulation);
    }
    let mut s1 = 0.0;
    let mut s0 = 0.0;
    for (i, s) in summaries.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let wi = w[i] / total;
        s1 += wi * contribution(s, probs[i], pred.m1[i], 1);
        s0 += wi * contribution(s, probs[i], pred.m0[i], 0);
    }
    Ok((s1, s0))
}

/// Standardized means from precomputed predictions.
pub fn standardized_means_from_predictions(
    data: &TrialData,
    summaries: &[ClusterSummary],
    w: &Weights,
    probs: &[f64],
    pred: &Predictions,
) -> Result<StandardizedMeans> {
    let m = summaries.len();
    if w.values.len() != m || probs.len() != m || pred.m1.len() != m || pred.m0.len() != m {
        return Err(Error::InvalidInput("inputs are not aligned by cluster".into()));
    }
    let mut contributions1 = Vec::with_capacity(m);
    let mut contributions0 = Vec::with_capacity(m);
    for (i, s) in summaries.iter().enumerate() {
        if !(probs[i] > 0.0 && probs[i] < 1.0) {
            return Err(Error::Positivity { index: i + 1, cluster_id: data.clusters[i].id.clone() });
        }
        let c1 = contribution(s, probs[i], pred.m1[i], 1);
        let c0 = contribution(s, probs[i], pred.m0[i], 0);
        if !c1.is_finite() || !c0.is_finite() {
            return Err(Error::NonFinite(format!(
                "contribution of cluster '{}' is not finite",
                data.clusters[i].id
            )));
        }
        contributions1.push(c1);
        contributions0.push(c0);
    }
    let (mu1, mu0) = weighted_means(summaries, &w.values, probs, pred, None)?;
    Ok(StandardizedMeans { mu1, mu0, contributions1, contributions0 })
}

/// μ̂_ω(1), μ̂_ω(0) for a fitted working model.
pub fn standardized_means(
    data: &TrialData,
    w: &Weights,
    probs: &[f64],
    model: &FittedWorkingModel,
) -> Result<StandardizedMeans> {
    let prep = PreparedData::new(&model.spec, data)?;
    let (m1, m0) = predict_all(model, &prep);
    standardized_means_from_predictions(data, &prep.summaries, w, probs, &Predictions { m1, m0 })
}

pub fn contrast(means: &StandardizedMeans, spec: &EstimandSpec) -> Result<ContrastValue> {
    Ok(ContrastValue { estimate: spec.contrast.apply(means.mu1, means.mu0)?, scale: spec.contrast })
}

/// Everything reported for one (model, estimand) pair.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationResult {
    pub model: String,
    pub weights: &'static str,
    pub contrast: Contrast,
    pub mu1: f64,
    pub mu0: f64,
    pub estimate: f64,
    /// Direct jackknife SE of the contrast (the default).
    pub se: f64,
    /// Delta-method SE from the jackknife covariance of the two means.
    pub se_delta: f64,
    pub level: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub df: usize,
    pub icc: Option<Icc>,
    pub diagnostics: FitDiagnostics,
    pub refit_failures: Vec<String>,
    #[serde(skip)]
    pub means: StandardizedMeans,
    #[serde(skip)]
    pub jackknife: JackknifeResult,
}

/// Options for [`estimate`] beyond the model and estimand.
#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    pub level: f64,
    pub refit_policy: RefitPolicy,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { level: 0.95, refit_policy: RefitPolicy::Error }
    }
}

/// validate → π → fit → standardize → contrast → jackknife.
pub fn estimate(
    data: &TrialData,
    design: &RandomizationDesign,
    model: &ModelSpec,
    estimand: &EstimandSpec,
    opts: EstimateOptions,
) -> Result<EstimationResult> {
    let mut out = estimate_many(data, design, model, std::slice::from_ref(estimand), opts)?;
    Ok(out.remove(0))
}

/// Several estimands sharing one set of fits (the working model does not depend on ω).
pub fn estimate_many(
    data: &TrialData,
    design: &RandomizationDesign,
    model: &ModelSpec,
    estimands: &[EstimandSpec],
    opts: EstimateOptions,
) -> Result<Vec<EstimationResult>> {
    data.ensure_valid().map_err(|e| e.at_stage("validate"))?;
    let probs = assignment_probabilities(design, data).map_err(|e| e.at_stage("randomization"))?;
    let paths = inference::refit_paths(model, data, opts.refit_policy).map_err(|e| e.at_stage("fit"))?;
    estimands
        .iter()
        .map(|est| result_from_paths(data, design, &probs, &paths, est, opts.level))
        .collect()
}

pub(crate) fn result_from_paths(
    data: &TrialData,
    design: &RandomizationDesign,
    probs: &[f64],
    paths: &RefitPaths,
    estimand: &EstimandSpec,
    level: f64,
) -> Result<EstimationResult> {
    let w = weights(data, &estimand.weights).map_err(|e| e.at_stage("weights"))?;
    let means = standardized_means_from_predictions(data, &paths.summaries, &w, probs, &paths.full_predictions)
        .map_err(|e| e.at_stage("standardize"))?;
    let value = contrast(&means, estimand).map_err(|e| e.at_stage("contrast"))?;
    let jk = inference::jackknife_from_paths(data, design, paths, &w, estimand.contrast)
        .map_err(|e| e.at_stage("jackknife"))?;
    let se_delta = inference::delta_method_se(&jk.sigma_hat, (means.mu1, means.mu0), estimand.contrast)
        .map_err(|e| e.at_stage("jackknife"))?;
    let (ci_lower, ci_upper) = inference::t_interval(value.estimate, jk.se_contrast, data.m(), level);
    Ok(EstimationResult {
        model: paths.full.spec.label(),
        weights: scheme_label(&estimand.weights),
        contrast: estimand.contrast,
        mu1: means.mu1,
        mu0: means.mu0,
        estimate: value.estimate,
        se: jk.se_contrast,
        se_delta,
        level,
        ci_lower,
        ci_upper,
        df: jk.df,
        icc: icc(&paths.full).ok(),
        diagnostics: paths.full.diagnostics,
        refit_failures: jk.refit_failures.clone(),
        means,
        jackknife: jk,
    })
}

fn scheme_label(w: &WeightScheme) -> &'static str {
    w.label()
}
