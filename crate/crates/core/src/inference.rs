//! Leave-one-cluster-out jackknife and t(m − 1) intervals.
//!
//! The working model is refitted once per deleted cluster and its predictions
//! are cached, so any number of weight schemes and contrasts can be
//! jackknifed from the same refits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{ClusterSummary, TrialData};
use crate::estimand::{weights, Contrast, EstimandSpec, Weights};
use crate::error::{Error, Result};
use crate::models::{fit_prepared, predict_all, FitOptions, FittedWorkingModel, ModelSpec, PreparedData};
use crate::randomization::{assignment_probabilities_excluding, RandomizationDesign};
use crate::standardization::{weighted_means, Predictions};

/// What to do when the working model cannot be refitted after a deletion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    /// Abort the jackknife.
    #[default]
    Error,
    /// Use the null model for that deletion and record the cluster id.
    SubstituteNull,
}

/// One leave-one-cluster-out refit.
#[derive(Debug, Clone)]
pub struct Deletion {
    /// Predictions of the refitted model for every cluster (entry g unused).
    pub predictions: Predictions,
    /// Refitted coefficients; empty when the null model was substituted.
    pub coefficients: Vec<f64>,
    pub substituted: bool,
}

/// The full-sample fit and all m deletion refits.
#[derive(Debug, Clone)]
pub struct RefitPaths {
    pub summaries: Vec<ClusterSummary>,
    pub full: FittedWorkingModel,
    pub full_predictions: Predictions,
    pub deletions: Vec<Deletion>,
    pub refit_failures: Vec<String>,
}

fn both_arms_without(summaries: &[ClusterSummary], g: usize) -> bool {
    let mut seen = [false; 2];
    for (i, s) in summaries.iter().enumerate() {
        if i != g {
            seen[usize::from(s.treated)] = true;
        }
    }
    seen[0] && seen[1]
}

/// Fits the model on the full sample and on every leave-one-out sample.
/// Deletions run in parallel and are collected in cluster order.
pub fn refit_paths(spec: &ModelSpec, data: &TrialData, policy: RefitPolicy) -> Result<RefitPaths> {
    let m = data.m();
    if m < 3 {
        return Err(Error::TooFewClusters { need: 3, got: m });
    }
    let prep = PreparedData::new(spec, data)?;
    let all: Vec<usize> = (0..m).collect();
    let full = fit_prepared(spec, &prep, &all, FitOptions { coef_cov: true, start: None })?;
    let (m1, m0) = predict_all(&full, &prep);
    let full_predictions = Predictions { m1, m0 };

    let results: Vec<Result<Deletion>> = (0..m)
        .into_par_iter()
        .map(|g| {
            let attempt = if both_arms_without(&prep.summaries, g) {
                let active: Vec<usize> = (0..m).filter(|&i| i != g).collect();
                fit_prepared(spec, &prep, &active, FitOptions { coef_cov: false, start: Some(&full) })
            } else {
                Err(Error::InvalidInput("deletion leaves a single arm".into()))
            };
            match attempt {
                Ok(model) => {
                    let (m1, m0) = predict_all(&model, &prep);
                    Ok(Deletion { predictions: Predictions { m1, m0 }, coefficients: model.coefficients, substituted: false })
                }
                Err(e) => match policy {
                    RefitPolicy::Error => Err(Error::RefitFailed {
                        cluster_id: data.clusters[g].id.clone(),
                        source: Box::new(e),
                    }),
                    RefitPolicy::SubstituteNull => {
                        Ok(Deletion { predictions: Predictions::zeros(m), coefficients: Vec::new(), substituted: true })
                    }
                },
            }
        })
        .collect();
    let mut deletions = Vec::with_capacity(m);
    let mut refit_failures = Vec::new();
    for (g, r) in results.into_iter().enumerate() {
        let del = r?;
        if del.substituted {
            refit_failures.push(data.clusters[g].id.clone());
        }
        deletions.push(del);
    }
    Ok(RefitPaths { summaries: prep.summaries, full, full_predictions, deletions, refit_failures })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JackknifeResult {
    /// (μ̂^{−g}(1), μ̂^{−g}(0)) for g = 1..m.
    pub loo_means: Vec<[f64; 2]>,
    /// (m − 1)/m Σ_g (μ̂^{−g} − μ̄)(μ̂^{−g} − μ̄)ᵀ
    pub sigma_hat: [[f64; 2]; 2],
    pub contrast_loo: Vec<f64>,
    pub se_contrast: f64,
    pub df: usize,
    pub refit_failures: Vec<String>,
}

/// Deletion means for one weight vector, with π recomputed on each reduced sample.
pub(crate) fn loo_means(
    data: &TrialData,
    design: &RandomizationDesign,
    paths: &RefitPaths,
    w: &Weights,
) -> Result<Vec<[f64; 2]>> {
    let m = data.m();
    (0..m)
        .map(|g| {
            let probs = assignment_probabilities_excluding(design, data, Some(g))?;
            let (mu1, mu0) =
                weighted_means(&paths.summaries, &w.values, &probs, &paths.deletions[g].predictions, Some(g))?;
            Ok([mu1, mu0])
        })
        .collect()
}

/// (m − 1)/m Σ (v_g − v̄)²
pub(crate) fn jackknife_variance(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (m - 1.0) / m * ss
}

pub fn jackknife_from_paths(
    data: &TrialData,
    design: &RandomizationDesign,
    paths: &RefitPaths,
    w: &Weights,
    contrast: Contrast,
) -> Result<JackknifeResult> {
    let m = data.m();
    let loo = loo_means(data, design, paths, w)?;
    let mf = m as f64;
    let bar = [
        loo.iter().map(|v| v[0]).sum::<f64>() / mf,
        loo.iter().map(|v| v[1]).sum::<f64>() / mf,
    ];
    let mut sigma = [[0.0; 2]; 2];
    for v in &loo {
        let dv = [v[0] - bar[0], v[1] - bar[1]];
        for r in 0..2 {
            for c in 0..2 {
                sigma[r][c] += dv[r] * dv[c];
            }
        }
    }
    let factor = (mf - 1.0) / mf;
    for row in &mut sigma {
        for v in row.iter_mut() {
            *v *= factor;
        }
    }
    let contrast_loo: Vec<f64> = loo.iter().map(|v| contrast.apply(v[0], v[1])).collect::<Result<_>>()?;
    let se_contrast = jackknife_variance(&contrast_loo).sqrt();
    Ok(JackknifeResult {
        loo_means: loo,
        sigma_hat: sigma,
        contrast_loo,
        se_contrast,
        df: m - 1,
        refit_failures: paths.refit_failures.clone(),
    })
}

/// Refits the working model without each cluster in turn and jackknifes
/// the standardized means and their contrast.
pub fn jackknife(
    data: &TrialData,
    design: &RandomizationDesign,
    model: &ModelSpec,
    estimand: &EstimandSpec,
    policy: RefitPolicy,
) -> Result<JackknifeResult> {
    data.ensure_valid()?;
    let w = weights(data, &estimand.weights)?;
    let paths = refit_paths(model, data, policy)?;
    jackknife_from_paths(data, design, &paths, &w, estimand.contrast)
}

/// Upper `p` quantile of t with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(p)
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(statistic: f64, df: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * t.sf(statistic.abs())).clamp(0.0, 1.0)
}

/// estimate ± t_{1−(1−level)/2, m−1} · se
pub fn t_interval(estimate: f64, se: f64, m: usize, level: f64) -> (f64, f64) {
    if se == 0.0 {
        return (estimate, estimate);
    }
    let q = t_quantile(1.0 - (1.0 - level) / 2.0, (m - 1) as f64);
    (estimate - q * se, estimate + q * se)
}

/// √(∇fᵀ Σ̂ ∇f) at the point estimates of the two means.
pub fn delta_method_se(sigma_hat: &[[f64; 2]; 2], means: (f64, f64), contrast: Contrast) -> Result<f64> {
    let g = contrast.gradient(means.0, means.1)?;
    let v = g[0] * g[0] * sigma_hat[0][0]
        + 2.0 * g[0] * g[1] * sigma_hat[0][1]
        + g[1] * g[1] * sigma_hat[1][1];
    Ok(v.max(0.0).sqrt())
}
