//! Working outcome models and the uniform cluster-mean prediction interface.
//!
//! Every family is fitted once per sample and then queried for
//! Ê(Ȳ_i | A_i = a, X_i, H_i, N_i) at a ∈ {0, 1}. The models are only working
//! devices: the standardization estimator stays consistent when they are wrong.

pub mod coef;
pub mod design;
pub mod quadrature;

mod cluster_glm;
mod cluster_lm;
mod gee;
mod glm;
mod glmm;
mod lmm;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{summarize, summarize_cluster, ClusterRecord, ClusterSummary, TrialData};
use crate::error::{Error, Result};

pub use design::{DesignLayout, Level, TREATMENT_COLUMN};
pub use quadrature::GaussHermite;

/// Linear predictors are clamped to this magnitude before exponentiation.
pub const ETA_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// No model: predicts 0, which reduces the estimator to inverse probability weighting.
    Null,
    ClusterLm,
    ClusterGlmLogit,
    Lmm,
    GlmmLogit,
    GlmmLog,
    Gee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingCorrelation {
    Independence,
    Exchangeable,
    /// Separate exchangeable correlation in each arm.
    ArmExchangeable,
}

/// How a logistic random-intercept model is averaged over the random effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Marginalization {
    Quadrature { nodes: usize },
    Hedeker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    /// Include covariates and cluster size as linear main effects.
    pub adjusted: bool,
    /// Keep N_i among the adjustment terms (ignored when unadjusted).
    pub include_size: bool,
    /// GEE mean link.
    pub link: Link,
    /// GEE working correlation.
    pub working_correlation: WorkingCorrelation,
    /// GLMM_LOGIT prediction rule.
    pub marginalization: Marginalization,
    /// Adaptive quadrature nodes used in GLMM likelihoods; 1 is the Laplace approximation.
    pub fit_nodes: usize,
    /// Restricted maximum likelihood for the LMM.
    pub reml: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            family: Family::Null,
            adjusted: false,
            include_size: true,
            link: Link::Identity,
            working_correlation: WorkingCorrelation::Independence,
            marginalization: Marginalization::Quadrature { nodes: 64 },
            fit_nodes: 25,
            reml: false,
        }
    }
}

impl ModelSpec {
    fn with_family(family: Family, adjusted: bool) -> Self {
        Self { family, adjusted, ..Self::default() }
    }

    pub fn null() -> Self {
        Self::default()
    }

    pub fn cluster_lm(adjusted: bool) -> Self {
        Self::with_family(Family::ClusterLm, adjusted)
    }

    pub fn cluster_glm_logit(adjusted: bool) -> Self {
        Self::with_family(Family::ClusterGlmLogit, adjusted)
    }

    pub fn lmm(adjusted: bool) -> Self {
        Self::with_family(Family::Lmm, adjusted)
    }

    pub fn glmm_logit(adjusted: bool) -> Self {
        Self::with_family(Family::GlmmLogit, adjusted)
    }

    pub fn glmm_log(adjusted: bool) -> Self {
        Self::with_family(Family::GlmmLog, adjusted)
    }

    pub fn gee(link: Link, working_correlation: WorkingCorrelation, adjusted: bool) -> Self {
        Self { link, working_correlation, ..Self::with_family(Family::Gee, adjusted) }
    }

    pub fn with_marginalization(mut self, m: Marginalization) -> Self {
        self.marginalization = m;
        self
    }

    pub fn with_fit_nodes(mut self, nodes: usize) -> Self {
        self.fit_nodes = nodes;
        self
    }

    pub fn with_reml(mut self, reml: bool) -> Self {
        self.reml = reml;
        self
    }

    pub fn with_size(mut self, include_size: bool) -> Self {
        self.include_size = include_size;
        self
    }

    /// Whether the family works with one row per individual.
    pub fn level(&self) -> Level {
        match self.family {
            Family::Null | Family::ClusterLm | Family::ClusterGlmLogit => Level::Cluster,
            _ => Level::Individual,
        }
    }

    pub fn layout(&self, p: usize, q: usize) -> DesignLayout {
        DesignLayout {
            level: self.level(),
            p,
            q,
            adjusted: self.adjusted,
            include_size: self.include_size,
        }
    }

    /// Short human-readable label, e.g. `gee-logit-exch+adj`.
    pub fn label(&self) -> String {
        let base = match self.family {
            Family::Null => return "null".to_owned(),
            Family::ClusterLm => "cluster-lm".to_owned(),
            Family::ClusterGlmLogit => "cluster-glm-logit".to_owned(),
            Family::Lmm if self.reml => "lmm-reml".to_owned(),
            Family::Lmm => "lmm".to_owned(),
            Family::GlmmLogit => match self.marginalization {
                Marginalization::Hedeker => "glmm-logit-hedeker".to_owned(),
                Marginalization::Quadrature { .. } => "glmm-logit".to_owned(),
            },
            Family::GlmmLog => "glmm-log".to_owned(),
            Family::Gee => {
                let link = match self.link {
                    Link::Identity => "identity",
                    Link::Logit => "logit",
                    Link::Log => "log",
                };
                let corr = match self.working_correlation {
                    WorkingCorrelation::Independence => "ind",
                    WorkingCorrelation::Exchangeable => "exch",
                    WorkingCorrelation::ArmExchangeable => "armexch",
                };
                format!("gee-{link}-{corr}")
            }
        };
        if self.adjusted {
            format!("{base}+adj")
        } else {
            base
        }
    }

    /// Rejects invalid numerical settings.
    pub fn check(&self) -> Result<()> {
        if self.family == Family::GlmmLogit || self.family == Family::GlmmLog {
            if self.fit_nodes == 0 {
                return Err(Error::InvalidInput("fit_nodes must be at least 1".into()));
            }
            if let Marginalization::Quadrature { nodes: 0 } = self.marginalization {
                return Err(Error::InvalidInput("quadrature needs at least one node".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct VarianceComponents {
    /// Random-intercept variance (σ_b², σ_c² or σ_d²).
    pub random_intercept: Option<f64>,
    /// Residual or dispersion variance (σ_ε², or the GEE scale).
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Icc {
    Single { rho: f64 },
    PerArm { rho0: f64, rho1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub gradient_norm: f64,
    /// A variance component was estimated at (and clamped to) zero.
    pub boundary: bool,
    /// An exchangeable correlation left its admissible range and was clamped.
    pub clamped: bool,
}

/// A fitted working model, ready for counterfactual prediction.
#[derive(Debug, Clone)]
pub struct FittedWorkingModel {
    pub spec: ModelSpec,
    pub layout: DesignLayout,
    pub coefficients: Vec<f64>,
    pub variance: VarianceComponents,
    /// Working correlation estimated by a GEE fit.
    pub correlation: Option<Icc>,
    pub diagnostics: FitDiagnostics,
    /// Covariance of the coefficients under the family's own SE policy.
    pub coef_cov: Option<DMatrix<f64>>,
    rule: Option<Arc<GaussHermite>>,
}

impl FittedWorkingModel {
    fn new(spec: &ModelSpec, layout: DesignLayout, coefficients: Vec<f64>) -> Self {
        let rule = match (spec.family, spec.marginalization) {
            (Family::GlmmLogit, Marginalization::Quadrature { nodes }) => {
                Some(Arc::new(GaussHermite::new(nodes)))
            }
            _ => None,
        };
        Self {
            spec: spec.clone(),
            layout,
            coefficients,
            variance: VarianceComponents::default(),
            correlation: None,
            diagnostics: FitDiagnostics::default(),
            coef_cov: None,
            rule,
        }
    }

    fn null(spec: &ModelSpec, layout: DesignLayout) -> Self {
        Self::new(spec, layout, Vec::new())
    }

    /// Treatment coefficient, when the family has one.
    pub fn treatment_coefficient(&self) -> Option<f64> {
        self.coefficients.get(TREATMENT_COLUMN).copied()
    }

    /// Same model with a different GLMM_LOGIT prediction rule.
    pub fn with_marginalization(&self, m: Marginalization) -> Self {
        let mut spec = self.spec.clone();
        spec.marginalization = m;
        let mut out = Self::new(&spec, self.layout, self.coefficients.clone());
        out.variance = self.variance;
        out.correlation = self.correlation;
        out.diagnostics = self.diagnostics;
        out.coef_cov = self.coef_cov.clone();
        out
    }
}

/// Trial data preprocessed once for a model family: cluster summaries plus,
/// for individual-level families, the individual design rows at the observed arm.
#[derive(Debug, Clone)]
pub struct PreparedData<'a> {
    pub data: &'a TrialData,
    pub summaries: Vec<ClusterSummary>,
    pub layout: DesignLayout,
    rows: Vec<Vec<f64>>,
    suff: Vec<lmm::SuffStats>,
}

impl<'a> PreparedData<'a> {
    pub fn new(spec: &ModelSpec, data: &'a TrialData) -> Result<Self> {
        spec.check()?;
        let summaries = summarize(data)?;
        let layout = spec.layout(data.p, data.q);
        check_outcome_domain(spec, data)?;
        let needs_rows = spec.family != Family::Null && layout.level == Level::Individual;
        let rows: Vec<Vec<f64>> = if needs_rows {
            data.clusters
                .iter()
                .zip(&summaries)
                .map(|(c, s)| layout.individual_rows(c, s))
                .collect()
        } else {
            Vec::new()
        };
        let linear = matches!(spec.family, Family::Lmm)
            || (spec.family == Family::Gee && spec.link == Link::Identity);
        let suff = if linear {
            rows.iter()
                .zip(&data.clusters)
                .map(|(r, c)| lmm::SuffStats::new(r, &c.outcomes, layout.dim()))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self { data, summaries, layout, rows, suff })
    }

    pub fn m(&self) -> usize {
        self.summaries.len()
    }

    pub(crate) fn rows(&self, i: usize) -> &[f64] {
        self.rows.get(i).map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn outcomes(&self, i: usize) -> &[f64] {
        &self.data.clusters[i].outcomes
    }
}

fn check_outcome_domain(spec: &ModelSpec, data: &TrialData) -> Result<()> {
    let unit = match (spec.family, spec.link) {
        (Family::ClusterGlmLogit | Family::GlmmLogit, _) | (Family::Gee, Link::Logit) => Some(true),
        (Family::GlmmLog, _) | (Family::Gee, Link::Log) => Some(false),
        _ => None,
    };
    let Some(unit) = unit else { return Ok(()) };
    for c in &data.clusters {
        for &y in &c.outcomes {
            let ok = if unit { (0.0..=1.0).contains(&y) } else { y >= 0.0 };
            if !ok {
                return Err(Error::OutcomeDomain(format!(
                    "{} needs outcomes in {}, cluster '{}' has {y}",
                    spec.label(),
                    if unit { "[0,1]" } else { "[0,inf)" },
                    c.id
                )));
            }
        }
    }
    Ok(())
}

/// Options for fitting on a subset of clusters.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions<'m> {
    /// Compute the coefficient covariance under the family's SE policy.
    pub coef_cov: bool,
    /// Warm start for iterative fitters, typically the full-sample fit.
    pub start: Option<&'m FittedWorkingModel>,
}

/// Fits the working model to all clusters.
pub fn fit(spec: &ModelSpec, data: &TrialData) -> Result<FittedWorkingModel> {
    let prep = PreparedData::new(spec, data)?;
    let active: Vec<usize> = (0..prep.m()).collect();
    fit_prepared(spec, &prep, &active, FitOptions { coef_cov: true, start: None })
}

/// Fits the working model to the clusters listed in `active`.
pub fn fit_prepared(
    spec: &ModelSpec,
    prep: &PreparedData<'_>,
    active: &[usize],
    opts: FitOptions<'_>,
) -> Result<FittedWorkingModel> {
    let layout = prep.layout;
    match spec.family {
        Family::Null => Ok(FittedWorkingModel::null(spec, layout)),
        Family::ClusterLm => cluster_lm::fit(spec, prep, active, opts),
        Family::ClusterGlmLogit => cluster_glm::fit(spec, prep, active, opts),
        Family::Lmm => lmm::fit(spec, prep, active, opts),
        Family::GlmmLogit | Family::GlmmLog => glmm::fit(spec, prep, active, opts),
        Family::Gee => gee::fit(spec, prep, active, opts),
    }
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn clamp_eta(eta: f64) -> f64 {
    eta.clamp(-ETA_CLAMP, ETA_CLAMP)
}

/// Hedeker's scale factor for marginalizing a logistic random intercept.
pub fn hedeker_scale(sigma2: f64) -> f64 {
    let c = PI * PI / 3.0;
    ((sigma2 + c) / c).sqrt()
}

/// E[expit(eta + c)] for c ~ N(0, sigma2) by the given rule.
pub fn logistic_normal(eta: f64, sigma2: f64, rule: &GaussHermite) -> f64 {
    if sigma2 == 0.0 {
        return expit(eta);
    }
    rule.normal_expectation(sigma2, |c| expit(clamp_eta(eta + c)))
}

/// Predicted cluster mean from a summary and the cluster's individual rows at
/// its observed arm (rows are only read by nonlinear individual-level families).
pub(crate) fn predict_summary(
    model: &FittedWorkingModel,
    s: &ClusterSummary,
    rows: &[f64],
    a: u8,
) -> f64 {
    let beta = &model.coefficients;
    let spec = &model.spec;
    let d = model.layout.dim();
    let linear = |out: &mut Vec<f64>| -> f64 {
        out.resize(d, 0.0);
        model.layout.mean_row(s, a, out);
        crate::linalg::dot(beta, out)
    };
    match spec.family {
        Family::Null => 0.0,
        Family::ClusterLm | Family::Lmm => linear(&mut Vec::new()),
        Family::Gee if spec.link == Link::Identity => linear(&mut Vec::new()),
        Family::ClusterGlmLogit => expit(clamp_eta(linear(&mut Vec::new()))),
        Family::Gee | Family::GlmmLogit | Family::GlmmLog => {
            let shift = beta[TREATMENT_COLUMN] * (f64::from(a) - f64::from(u8::from(s.treated)));
            let sigma2 = model.variance.random_intercept.unwrap_or(0.0);
            let n = rows.len() / d;
            debug_assert_eq!(n, s.n);
            let inverse_link: Box<dyn Fn(f64) -> f64 + '_> = match spec.family {
                Family::Gee => match spec.link {
                    Link::Logit => Box::new(|eta| expit(clamp_eta(eta))),
                    _ => Box::new(|eta| clamp_eta(eta).exp()),
                },
                Family::GlmmLog => Box::new(move |eta| clamp_eta(eta + sigma2 / 2.0).exp()),
                _ => match spec.marginalization {
                    Marginalization::Hedeker => {
                        let k = hedeker_scale(sigma2);
                        Box::new(move |eta| expit(clamp_eta(eta / k)))
                    }
                    Marginalization::Quadrature { .. } => {
                        let rule = model.rule.as_deref().expect("quadrature rule");
                        Box::new(move |eta| logistic_normal(eta, sigma2, rule))
                    }
                },
            };
            let total: f64 = rows
                .chunks_exact(d)
                .map(|r| inverse_link(crate::linalg::dot(beta, r) + shift))
                .sum();
            total / n as f64
        }
    }
}

/// Ê(Ȳ_i | A_i = a, X_i, H_i, N_i) for one cluster.
pub fn predict_cluster_mean(model: &FittedWorkingModel, cluster: &ClusterRecord, a: u8) -> Result<f64> {
    let s = summarize_cluster(cluster, model.layout.p)?;
    let rows = if model.layout.level == Level::Individual && model.spec.family != Family::Null {
        model.layout.individual_rows(cluster, &s)
    } else {
        Vec::new()
    };
    Ok(predict_summary(model, &s, &rows, a))
}

/// Predictions (m̂_i(1), m̂_i(0)) for every cluster of a prepared sample.
pub fn predict_all(model: &FittedWorkingModel, prep: &PreparedData<'_>) -> (Vec<f64>, Vec<f64>) {
    let m = prep.m();
    let mut m1 = Vec::with_capacity(m);
    let mut m0 = Vec::with_capacity(m);
    for i in 0..m {
        let s = &prep.summaries[i];
        m1.push(predict_summary(model, s, prep.rows(i), 1));
        m0.push(predict_summary(model, s, prep.rows(i), 0));
    }
    (m1, m0)
}

/// Intracluster correlation implied by the fitted model.
pub fn icc(model: &FittedWorkingModel) -> Result<Icc> {
    match model.spec.family {
        Family::Lmm => {
            let sb = model.variance.random_intercept.unwrap_or(0.0);
            let se = model.variance.residual.unwrap_or(0.0);
            Ok(Icc::Single { rho: icc_from_components(sb, se) })
        }
        Family::GlmmLogit => {
            let sc = model.variance.random_intercept.unwrap_or(0.0);
            Ok(Icc::Single { rho: icc_from_components(sc, PI * PI / 3.0) })
        }
        Family::Gee => model
            .correlation
            .ok_or(Error::IccUndefined("working independence has no correlation parameter")),
        Family::Null => Err(Error::IccUndefined("the null model has no ICC")),
        Family::ClusterLm | Family::ClusterGlmLogit => {
            Err(Error::IccUndefined("cluster-level models have no ICC"))
        }
        Family::GlmmLog => Err(Error::IccUndefined("the log-link mixed model has no ICC")),
    }
}

/// ρ = σ_b² / (σ_b² + σ_ε²), zero when both components vanish.
pub fn icc_from_components(between: f64, within: f64) -> f64 {
    let total = between + within;
    if total > 0.0 {
        between / total
    } else {
        0.0
    }
}
