//! Replicated experiments: bias, Monte Carlo SD, average SE and coverage of
//! the coefficient and standardization estimators, and ICS-test rejection rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_replicate, DgpSpec, OutcomeType};
use super::truth::{scenario_contrast, TruthValues};
use crate::data::TrialData;
use crate::estimand::{EstimandSpec, WeightScheme};
use crate::error::{Error, Result};
use crate::ics::{ics_from_paths, IcsScale};
use crate::inference::{refit_paths, t_interval, RefitPolicy};
use crate::models::coef::{coef_estimate, coef_from_fit, jackknife_se, SePolicy};
use crate::models::{Link, ModelSpec, WorkingCorrelation, TREATMENT_COLUMN};
use crate::randomization::{assignment_probabilities, RandomizationDesign};
use crate::standardization::result_from_paths;

/// Replicate failures above this fraction of n_sim abort the experiment.
pub const MAX_FAILURE_RATE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The working model's treatment coefficient with its customary SE.
    Coef,
    /// Model-robust standardization with the cluster jackknife.
    Mrs,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Coef => "Coef",
            Estimator::Mrs => "MRS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    ClusterAte,
    IndividualAte,
}

impl Target {
    pub fn label(self) -> &'static str {
        match self {
            Target::ClusterAte => "delta_c",
            Target::IndividualAte => "delta_i",
        }
    }

    fn index(self) -> usize {
        match self {
            Target::ClusterAte => 0,
            Target::IndividualAte => 1,
        }
    }
}

/// A named working model in the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    /// Short name such as "W3".
    pub name: String,
    pub spec: ModelSpec,
}

impl ModelEntry {
    pub fn new(name: impl Into<String>, spec: ModelSpec) -> Self {
        Self { name: name.into(), spec }
    }

    /// Name with the adjustment marker, e.g. "W3+adj".
    pub fn label(&self) -> String {
        if self.spec.adjusted {
            format!("{}+adj", self.name)
        } else {
            self.name.clone()
        }
    }
}

/// W1–W4 for continuous outcomes (cluster LM, LMM, GEE-exch, GEE-ind) or
/// W5–W8 for binary outcomes (cluster logistic GLM, logistic GLMM, logit GEE-exch,
/// logit GEE-ind).
pub fn base_models(outcome: OutcomeType, adjusted: bool) -> Vec<ModelEntry> {
    match outcome {
        OutcomeType::Continuous => vec![
            ModelEntry::new("W1", ModelSpec::cluster_lm(adjusted)),
            ModelEntry::new("W2", ModelSpec::lmm(adjusted)),
            ModelEntry::new("W3", ModelSpec::gee(Link::Identity, WorkingCorrelation::Exchangeable, adjusted)),
            ModelEntry::new("W4", ModelSpec::gee(Link::Identity, WorkingCorrelation::Independence, adjusted)),
        ],
        OutcomeType::Binary => vec![
            ModelEntry::new("W5", ModelSpec::cluster_glm_logit(adjusted)),
            ModelEntry::new("W6", ModelSpec::glmm_logit(adjusted)),
            ModelEntry::new("W7", ModelSpec::gee(Link::Logit, WorkingCorrelation::Exchangeable, adjusted)),
            ModelEntry::new("W8", ModelSpec::gee(Link::Logit, WorkingCorrelation::Independence, adjusted)),
        ],
    }
}

/// The unadjusted and adjusted variants of every base model.
pub fn standard_models(outcome: OutcomeType) -> Vec<ModelEntry> {
    let mut v = base_models(outcome, false);
    v.extend(base_models(outcome, true));
    v
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    pub n_sim: usize,
    pub seed: u64,
    pub models: Vec<ModelEntry>,
    pub estimators: Vec<Estimator>,
    pub level: f64,
}

impl ExperimentConfig {
    pub fn new(dgp: DgpSpec, n_sim: usize, seed: u64) -> Self {
        Self {
            dgp,
            n_sim,
            seed,
            models: standard_models(dgp.scenario.outcome()),
            estimators: vec![Estimator::Coef, Estimator::Mrs],
            level: 0.95,
        }
    }

    pub fn with_models(mut self, models: Vec<ModelEntry>) -> Self {
        self.models = models;
        self
    }

    pub fn with_estimators(mut self, estimators: Vec<Estimator>) -> Self {
        self.estimators = estimators;
        self
    }
}

/// Performance of one (estimator, model, target) combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub estimator: &'static str,
    pub model: String,
    pub target: &'static str,
    pub truth: f64,
    pub n_ok: usize,
    pub mean_estimate: f64,
    pub bias_pct: f64,
    pub mcsd: f64,
    pub aese: f64,
    pub coverage: f64,
    pub coverage_lower: f64,
    pub coverage_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelFailures {
    pub model: String,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<ModelFailures>,
    pub n_sim: usize,
}

/// One replicate's estimate, SE and CI coverage.
#[derive(Debug, Clone, Copy)]
struct Draw {
    estimate: f64,
    se: f64,
    covered: [bool; 2],
}

/// Per model: Coef draw and MRS draws for Δ_C and Δ_I, or the failure.
type ModelOutcome = Result<(Option<Draw>, Option<[Draw; 2]>)>;

fn covered(lo: f64, hi: f64, truth: f64) -> bool {
    lo <= truth && truth <= hi
}

fn run_model(
    entry: &ModelEntry,
    data: &TrialData,
    design: &RandomizationDesign,
    probs: &[f64],
    estimators: &[Estimator],
    truth: &TruthValues,
    level: f64,
) -> ModelOutcome {
    let contrast = truth.contrast;
    let m = data.m();
    let want_coef = estimators.contains(&Estimator::Coef) && SePolicy::for_spec(&entry.spec).is_some();
    let want_mrs = estimators.contains(&Estimator::Mrs);
    let truths = [truth.delta_c, truth.delta_i];
    let coef_draw = |estimate: f64, se: f64| {
        let (lo, hi) = t_interval(estimate, se, m, level);
        Draw { estimate, se, covered: [covered(lo, hi, truths[0]), covered(lo, hi, truths[1])] }
    };
    if !want_mrs {
        let coef = if want_coef {
            let c = coef_estimate(&entry.spec, data)?;
            Some(coef_draw(c.estimate, c.se))
        } else {
            None
        };
        return Ok((coef, None));
    }
    let paths = refit_paths(&entry.spec, data, RefitPolicy::Error)?;
    let mut mrs = [Draw { estimate: 0.0, se: 0.0, covered: [false; 2] }; 2];
    for (k, scheme) in [WeightScheme::Cluster, WeightScheme::Individual].into_iter().enumerate() {
        let r = result_from_paths(data, design, probs, &paths, &EstimandSpec::new(scheme, contrast), level)?;
        let c = covered(r.ci_lower, r.ci_upper, truths[k]);
        mrs[k] = Draw { estimate: r.estimate, se: r.se, covered: [c, c] };
    }
    let coef = if want_coef {
        let estimate = paths.full.coefficients[TREATMENT_COLUMN];
        let se = if SePolicy::for_spec(&entry.spec) == Some(SePolicy::Jackknife) {
            let loo: Vec<f64> = paths.deletions.iter().map(|d| d.coefficients[TREATMENT_COLUMN]).collect();
            jackknife_se(&loo)
        } else {
            coef_from_fit(&paths.full)?.se
        };
        Some(coef_draw(estimate, se))
    } else {
        None
    };
    Ok((coef, Some(mrs)))
}

fn metrics(estimator: Estimator, model: String, target: Target, truth: f64, draws: &[Draw]) -> MetricsRow {
    let n = draws.len();
    let nf = n as f64;
    let mean = draws.iter().map(|d| d.estimate).sum::<f64>() / nf;
    let mcsd = if n > 1 {
        (draws.iter().map(|d| (d.estimate - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let aese = draws.iter().map(|d| d.se).sum::<f64>() / nf;
    let coverage = 100.0 * draws.iter().filter(|d| d.covered[target.index()]).count() as f64 / nf;
    let half = 1.96 * (coverage * (100.0 - coverage) / nf).sqrt();
    MetricsRow {
        estimator: estimator.label(),
        model,
        target: target.label(),
        truth,
        n_ok: n,
        mean_estimate: mean,
        bias_pct: 100.0 * (mean - truth) / truth,
        mcsd,
        aese,
        coverage,
        coverage_lower: coverage - half,
        coverage_upper: coverage + half,
    }
}

fn check_failures(counts: &[usize], models: &[ModelEntry], n_sim: usize) -> Result<Vec<ModelFailures>> {
    let worst = counts.iter().copied().max().unwrap_or(0);
    if worst as f64 > MAX_FAILURE_RATE * n_sim as f64 {
        return Err(Error::SimulationAborted { failures: worst, n_sim });
    }
    Ok(models
        .iter()
        .zip(counts)
        .map(|(e, &failures)| ModelFailures { model: e.label(), failures })
        .collect())
}

/// Runs `n_sim` replicates with seeds `seed + r` and aggregates the metrics.
/// Replicates run in parallel; aggregation follows replicate order, so the
/// output does not depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig, truth: &TruthValues) -> Result<ExperimentOutput> {
    config.dgp.check()?;
    if truth.contrast != scenario_contrast(config.dgp.scenario.outcome()) {
        return Err(Error::InvalidInput("truth values are on a different scale than the scenario".into()));
    }
    if config.n_sim == 0 {
        return Err(Error::InvalidInput("n_sim must be positive".into()));
    }
    let design = RandomizationDesign::Simple(0.5);
    let per_rep: Vec<Result<Vec<ModelOutcome>>> = (0..config.n_sim as u64)
        .into_par_iter()
        .map(|r| {
            let data = generate_replicate(&config.dgp, config.seed, r)?;
            let probs = assignment_probabilities(&design, &data)?;
            Ok(config
                .models
                .iter()
                .map(|e| run_model(e, &data, &design, &probs, &config.estimators, truth, config.level))
                .collect())
        })
        .collect();

    let k = config.models.len();
    let mut fails = vec![0usize; k];
    let mut coef: Vec<Vec<Draw>> = vec![Vec::new(); k];
    let mut mrs: Vec<[Vec<Draw>; 2]> = vec![[Vec::new(), Vec::new()]; k];
    for rep in per_rep {
        let rep = rep?;
        for (j, outcome) in rep.into_iter().enumerate() {
            match outcome {
                Ok((c, m)) => {
                    if let Some(c) = c {
                        coef[j].push(c);
                    }
                    if let Some([a, b]) = m {
                        mrs[j][0].push(a);
                        mrs[j][1].push(b);
                    }
                }
                Err(_) => fails[j] += 1,
            }
        }
    }
    let failures = check_failures(&fails, &config.models, config.n_sim)?;

    let truths = [truth.delta_c, truth.delta_i];
    let mut rows = Vec::new();
    for (j, entry) in config.models.iter().enumerate() {
        for target in [Target::ClusterAte, Target::IndividualAte] {
            for &est in &config.estimators {
                let draws = match est {
                    Estimator::Coef => &coef[j],
                    Estimator::Mrs => &mrs[j][target.index()],
                };
                if !draws.is_empty() {
                    rows.push(metrics(est, entry.label(), target, truths[target.index()], draws));
                }
            }
        }
    }
    Ok(ExperimentOutput { rows, failures, n_sim: config.n_sim })
}

/// Rejection rate of the level-0.05 ICS test for one (δ, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcsPowerRow {
    pub scenario: String,
    pub m: usize,
    pub delta: f64,
    pub model: String,
    pub n_ok: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub mean_delta_c: f64,
    pub mean_delta_i: f64,
}

/// Runs the informative-cluster-size test on `n_sim` trials per δ.
pub fn run_ics_power(
    dgps: &[DgpSpec],
    models: &[ModelEntry],
    n_sim: usize,
    seed: u64,
    alpha: f64,
) -> Result<Vec<IcsPowerRow>> {
    let mut out = Vec::new();
    for dgp in dgps {
        dgp.check()?;
        let delta = match dgp.scenario {
            super::dgp::Scenario::ContIcs { delta } | super::dgp::Scenario::BinIcs { delta } => delta,
            other => {
                return Err(Error::InvalidInput(format!(
                    "ICS power needs an ICS scenario, got {}",
                    other.label()
                )))
            }
        };
        let scale = match dgp.scenario.outcome() {
            OutcomeType::Continuous => IcsScale::Difference,
            OutcomeType::Binary => IcsScale::Logit,
        };
        let design = RandomizationDesign::Simple(0.5);
        let per_rep: Vec<Result<Vec<Result<(f64, f64, f64)>>>> = (0..n_sim as u64)
            .into_par_iter()
            .map(|r| {
                let data = generate_replicate(dgp, seed, r)?;
                let probs = assignment_probabilities(&design, &data)?;
                Ok(models
                    .iter()
                    .map(|e| {
                        let paths = refit_paths(&e.spec, &data, RefitPolicy::Error)?;
                        let t = ics_from_paths(&data, &design, &probs, &paths, scale)?;
                        Ok((t.p_value, t.delta_c, t.delta_i))
                    })
                    .collect())
            })
            .collect();
        let k = models.len();
        let mut fails = vec![0usize; k];
        let mut rejections = vec![0usize; k];
        let mut ok = vec![0usize; k];
        let mut sums = vec![[0.0f64; 2]; k];
        for rep in per_rep {
            for (j, res) in rep?.into_iter().enumerate() {
                match res {
                    Ok((p, dc, di)) => {
                        ok[j] += 1;
                        if p < alpha {
                            rejections[j] += 1;
                        }
                        sums[j][0] += dc;
                        sums[j][1] += di;
                    }
                    Err(_) => fails[j] += 1,
                }
            }
        }
        check_failures(&fails, models, n_sim)?;
        for (j, e) in models.iter().enumerate() {
            let n = ok[j] as f64;
            out.push(IcsPowerRow {
                scenario: dgp.scenario.label(),
                m: dgp.m,
                delta,
                model: e.label(),
                n_ok: ok[j],
                rejections: rejections[j],
                rejection_rate: 100.0 * rejections[j] as f64 / n,
                mean_delta_c: sums[j][0] / n,
                mean_delta_i: sums[j][1] / n,
            });
        }
    }
    Ok(out)
}
