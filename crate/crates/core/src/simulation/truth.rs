//! Super-population truth for Δ_C and Δ_I.
//!
//! Every simulated cluster is assigned to both arms. For continuous outcomes
//! the cluster potential-outcome means are computed from the conditional
//! means (the zero-mean γ and residual noise integrate out exactly), which
//! removes most of the Monte Carlo noise. Binary outcomes average the
//! individual success probabilities with γ drawn per cluster.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::dgp::{draw_cluster, DgpSpec, OutcomeType};
use crate::estimand::Contrast;
use crate::error::{Error, Result};
use crate::models::expit;

/// Clusters per independently seeded block; blocks make the result
/// independent of the thread count.
const BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthValues {
    pub delta_c: f64,
    pub delta_i: f64,
    /// Monte Carlo standard errors by linearization.
    pub se_c: f64,
    pub se_i: f64,
    /// Monte Carlo standard error of Δ_C − Δ_I.
    pub se_diff: f64,
    pub mu_c: [f64; 2],
    pub mu_i: [f64; 2],
    pub clusters: usize,
    pub contrast: Contrast,
    /// Sample covariance of N_i with the cluster-level contrast Ȳ_i(1) − Ȳ_i(0).
    pub size_effect_covariance: f64,
}

/// The contrast on which a scenario's estimands are defined.
pub fn scenario_contrast(outcome: OutcomeType) -> Contrast {
    match outcome {
        OutcomeType::Continuous => Contrast::Difference,
        OutcomeType::Binary => Contrast::LogOddsRatio,
    }
}

/// (N_i, Ȳ_i(1), Ȳ_i(0)) for one block of the super-population.
fn block(spec: &DgpSpec, seed: u64, b: usize, count: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let outcome = spec.scenario.outcome();
    (0..count)
        .map(|_| {
            let c = draw_cluster(spec, &mut rng);
            let n = c.n as f64;
            let (s1, s0) = match outcome {
                OutcomeType::Continuous => {
                    let s0: f64 = c.base.iter().sum();
                    (s0 + n * c.effect, s0)
                }
                OutcomeType::Binary => c.base.iter().fold((0.0, 0.0), |(s1, s0), &eta| {
                    (s1 + expit(eta + c.effect + c.gamma), s0 + expit(eta))
                }),
            };
            [n, s1 / n, s0 / n]
        })
        .collect()
}

/// Δ_C and Δ_I from a super-population of `size` clusters.
pub fn true_estimands(spec: &DgpSpec, size: usize, seed: u64) -> Result<TruthValues> {
    spec.check()?;
    if size < 1000 {
        return Err(Error::InvalidInput(format!("super-population size {size} is too small")));
    }
    let blocks = size.div_ceil(BLOCK);
    let parts: Vec<Vec<[f64; 3]>> = (0..blocks)
        .into_par_iter()
        .map(|b| block(spec, seed, b, BLOCK.min(size - b * BLOCK)))
        .collect();
    let cells: Vec<[f64; 3]> = parts.into_iter().flatten().collect();
    summarize_truth(&cells, scenario_contrast(spec.scenario.outcome()))
}

fn summarize_truth(cells: &[[f64; 3]], contrast: Contrast) -> Result<TruthValues> {
    let k = cells.len() as f64;
    let mean = |f: &dyn Fn(&[f64; 3]) -> f64| cells.iter().map(f).sum::<f64>() / k;
    let nbar = mean(&|c| c[0]);
    let mu_c = [mean(&|c| c[1]), mean(&|c| c[2])];
    let mu_i = [mean(&|c| c[0] * c[1]) / nbar, mean(&|c| c[0] * c[2]) / nbar];
    let delta_c = contrast.apply(mu_c[0], mu_c[1])?;
    let delta_i = contrast.apply(mu_i[0], mu_i[1])?;
    let gc = contrast.gradient(mu_c[0], mu_c[1])?;
    let gi = contrast.gradient(mu_i[0], mu_i[1])?;
    // influence values of both estimands for each cluster
    let psi: Vec<[f64; 2]> = cells
        .iter()
        .map(|c| {
            let pc = gc[0] * (c[1] - mu_c[0]) + gc[1] * (c[2] - mu_c[1]);
            let pi = (c[0] / nbar) * (gi[0] * (c[1] - mu_i[0]) + gi[1] * (c[2] - mu_i[1]));
            [pc, pi]
        })
        .collect();
    let var = |f: &dyn Fn(&[f64; 2]) -> f64| psi.iter().map(|p| f(p).powi(2)).sum::<f64>() / (k - 1.0);
    let se = |v: f64| (v / k).sqrt();
    let nmean = nbar;
    let dmean = mean(&|c| c[1] - c[2]);
    let cov = cells.iter().map(|c| (c[0] - nmean) * (c[1] - c[2] - dmean)).sum::<f64>() / (k - 1.0);
    Ok(TruthValues {
        delta_c,
        delta_i,
        se_c: se(var(&|p| p[0])),
        se_i: se(var(&|p| p[1])),
        se_diff: se(var(&|p| p[0] - p[1])),
        mu_c,
        mu_i,
        clusters: cells.len(),
        contrast,
        size_effect_covariance: cov,
    })
}
