//! Data-generating processes for the simulation experiments.
//!
//! Each cluster draws its size, covariates and random effect, then both
//! potential outcomes for every member; the observed outcome is the one
//! matching the cluster's Bernoulli(0.5) assignment.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::data::{ClusterRecord, TrialData};
use crate::error::{Error, Result};
use crate::models::expit;

/// Expected total sample size m·E(N) used to size the clusters.
pub const EXPECTED_TOTAL: f64 = 3000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum Scenario {
    /// Continuous outcome, size unrelated to covariates and effect.
    ContNonInf,
    /// Continuous outcome, size drives covariates and modifies the effect.
    ContInf,
    BinNonInf,
    BinInf,
    /// Continuous outcome with effect 1 + δ N² log N / E(N)².
    ContIcs { delta: f64 },
    /// Binary outcome with effect 1 + δ N² log(N/E(N)) / (5 E(N)²) on the logit scale.
    BinIcs { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeType {
    Continuous,
    Binary,
}

impl Scenario {
    pub fn outcome(&self) -> OutcomeType {
        match self {
            Scenario::ContNonInf | Scenario::ContInf | Scenario::ContIcs { .. } => OutcomeType::Continuous,
            Scenario::BinNonInf | Scenario::BinInf | Scenario::BinIcs { .. } => OutcomeType::Binary,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Scenario::ContNonInf => "cont_noninf".into(),
            Scenario::ContInf => "cont_inf".into(),
            Scenario::BinNonInf => "bin_noninf".into(),
            Scenario::BinInf => "bin_inf".into(),
            Scenario::ContIcs { delta } => format!("cont_ics(delta={delta})"),
            Scenario::BinIcs { delta } => format!("bin_ics(delta={delta})"),
        }
    }

    pub fn informative(&self) -> bool {
        match self {
            Scenario::ContNonInf | Scenario::BinNonInf => false,
            Scenario::ContInf | Scenario::BinInf => true,
            Scenario::ContIcs { delta } | Scenario::BinIcs { delta } => *delta != 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub scenario: Scenario,
    pub m: usize,
    /// Cluster sizes are uniform on {size_min, …, size_max}.
    pub size_min: usize,
    pub size_max: usize,
    /// Variance of the random treatment-effect deviation γ_i.
    pub gamma_variance: f64,
}

impl DgpSpec {
    /// Sizes uniform on [0.2, 1.8]·E(N) with m·E(N) = 3000: {20..180} for
    /// m = 30 and {6..54} for m = 100.
    pub fn new(scenario: Scenario, m: usize) -> Self {
        let mean = EXPECTED_TOTAL / m as f64;
        let size_min = ((0.2 * mean).round() as usize).max(1);
        let size_max = ((1.8 * mean).round() as usize).max(size_min);
        Self { scenario, m, size_min, size_max, gamma_variance: 0.2 }
    }

    pub fn with_sizes(mut self, size_min: usize, size_max: usize) -> Self {
        self.size_min = size_min;
        self.size_max = size_max;
        self
    }

    pub fn with_gamma_variance(mut self, v: f64) -> Self {
        self.gamma_variance = v;
        self
    }

    /// Analytic mean of the size distribution; the constant E(N) in the formulas.
    pub fn expected_size(&self) -> f64 {
        (self.size_min + self.size_max) as f64 / 2.0
    }

    pub fn check(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidInput(format!("m = {} is too small", self.m)));
        }
        if self.size_min == 0 || self.size_max < self.size_min {
            return Err(Error::InvalidInput(format!(
                "invalid size support {{{}..{}}}",
                self.size_min, self.size_max
            )));
        }
        if !(self.gamma_variance >= 0.0) {
            return Err(Error::InvalidInput("gamma variance must be nonnegative".into()));
        }
        match self.scenario {
            Scenario::ContIcs { delta } | Scenario::BinIcs { delta } if !(delta >= 0.0) => {
                Err(Error::InvalidInput(format!("delta = {delta} must be nonnegative")))
            }
            _ => Ok(()),
        }
    }
}

/// Covariates and potential-outcome predictors of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDraw {
    pub n: usize,
    pub h1: f64,
    pub h2: f64,
    pub gamma: f64,
    /// Treatment effect on the outcome (or logit) scale, excluding γ.
    pub effect: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Mean (or logit) of Y_ij(0).
    pub base: Vec<f64>,
}

impl ClusterDraw {
    /// Conditional mean of Y_ij(a) given the cluster's draws, γ included.
    pub fn mean(&self, outcome: OutcomeType, j: usize, a: u8) -> f64 {
        let eta = self.base[j] + f64::from(a) * (self.effect + self.gamma);
        match outcome {
            OutcomeType::Continuous => eta,
            OutcomeType::Binary => expit(eta),
        }
    }
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> f64 {
    f64::from(u8::from(rng.random::<f64>() < p))
}

fn phi(x: f64) -> f64 {
    StdNormal::standard().cdf(x)
}

/// Draws everything about one cluster except the outcomes.
pub fn draw_cluster<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> ClusterDraw {
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let e = spec.expected_size();
    let n = rng.random_range(spec.size_min..=spec.size_max);
    let nf = n as f64;
    let gamma = spec.gamma_variance.sqrt() * z.sample(rng);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    let (h1, h2, effect);
    match spec.scenario {
        Scenario::ContNonInf | Scenario::ContIcs { .. } | Scenario::ContInf => {
            // size enters the covariate laws only in the informative scenario
            let s = if spec.scenario == Scenario::ContInf { nf } else { e };
            h1 = bernoulli(rng, phi(s.sin()));
            h2 = 2.0 + h1 * s / 10.0 + 3.0 * z.sample(rng);
            let log_s = s.ln();
            effect = match spec.scenario {
                Scenario::ContNonInf => -3.0,
                Scenario::ContInf => nf * nf * nf.ln() / (e * e),
                Scenario::ContIcs { delta } => delta * nf * nf * nf.ln() / (e * e) + 1.0,
                _ => unreachable!(),
            };
            for _ in 0..n {
                let a = h1 * h2 + s / 100.0 + 4.0 * z.sample(rng);
                let b = bernoulli(rng, expit(log_s * a * h1 + h2));
                let common = h2.cos() * b + h2.abs() * b.sin();
                let mu0 = match spec.scenario {
                    Scenario::ContNonInf => 3.0 + h1 * a * a / (5.0 * e) + common,
                    Scenario::ContInf => h1 * a * a / (5.0 * nf) - effect + common,
                    _ => h1 * a * a / (5.0 * e) + common,
                };
                x1.push(a);
                x2.push(b);
                base.push(mu0);
            }
        }
        Scenario::BinNonInf | Scenario::BinIcs { .. } => {
            h1 = bernoulli(rng, 0.5);
            h2 = 3.0 + h1 + z.sample(rng);
            effect = match spec.scenario {
                Scenario::BinNonInf => 0.8,
                Scenario::BinIcs { delta } => delta * nf * nf * (nf / e).ln() / (5.0 * e * e) + 1.0,
                _ => unreachable!(),
            };
            for _ in 0..n {
                let a = h1 + h2 / 20.0 + 1.0 + 4.0 * z.sample(rng);
                let b = bernoulli(rng, expit(4.0 * h1 * a + h2));
                let eta0 = match spec.scenario {
                    Scenario::BinNonInf => -0.8 + a * a / 100.0 + h1 + h2.cos() * b + h2.abs() / 5.0,
                    _ => a * a / (2.0 * e) + h1 / 2.0 + h2.cos() * b + h2.abs() / 10.0,
                };
                x1.push(a);
                x2.push(b);
                base.push(eta0);
            }
        }
        Scenario::BinInf => {
            h1 = bernoulli(rng, 0.5);
            h2 = 2.0 + h1 + nf / e + z.sample(rng);
            effect = nf * nf * nf.ln() / (5.0 * e * e);
            let log_n = nf.ln();
            for _ in 0..n {
                let a = h1 + h2 / 20.0 + nf / 100.0 + 4.0 * z.sample(rng);
                let b = bernoulli(rng, expit(log_n * h1 * a + h2));
                let eta0 = -effect + a * a / (2.0 * nf) + h1 + h2.cos() * b + h2.abs() / 5.0;
                x1.push(a);
                x2.push(b);
                base.push(eta0);
            }
        }
    }
    ClusterDraw { n, h1, h2, gamma, effect, x1, x2, base }
}

/// Draws (Y_ij(0), Y_ij(1)) for every member.
pub fn draw_potential_outcomes<R: Rng + ?Sized>(
    spec: &DgpSpec,
    cluster: &ClusterDraw,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let outcome = spec.scenario.outcome();
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let mut y0 = Vec::with_capacity(cluster.n);
    let mut y1 = Vec::with_capacity(cluster.n);
    for j in 0..cluster.n {
        let (m0, m1) = (cluster.mean(outcome, j, 0), cluster.mean(outcome, j, 1));
        match outcome {
            OutcomeType::Continuous => {
                y0.push(m0 + z.sample(rng));
                y1.push(m1 + z.sample(rng));
            }
            OutcomeType::Binary => {
                y0.push(bernoulli(rng, m0));
                y1.push(bernoulli(rng, m1));
            }
        }
    }
    (y0, y1)
}

/// The generator for replicate `r` of an experiment seeded with `seed`.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(r))
}

/// One trial: individual covariates (X1, X2), cluster covariates (H1, H2).
pub fn generate_trial<R: RngCore>(spec: &DgpSpec, rng: &mut R) -> Result<TrialData> {
    spec.check()?;
    let clusters = (0..spec.m)
        .map(|i| {
            let treated = rng.random::<f64>() < 0.5;
            let draw = draw_cluster(spec, rng);
            let (y0, y1) = draw_potential_outcomes(spec, &draw, rng);
            let outcomes = if treated { y1 } else { y0 };
            let covariates = draw.x1.iter().zip(&draw.x2).flat_map(|(&a, &b)| [a, b]).collect();
            ClusterRecord::new(format!("{}", i + 1), treated, outcomes, covariates, vec![draw.h1, draw.h2])
        })
        .collect();
    Ok(TrialData::new(clusters, 2, 2))
}

/// Replicate `r` of an experiment: `generate_trial` with the seed `seed + r`.
pub fn generate_replicate(spec: &DgpSpec, seed: u64, r: u64) -> Result<TrialData> {
    generate_trial(spec, &mut replicate_rng(seed, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_support_follows_expected_total() {
        let a = DgpSpec::new(Scenario::ContNonInf, 30);
        assert_eq!((a.size_min, a.size_max), (20, 180));
        assert_eq!(a.expected_size(), 100.0);
        let b = DgpSpec::new(Scenario::ContNonInf, 100);
        assert_eq!((b.size_min, b.size_max), (6, 54));
        assert_eq!(b.expected_size(), 30.0);
    }

    #[test]
    fn sizes_and_binary_range() {
        let spec = DgpSpec::new(Scenario::BinNonInf, 30);
        let d = generate_replicate(&spec, 7, 0).unwrap();
        assert_eq!(d.m(), 30);
        for c in &d.clusters {
            assert!((20..=180).contains(&c.size));
            assert!(c.outcomes.iter().all(|&y| y == 0.0 || y == 1.0));
            assert_eq!(c.covariates.len(), 2 * c.size);
            assert_eq!(c.cluster_covariates.len(), 2);
        }
        assert!(validate_ok(&d));
    }

    fn validate_ok(d: &TrialData) -> bool {
        crate::data::validate(d).is_empty()
    }

    #[test]
    fn generation_is_deterministic() {
        for scenario in [
            Scenario::ContNonInf,
            Scenario::ContInf,
            Scenario::BinNonInf,
            Scenario::BinInf,
            Scenario::ContIcs { delta: 0.2 },
            Scenario::BinIcs { delta: 4.0 },
        ] {
            let spec = DgpSpec::new(scenario, 100);
            let a = generate_replicate(&spec, 11, 3).unwrap();
            let b = generate_replicate(&spec, 11, 3).unwrap();
            assert_eq!(a.clusters, b.clusters);
            let c = generate_replicate(&spec, 11, 4).unwrap();
            assert_ne!(a.clusters, c.clusters);
        }
    }

    #[test]
    fn cont_inf_cluster_contrast_is_size_driven() {
        // γ switched off and N fixed: E[Ȳ(1) − Ȳ(0)] = N² log N / E(N)²
        let n = 40;
        let spec = DgpSpec::new(Scenario::ContInf, 30).with_sizes(n, n).with_gamma_variance(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let c = draw_cluster(&spec, &mut rng);
            let (y0, y1) = draw_potential_outcomes(&spec, &c, &mut rng);
            let d = (y1.iter().sum::<f64>() - y0.iter().sum::<f64>()) / n as f64;
            sum += d;
            sumsq += d * d;
        }
        let mean = sum / draws as f64;
        let sd = (sumsq / draws as f64 - mean * mean).sqrt();
        let nf = n as f64;
        let expect = nf * nf * nf.ln() / (40.0 * 40.0);
        assert!((mean - expect).abs() < 4.0 * sd / (draws as f64).sqrt(), "{mean} vs {expect}");
    }

    #[test]
    fn noninformative_effect_is_constant() {
        let spec = DgpSpec::new(Scenario::ContNonInf, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = draw_cluster(&spec, &mut rng);
            assert_eq!(c.effect, -3.0);
        }
        let spec = DgpSpec::new(Scenario::ContIcs { delta: 0.0 }, 100);
        assert_eq!(draw_cluster(&spec, &mut rng).effect, 1.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(DgpSpec::new(Scenario::ContIcs { delta: -1.0 }, 30).check().is_err());
        assert!(DgpSpec::new(Scenario::ContNonInf, 30).with_sizes(5, 4).check().is_err());
        assert!(DgpSpec::new(Scenario::ContNonInf, 30).with_gamma_variance(-0.1).check().is_err());
    }
}
