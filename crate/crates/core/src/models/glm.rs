//! Bernoulli-logit and Poisson-log likelihoods on individual rows, shared by
//! the mixed-model fitters (as a starting point and as the σ² = 0 boundary fit).

use nalgebra::{DMatrix, DVector};

use super::{clamp_eta, expit, logit, PreparedData};
use crate::error::{Error, Result};
use crate::linalg::{dot, rank1_update, spd_solve};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Logit,
    Log,
}

impl Kind {
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Kind::Logit => expit(clamp_eta(eta)),
            Kind::Log => clamp_eta(eta).exp(),
        }
    }

    /// Cumulant b(η): log(1 + e^η) or e^η.
    pub fn cumulant(self, eta: f64) -> f64 {
        let eta = clamp_eta(eta);
        match self {
            Kind::Logit => {
                if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                }
            }
            Kind::Log => eta.exp(),
        }
    }

    /// Mean and variance (= dμ/dη for canonical links).
    pub fn mean_var(self, eta: f64) -> (f64, f64) {
        let mu = self.mean(eta);
        match self {
            Kind::Logit => (mu, mu * (1.0 - mu)),
            Kind::Log => (mu, mu),
        }
    }

    pub fn start_intercept(self, ybar: f64) -> f64 {
        match self {
            Kind::Logit => logit(ybar.clamp(1e-4, 1.0 - 1e-4)),
            Kind::Log => ybar.max(1e-4).ln(),
        }
    }
}

pub(crate) struct GlmFit {
    pub beta: Vec<f64>,
    /// Xᵀ W X at the solution.
    pub information: DMatrix<f64>,
    pub iterations: usize,
}

fn loglik(kind: Kind, prep: &PreparedData<'_>, active: &[usize], beta: &[f64]) -> f64 {
    let d = beta.len();
    let mut ll = 0.0;
    for &i in active {
        for (x, &y) in prep.rows(i).chunks_exact(d).zip(prep.outcomes(i)) {
            let eta = dot(beta, x);
            ll += y * clamp_eta(eta) - kind.cumulant(eta);
        }
    }
    ll
}

/// Newton–Raphson (Fisher scoring, canonical link) with step halving.
pub(crate) fn fit(kind: Kind, prep: &PreparedData<'_>, active: &[usize], start: Option<&[f64]>) -> Result<GlmFit> {
    let d = prep.layout.dim();
    let mut beta = match start {
        Some(b) if b.len() == d => b.to_vec(),
        _ => {
            let (sy, n) = active.iter().fold((0.0, 0usize), |(sy, n), &i| {
                (sy + prep.outcomes(i).iter().sum::<f64>(), n + prep.outcomes(i).len())
            });
            let mut b = vec![0.0; d];
            b[0] = kind.start_intercept(sy / n as f64);
            b
        }
    };
    let mut ll = loglik(kind, prep, active, &beta);
    let mut info = DMatrix::zeros(d, d);
    for it in 1..=100 {
        info.fill(0.0);
        let mut score = DVector::zeros(d);
        for &i in active {
            for (x, &y) in prep.rows(i).chunks_exact(d).zip(prep.outcomes(i)) {
                let (mu, v) = kind.mean_var(dot(&beta, x));
                rank1_update(&mut info, v, x);
                for c in 0..d {
                    score[c] += (y - mu) * x[c];
                }
            }
        }
        let step = spd_solve(&info, &score, "generalized linear model")?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let value = loglik(kind, prep, active, &trial);
            if value >= ll - 1e-12 * ll.abs() {
                beta = trial;
                ll = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if !accepted || t * step.norm() <= 1e-10 * (1.0 + norm) {
            return Ok(GlmFit { beta, information: info, iterations: it });
        }
    }
    Err(Error::NonConvergence { what: "generalized linear model", iterations: 100 })
}
