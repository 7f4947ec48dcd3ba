//! Random-intercept logistic and log-linear mixed models maximized with
//! adaptive Gauss–Hermite quadrature.
//!
//! Parameters are (β, τ) with τ = log σ. Each outer iteration re-centres the
//! nodes at every cluster's conditional mode, takes a Newton step computed
//! from the exact derivatives of the objective with those nodes held fixed,
//! and line-searches on the fully adaptive objective. One node is the
//! Laplace approximation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::glm::{self, Kind};
use super::quadrature::GaussHermite;
use super::{clamp_eta, Family, FitOptions, FittedWorkingModel, ModelSpec, PreparedData};
use crate::error::{Error, Result};
use crate::linalg::{dot, rank1_update, spd_inverse};

const MAX_ITER: usize = 100;
/// σ² below this is reported as zero and the plain GLM is returned.
const BOUNDARY: f64 = 1e-10;
/// Largest change in log σ per outer iteration.
const TAU_STEP_CAP: f64 = 2.0;
/// Below this many nodes the adaptation itself moves the objective, so the
/// fixed-node gradient is replaced by a finite-difference one.
const FIXED_NODE_MIN: usize = 7;

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Problem<'p, 'd> {
    kind: Kind,
    prep: &'p PreparedData<'d>,
    active: &'p [usize],
    d: usize,
    log_w: Vec<f64>,
    z: Vec<f64>,
}

/// Conditional log-likelihood Σ_j [y(η + b) − b(η + b)] of one cluster.
fn cond_loglik(kind: Kind, eta: &[f64], y: &[f64], b: f64) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &yj)| yj * clamp_eta(e + b) - kind.cumulant(e + b))
        .sum()
}

impl Problem<'_, '_> {
    fn etas(&self, i: usize, beta: &[f64]) -> Vec<f64> {
        self.prep.rows(i).chunks_exact(self.d).map(|x| dot(beta, x)).collect()
    }

    /// Mode of b ↦ log p(y | b) + log φ(b; σ²) and the negative curvature there.
    fn mode(&self, eta: &[f64], y: &[f64], sigma2: f64, b0: f64) -> (f64, f64) {
        let h = |b: f64| cond_loglik(self.kind, eta, y, b) - b * b / (2.0 * sigma2);
        let grad_curv = |b: f64| {
            let (mut g, mut c) = (0.0, 0.0);
            for (&e, &yj) in eta.iter().zip(y) {
                let (mu, v) = self.kind.mean_var(e + b);
                g += yj - mu;
                c += v;
            }
            (g - b / sigma2, c + 1.0 / sigma2)
        };
        let mut b = if b0.is_finite() { b0 } else { 0.0 };
        let mut hb = h(b);
        for _ in 0..100 {
            let (g, c) = grad_curv(b);
            let step = g / c;
            let mut t = 1.0;
            let mut next = b + step;
            let mut hn = h(next);
            while !(hn >= hb - 1e-13 * hb.abs()) && t > 1e-12 {
                t *= 0.5;
                next = b + t * step;
                hn = h(next);
            }
            let moved = (next - b).abs();
            b = next;
            hb = hn;
            if moved <= 1e-11 * (1.0 + b.abs()) {
                break;
            }
        }
        (b, grad_curv(b).1)
    }

    /// Node positions b_k and log terms f_k at fixed adaptation (b̂, s).
    fn node_terms(&self, eta: &[f64], y: &[f64], sigma2: f64, bhat: f64, s: f64) -> (Vec<f64>, Vec<f64>) {
        let scale = std::f64::consts::SQRT_2 * s;
        let mut nodes = Vec::with_capacity(self.z.len());
        let mut f = Vec::with_capacity(self.z.len());
        for (&z, &lw) in self.z.iter().zip(&self.log_w) {
            let b = bhat + scale * z;
            nodes.push(b);
            f.push(lw + z * z + cond_loglik(self.kind, eta, y, b) - b * b / (2.0 * sigma2));
        }
        (nodes, f)
    }

    fn cluster_constant(s: f64, sigma2: f64) -> f64 {
        (std::f64::consts::SQRT_2 * s).ln() - 0.5 * (2.0 * PI * sigma2).ln()
    }

    /// Adaptive quadrature log-likelihood; updates the stored modes.
    fn objective(&self, beta: &[f64], tau: f64, modes: &mut [f64]) -> f64 {
        let sigma2 = (2.0 * tau).exp();
        let mut total = 0.0;
        for (k, &i) in self.active.iter().enumerate() {
            let eta = self.etas(i, beta);
            let y = self.prep.outcomes(i);
            let (bhat, curv) = self.mode(&eta, y, sigma2, modes[k]);
            modes[k] = bhat;
            let s = 1.0 / curv.sqrt();
            let (_, f) = self.node_terms(&eta, y, sigma2, bhat, s);
            total += Self::cluster_constant(s, sigma2) + log_sum_exp(&f);
        }
        total
    }

    /// Central-difference gradient of the fully adaptive objective.
    fn numeric_gradient(&self, beta: &[f64], tau: f64, modes: &[f64]) -> DVector<f64> {
        let dim = self.d + 1;
        let mut point: Vec<f64> = beta.to_vec();
        point.push(tau);
        let eval = |x: &[f64]| {
            let mut m = modes.to_vec();
            self.objective(&x[..self.d], x[self.d], &mut m)
        };
        DVector::from_iterator(
            dim,
            (0..dim).map(|k| {
                let h = 1e-5 * (1.0 + point[k].abs());
                let mut up = point.clone();
                up[k] += h;
                let mut down = point.clone();
                down[k] -= h;
                (eval(&up) - eval(&down)) / (2.0 * h)
            }),
        )
    }

    /// Objective, gradient and Hessian in (β, τ) with nodes adapted at the
    /// current point and then held fixed.
    fn derivatives(&self, beta: &[f64], tau: f64, modes: &mut [f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = self.d;
        let dim = d + 1;
        let sigma2 = (2.0 * tau).exp();
        let kn = self.z.len();
        let mut value = 0.0;
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut gk = vec![0.0; kn * dim];
        for (k, &i) in self.active.iter().enumerate() {
            let eta = self.etas(i, beta);
            let y = self.prep.outcomes(i);
            let rows = self.prep.rows(i);
            let (bhat, curv) = self.mode(&eta, y, sigma2, modes[k]);
            modes[k] = bhat;
            let s = 1.0 / curv.sqrt();
            let (nodes, f) = self.node_terms(&eta, y, sigma2, bhat, s);
            let lse = log_sum_exp(&f);
            value += Self::cluster_constant(s, sigma2) + lse;
            let p: Vec<f64> = f.iter().map(|v| (v - lse).exp()).collect();

            gk.iter_mut().for_each(|v| *v = 0.0);
            // per-individual accumulated weights Σ_k p_k v_jk for the ββ block
            for (j, (x, &yj)) in rows.chunks_exact(d).zip(y).enumerate() {
                let mut wsum = 0.0;
                for (q, &b) in nodes.iter().enumerate() {
                    let (mu, v) = self.kind.mean_var(eta[j] + b);
                    wsum += p[q] * v;
                    let r = yj - mu;
                    let g = &mut gk[q * dim..q * dim + d];
                    for c in 0..d {
                        g[c] += r * x[c];
                    }
                }
                rank1_update_sub(&mut hess, wsum, x);
            }
            let mut gbar = vec![0.0; dim];
            for (q, &b) in nodes.iter().enumerate() {
                let b2 = b * b / sigma2;
                gk[q * dim + d] = b2;
                hess[(d, d)] -= 2.0 * p[q] * b2;
                for c in 0..dim {
                    gbar[c] += p[q] * gk[q * dim + c];
                }
            }
            for q in 0..kn {
                rank1_update(&mut hess, p[q], &gk[q * dim..(q + 1) * dim]);
            }
            rank1_update(&mut hess, -1.0, &gbar);
            for c in 0..d {
                grad[c] += gbar[c];
            }
            grad[d] += gbar[d] - 1.0;
        }
        (value, grad, hess)
    }
}

/// a −= w x xᵀ on the leading block of a larger matrix.
fn rank1_update_sub(a: &mut DMatrix<f64>, w: f64, x: &[f64]) {
    for c in 0..x.len() {
        let wc = w * x[c];
        for r in 0..x.len() {
            a[(r, c)] -= wc * x[r];
        }
    }
}

/// Solves (−H) δ = g, adding a ridge when −H is not positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let neg = -hess;
    let scale = (0..neg.nrows()).map(|k| neg[(k, k)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut ridge = 0.0;
    for _ in 0..20 {
        let mut a = neg.clone();
        for k in 0..a.nrows() {
            a[(k, k)] += ridge;
        }
        if let Some(ch) = nalgebra::Cholesky::new(a) {
            return Some(ch.solve(grad));
        }
        ridge = if ridge == 0.0 { 1e-8 * scale } else { ridge * 10.0 };
    }
    None
}

pub(super) fn fit(
    spec: &ModelSpec,
    prep: &PreparedData<'_>,
    active: &[usize],
    opts: FitOptions<'_>,
) -> Result<FittedWorkingModel> {
    let kind = if spec.family == Family::GlmmLogit { Kind::Logit } else { Kind::Log };
    let d = prep.layout.dim();
    let rule = GaussHermite::new(spec.fit_nodes);
    let problem = Problem {
        kind,
        prep,
        active,
        d,
        log_w: rule.weights.iter().map(|w| w.ln()).collect(),
        z: rule.nodes.clone(),
    };

    let (mut beta, mut tau) = match opts.start {
        Some(st) if st.coefficients.len() == d => {
            let s2 = st.variance.random_intercept.unwrap_or(0.0);
            (st.coefficients.clone(), (0.5 * s2.max(1e-300).ln()).max(-6.0))
        }
        _ => {
            let g = glm::fit(kind, prep, active, None)?;
            (g.beta, 0.5f64.ln())
        }
    };
    let boundary_tau = 0.5 * BOUNDARY.ln();
    let mut modes = vec![0.0; active.len()];
    let mut iterations = 0;
    let mut at_boundary = false;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut current = problem.objective(&beta, tau, &mut modes);
    if !current.is_finite() {
        return Err(Error::NonFinite("mixed-model likelihood at the starting values".into()));
    }
    while iterations < MAX_ITER {
        iterations += 1;
        let (value, mut grad, hess) = problem.derivatives(&beta, tau, &mut modes);
        if spec.fit_nodes < FIXED_NODE_MIN {
            grad = problem.numeric_gradient(&beta, tau, &modes);
        }
        current = value;
        grad_norm = grad.norm();
        let Some(mut step) = newton_direction(&hess, &grad) else {
            return Err(Error::NonConvergence { what: "mixed-model Newton direction", iterations });
        };
        if step[d].abs() > TAU_STEP_CAP {
            step *= TAU_STEP_CAP / step[d].abs();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial_beta: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let trial_tau = tau + t * step[d];
            let mut trial_modes = modes.clone();
            let value = problem.objective(&trial_beta, trial_tau, &mut trial_modes);
            if value.is_finite() && value >= current - 1e-12 * current.abs() {
                accepted = Some((trial_beta, trial_tau, trial_modes, value));
                break;
            }
            t *= 0.5;
        }
        let Some((nb, nt, nm, nv)) = accepted else {
            // no ascent along the Newton direction: stationary to working precision
            converged = grad_norm <= 1e-4 * (1.0 + current.abs());
            break;
        };
        let moved = t * step.amax();
        let gain = nv - current;
        beta = nb;
        tau = nt;
        modes = nm;
        current = nv;
        if tau < boundary_tau {
            at_boundary = true;
            converged = true;
            break;
        }
        if moved <= 1e-8 * (1.0 + tau.abs()) || (gain.abs() <= 1e-12 * (1.0 + current.abs()) && moved <= 1e-5) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { what: "adaptive-quadrature mixed model", iterations });
    }

    if at_boundary {
        let g = glm::fit(kind, prep, active, Some(&beta))?;
        let mut model = FittedWorkingModel::new(spec, prep.layout, g.beta);
        model.variance.random_intercept = Some(0.0);
        model.diagnostics.iterations = iterations + g.iterations;
        model.diagnostics.boundary = true;
        model.diagnostics.gradient_norm = grad_norm;
        if opts.coef_cov {
            model.coef_cov = Some(spd_inverse(&g.information, "generalized linear model")?);
        }
        return Ok(model);
    }

    let mut model = FittedWorkingModel::new(spec, prep.layout, beta.clone());
    model.variance.random_intercept = Some((2.0 * tau).exp());
    model.diagnostics.iterations = iterations;
    if opts.coef_cov {
        let (_, grad, hess) = problem.derivatives(&beta, tau, &mut modes);
        grad_norm = grad.norm();
        let neg = -hess;
        let inv = spd_inverse(&neg, "mixed-model information")?;
        model.coef_cov = Some(inv.view((0, 0), (d, d)).into_owned());
    }
    model.diagnostics.gradient_norm = grad_norm;
    Ok(model)
}
