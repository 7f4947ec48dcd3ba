//! Random-intercept linear mixed model fitted by profiling the deviance over
//! the variance ratio θ = σ_b²/σ_ε².
//!
//! With V_i = σ²(I + θJ), V_i⁻¹ ∝ I − k_i J where k_i = θ/(1 + N_iθ), so every
//! quantity reduces to per-cluster sufficient statistics and a refit costs
//! O(m d²) per deviance evaluation regardless of cluster sizes.

use std::cell::Cell;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{FitOptions, FittedWorkingModel, ModelSpec, PreparedData};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, rank1_update};
use crate::optim::brent_min;

/// Below this the between-cluster variance is reported as exactly zero.
const BOUNDARY: f64 = 1e-10;

/// Cross-products of one cluster's design rows X and outcomes y.
#[derive(Debug, Clone)]
pub(crate) struct SuffStats {
    pub xtx: DMatrix<f64>,
    /// Xᵀ1
    pub s: DVector<f64>,
    /// Xᵀy
    pub t: DVector<f64>,
    /// 1ᵀy
    pub sy: f64,
    /// yᵀy
    pub syy: f64,
    pub n: usize,
}

impl SuffStats {
    pub fn new(rows: &[f64], y: &[f64], d: usize) -> Self {
        let mut xtx = DMatrix::zeros(d, d);
        let mut s = DVector::zeros(d);
        let mut t = DVector::zeros(d);
        let mut sy = 0.0;
        let mut syy = 0.0;
        for (x, &yj) in rows.chunks_exact(d).zip(y) {
            rank1_update(&mut xtx, 1.0, x);
            for c in 0..d {
                s[c] += x[c];
                t[c] += x[c] * yj;
            }
            sy += yj;
            syy += yj * yj;
        }
        Self { xtx, s, t, sy, syy, n: y.len() }
    }
}

struct Profile<'a> {
    stats: Vec<&'a SuffStats>,
    sxx: DMatrix<f64>,
    txy: DVector<f64>,
    syy: f64,
    n: usize,
    d: usize,
    reml: bool,
    evals: Cell<usize>,
}

struct Evaluation {
    deviance: f64,
    beta: DVector<f64>,
    sigma2: f64,
    /// (Xᵀ V*⁻¹ X) at θ
    information: DMatrix<f64>,
}

impl<'a> Profile<'a> {
    fn new(prep: &'a PreparedData<'_>, active: &[usize], reml: bool) -> Self {
        let d = prep.layout.dim();
        let stats: Vec<&SuffStats> = active.iter().map(|&i| &prep.suff[i]).collect();
        let mut sxx = DMatrix::zeros(d, d);
        let mut txy = DVector::zeros(d);
        let mut syy = 0.0;
        let mut n = 0;
        for st in &stats {
            sxx += &st.xtx;
            txy += &st.t;
            syy += st.syy;
            n += st.n;
        }
        Self { stats, sxx, txy, syy, n, d, reml, evals: Cell::new(0) }
    }

    fn eval(&self, theta: f64) -> Result<Evaluation> {
        self.evals.set(self.evals.get() + 1);
        let mut a = self.sxx.clone();
        let mut b = self.txy.clone();
        let mut yvy = self.syy;
        let mut logdet_v = 0.0;
        if theta > 0.0 {
            for st in &self.stats {
                let nt = st.n as f64 * theta;
                let k = theta / (1.0 + nt);
                a.ger(-k, &st.s, &st.s, 1.0);
                b.axpy(-k * st.sy, &st.s, 1.0);
                yvy -= k * st.sy * st.sy;
                logdet_v += nt.ln_1p();
            }
        }
        let chol = cholesky(&a, "linear mixed model")?;
        let beta = chol.solve(&b);
        let q = (yvy - b.dot(&beta)).max(0.0);
        let n = self.n as f64;
        let df = if self.reml { n - self.d as f64 } else { n };
        if df <= 0.0 || q <= 0.0 {
            return Err(Error::RankDeficient("linear mixed model: no residual degrees of freedom".into()));
        }
        let sigma2 = q / df;
        let mut deviance = df * (2.0 * PI * sigma2).ln() + df + logdet_v;
        if self.reml {
            let l = chol.l_dirty();
            deviance += 2.0 * (0..self.d).map(|k| l[(k, k)].ln()).sum::<f64>();
        }
        Ok(Evaluation { deviance, beta, sigma2, information: a })
    }

    fn deviance_at_log(&self, phi: f64) -> f64 {
        self.eval(phi.exp()).map(|e| e.deviance).unwrap_or(f64::INFINITY)
    }
}

/// Index of the smallest value, first on ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = k;
        }
    }
    best
}

/// Minimizes the profiled deviance over log θ on a grid, then refines the
/// bracketing cell by Brent's method. `None` means the boundary θ = 0.
fn optimize(profile: &Profile<'_>, hint: Option<f64>) -> Option<f64> {
    let search = |grid: &[f64]| -> (usize, Vec<f64>) {
        let vals: Vec<f64> = grid.iter().map(|&g| profile.deviance_at_log(g)).collect();
        (argmin(&vals), vals)
    };
    let local: Option<(f64, f64)> = hint.and_then(|h| {
        let grid: Vec<f64> = (0..=12).map(|k| h - 3.0 + 0.5 * k as f64).collect();
        let (k, _) = search(&grid);
        (k > 0 && k < grid.len() - 1).then(|| (grid[k - 1], grid[k + 1]))
    });
    let bracket = match local {
        Some(b) => Some(b),
        None => {
            let grid: Vec<f64> = (0..=24).map(|k| -16.0 + k as f64).collect();
            let (k, _) = search(&grid);
            if k == 0 {
                None
            } else {
                Some((grid[k - 1], grid[(k + 1).min(grid.len() - 1)]))
            }
        }
    };
    let (lo, hi) = bracket?;
    let (phi, dev) = brent_min(|p| profile.deviance_at_log(p), lo, hi, 1e-10, 200);
    let at_zero = profile.eval(0.0).map(|e| e.deviance).unwrap_or(f64::INFINITY);
    (at_zero > dev).then(|| phi.exp())
}

pub(super) fn fit(
    spec: &ModelSpec,
    prep: &PreparedData<'_>,
    active: &[usize],
    opts: FitOptions<'_>,
) -> Result<FittedWorkingModel> {
    let profile = Profile::new(prep, active, spec.reml);
    let hint = opts.start.and_then(|s| {
        let sb = s.variance.random_intercept?;
        let se = s.variance.residual?;
        (sb > 0.0 && se > 0.0).then(|| (sb / se).ln())
    });
    let theta = optimize(&profile, hint);
    let mut theta = theta.unwrap_or(0.0);
    let mut ev = profile.eval(theta)?;
    let mut boundary = theta == 0.0;
    if theta * ev.sigma2 < BOUNDARY {
        if theta > 0.0 {
            theta = 0.0;
            ev = profile.eval(0.0)?;
        }
        boundary = true;
    }
    let gradient_norm = if boundary {
        let h = 1e-8;
        let d0 = ev.deviance;
        profile.eval(h).map(|e| ((e.deviance - d0) / h).abs()).unwrap_or(f64::NAN)
    } else {
        let h = 1e-5;
        let phi = theta.ln();
        ((profile.deviance_at_log(phi + h) - profile.deviance_at_log(phi - h)) / (2.0 * h)).abs()
    };

    let beta: Vec<f64> = ev.beta.iter().copied().collect();
    let mut model = FittedWorkingModel::new(spec, prep.layout, beta);
    model.variance.random_intercept = Some(theta * ev.sigma2);
    model.variance.residual = Some(ev.sigma2);
    model.diagnostics.iterations = profile.evals.get();
    model.diagnostics.gradient_norm = gradient_norm;
    model.diagnostics.boundary = boundary;
    if opts.coef_cov {
        model.coef_cov = Some(crate::linalg::spd_inverse(&ev.information, "linear mixed model")? * ev.sigma2);
    }
    Ok(model)
}
