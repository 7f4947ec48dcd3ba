//! Generalized estimating equations with independence, exchangeable or
//! arm-specific exchangeable working correlation.
//!
//! With standardized rows Z_i = diag(μ'/√v) X_i and residuals e_i = (y − μ)/√v,
//! the exchangeable inverse is R⁻¹ = (I − cJ)/(1 − ρ) with c = ρ/(1 − ρ + Nρ),
//! so each cluster only contributes ZᵀZ, Zᵀ1, Zᵀe, 1ᵀe and eᵀe.

use nalgebra::{DMatrix, DVector};

use super::lmm::SuffStats;
use super::{
    clamp_eta, expit, logit, FitOptions, FittedWorkingModel, Icc, Link, ModelSpec, PreparedData,
    WorkingCorrelation,
};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, spd_inverse};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;

struct Moments {
    zz: DMatrix<f64>,
    z1: DVector<f64>,
    ze: DVector<f64>,
    e1: f64,
    ee: f64,
    n: usize,
    arm: usize,
}

fn moments_linear(st: &SuffStats, beta: &DVector<f64>, arm: usize) -> Moments {
    let xb = &st.xtx * beta;
    let ze = &st.t - &xb;
    let e1 = st.sy - st.s.dot(beta);
    let ee = st.syy - 2.0 * beta.dot(&st.t) + beta.dot(&xb);
    Moments { zz: st.xtx.clone(), z1: st.s.clone(), ze, e1, ee: ee.max(0.0), n: st.n, arm }
}

fn moments_nonlinear(link: Link, rows: &[f64], y: &[f64], beta: &[f64], arm: usize) -> Moments {
    let d = beta.len();
    let mut zz = DMatrix::zeros(d, d);
    let mut z1 = DVector::zeros(d);
    let mut ze = DVector::zeros(d);
    let mut e1 = 0.0;
    let mut ee = 0.0;
    let mut z = vec![0.0; d];
    for (x, &yj) in rows.chunks_exact(d).zip(y) {
        let eta = clamp_eta(dot(beta, x));
        // canonical links: dμ/dη = v, so μ'/√v = √v
        let (mu, v) = match link {
            Link::Logit => {
                let mu = expit(eta);
                (mu, (mu * (1.0 - mu)).max(1e-300))
            }
            _ => {
                let mu = eta.exp();
                (mu, mu.max(1e-300))
            }
        };
        let sv = v.sqrt();
        let e = (yj - mu) / sv;
        for c in 0..d {
            z[c] = sv * x[c];
        }
        crate::linalg::rank1_update(&mut zz, 1.0, &z);
        for c in 0..d {
            z1[c] += z[c];
            ze[c] += z[c] * e;
        }
        e1 += e;
        ee += e * e;
    }
    Moments { zz, z1, ze, e1, ee, n: y.len(), arm }
}

/// Per-cluster B_i = ZᵀR⁻¹Z and u_i = ZᵀR⁻¹e.
fn weighted(mo: &Moments, rho: f64) -> (DMatrix<f64>, DVector<f64>) {
    if rho == 0.0 {
        return (mo.zz.clone(), mo.ze.clone());
    }
    let n = mo.n as f64;
    let c = rho / (1.0 - rho + n * rho);
    let scale = 1.0 / (1.0 - rho);
    let mut b = mo.zz.clone();
    b.ger(-c, &mo.z1, &mo.z1, 1.0);
    let mut u = mo.ze.clone();
    u.axpy(-c * mo.e1, &mo.z1, 1.0);
    (b * scale, u * scale)
}

/// Adds X_iᵀR⁻¹y_i for the identity link.
fn gls_rhs(rhs: &mut DVector<f64>, st: &SuffStats, n: usize, rho: f64) {
    let c = rho / (1.0 - rho + n as f64 * rho);
    let scale = 1.0 / (1.0 - rho);
    rhs.axpy(scale, &st.t, 1.0);
    rhs.axpy(-c * scale * st.sy, &st.s, 1.0);
}

struct CorrelationEstimate {
    rho: [f64; 2],
    phi: f64,
    clamped: bool,
}

/// Moment estimator from Pearson residuals: pairwise products over
/// φ · Σ N_i(N_i − 1)/2, pooled or per arm.
fn estimate_correlation(
    moments: &[Moments],
    corr: WorkingCorrelation,
    d: usize,
    max_n: usize,
) -> Result<CorrelationEstimate> {
    let n_total: usize = moments.iter().map(|m| m.n).sum();
    let df = n_total as f64 - d as f64;
    let phi = moments.iter().map(|m| m.ee).sum::<f64>() / df.max(1.0);
    if corr == WorkingCorrelation::Independence {
        return Ok(CorrelationEstimate { rho: [0.0; 2], phi, clamped: false });
    }
    let mut pairs = [0.0f64; 2];
    let mut counts = [0.0f64; 2];
    for mo in moments {
        let g = if corr == WorkingCorrelation::ArmExchangeable { mo.arm } else { 0 };
        pairs[g] += 0.5 * (mo.e1 * mo.e1 - mo.ee);
        let n = mo.n as f64;
        counts[g] += 0.5 * n * (n - 1.0);
    }
    let lower = if max_n > 1 { -1.0 / (max_n as f64 - 1.0) } else { -1.0 };
    let eps = 1e-6;
    let mut clamped = false;
    let mut rho = [0.0; 2];
    let groups = if corr == WorkingCorrelation::ArmExchangeable { 2 } else { 1 };
    for g in 0..groups {
        if counts[g] == 0.0 || phi <= 0.0 {
            return Err(Error::IccUndefined("no within-cluster pairs to estimate the working correlation"));
        }
        let mut r = pairs[g] / (phi * counts[g]);
        if r <= lower + eps {
            r = lower + eps;
            clamped = true;
        } else if r >= 1.0 - eps {
            r = 1.0 - eps;
            clamped = true;
        }
        rho[g] = r;
    }
    if groups == 1 {
        rho[1] = rho[0];
    }
    Ok(CorrelationEstimate { rho, phi, clamped })
}

pub(super) fn fit(
    spec: &ModelSpec,
    prep: &PreparedData<'_>,
    active: &[usize],
    opts: FitOptions<'_>,
) -> Result<FittedWorkingModel> {
    let d = prep.layout.dim();
    let link = spec.link;
    let corr = spec.working_correlation;
    let max_n = active.iter().map(|&i| prep.summaries[i].n).max().unwrap_or(1);
    let arms: Vec<usize> = active.iter().map(|&i| usize::from(prep.summaries[i].treated)).collect();

    let compute = |beta: &DVector<f64>| -> Vec<Moments> {
        active
            .iter()
            .zip(&arms)
            .map(|(&i, &arm)| match link {
                Link::Identity => moments_linear(&prep.suff[i], beta, arm),
                _ => moments_nonlinear(link, prep.rows(i), prep.outcomes(i), beta.as_slice(), arm),
            })
            .collect()
    };

    let mut beta = match opts.start {
        Some(st) if st.coefficients.len() == d => DVector::from_column_slice(&st.coefficients),
        _ => {
            let mut b = DVector::zeros(d);
            let n: usize = active.iter().map(|&i| prep.summaries[i].n).sum();
            let ybar = active
                .iter()
                .map(|&i| prep.summaries[i].ybar * prep.summaries[i].n as f64)
                .sum::<f64>()
                / n as f64;
            b[0] = match link {
                Link::Identity => ybar,
                Link::Logit => logit(ybar.clamp(1e-4, 1.0 - 1e-4)),
                Link::Log => ybar.max(1e-4).ln(),
            };
            b
        }
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut est = CorrelationEstimate { rho: [0.0; 2], phi: 1.0, clamped: false };
    let mut grad_norm = f64::INFINITY;
    while iterations < MAX_ITER {
        iterations += 1;
        let moments = compute(&beta);
        est = estimate_correlation(&moments, corr, d, max_n)?;
        let mut bsum = DMatrix::zeros(d, d);
        let mut usum = DVector::zeros(d);
        for mo in &moments {
            let (b, u) = weighted(mo, est.rho[mo.arm]);
            bsum += b;
            usum += u;
        }
        grad_norm = usum.norm();
        let chol = cholesky(&bsum, "generalized estimating equations")?;
        let step = if link == Link::Identity {
            // exact GLS at the current ρ; a Newton step from β would lose
            // precision to cancellation in u(β) when ρ̂ sits near 1
            let mut rhs = DVector::zeros(d);
            for ((&i, mo), &arm) in active.iter().zip(&moments).zip(&arms) {
                gls_rhs(&mut rhs, &prep.suff[i], mo.n, est.rho[arm]);
            }
            chol.solve(&rhs) - &beta
        } else {
            chol.solve(&usum)
        };
        beta += &step;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("GEE coefficients diverged".into()));
        }
        if step.norm() <= TOL * (beta.norm() + 1e-8) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { what: "generalized estimating equations", iterations });
    }

    // final correlation at the converged coefficients
    let moments = compute(&beta);
    est = estimate_correlation(&moments, corr, d, max_n).unwrap_or(est);

    let mut model = FittedWorkingModel::new(spec, prep.layout, beta.iter().copied().collect());
    model.variance.residual = Some(est.phi);
    model.correlation = match corr {
        WorkingCorrelation::Independence => None,
        WorkingCorrelation::Exchangeable => Some(Icc::Single { rho: est.rho[0] }),
        WorkingCorrelation::ArmExchangeable => Some(Icc::PerArm { rho0: est.rho[0], rho1: est.rho[1] }),
    };
    model.diagnostics.iterations = iterations;
    model.diagnostics.gradient_norm = grad_norm;
    model.diagnostics.clamped = est.clamped;
    if opts.coef_cov {
        model.coef_cov = Some(mancl_derouen(&moments, &est.rho)?);
    }
    Ok(model)
}

/// Bias-corrected sandwich B⁻¹ [Σ s_i s_iᵀ] B⁻¹ with s_i = (I − H_ii)⁻¹-adjusted
/// scores, written via push-through as s_i = (I − B_i B⁻¹)⁻¹ u_i. The
/// dispersion cancels.
fn mancl_derouen(moments: &[Moments], rho: &[f64; 2]) -> Result<DMatrix<f64>> {
    let parts: Vec<(DMatrix<f64>, DVector<f64>)> =
        moments.iter().map(|mo| weighted(mo, rho[mo.arm])).collect();
    let d = parts[0].1.len();
    let mut bsum = DMatrix::zeros(d, d);
    for (b, _) in &parts {
        bsum += b;
    }
    let binv = spd_inverse(&bsum, "GEE sandwich")?;
    let eye = DMatrix::<f64>::identity(d, d);
    let mut meat = DMatrix::zeros(d, d);
    for (b, u) in &parts {
        let a = &eye - b * &binv;
        let s = a
            .lu()
            .solve(u)
            .ok_or_else(|| Error::NonFinite("cluster leverage equals one in the GEE sandwich".into()))?;
        meat.ger(1.0, &s, &s, 1.0);
    }
    Ok(&binv * meat * &binv)
}
