//! Logistic mean model for cluster proportions with a Gaussian working
//! variance, i.e. nonlinear least squares solved by damped Gauss–Newton.

use nalgebra::{DMatrix, DVector};

use super::{clamp_eta, expit, logit, FitOptions, FittedWorkingModel, ModelSpec, PreparedData};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, rank1_update, spd_inverse};

const MAX_ITER: usize = 200;
const TOL: f64 = 1e-10;

fn ssr(beta: &[f64], rows: &[f64], y: &[f64]) -> f64 {
    let d = beta.len();
    rows.chunks_exact(d)
        .zip(y)
        .map(|(x, &y)| {
            let r = y - expit(clamp_eta(dot(beta, x)));
            r * r
        })
        .sum()
}

pub(super) fn fit(
    spec: &ModelSpec,
    prep: &PreparedData<'_>,
    active: &[usize],
    opts: FitOptions<'_>,
) -> Result<FittedWorkingModel> {
    let layout = prep.layout;
    let d = layout.dim();
    let m = active.len();
    let mut rows = vec![0.0; m * d];
    let mut y = Vec::with_capacity(m);
    for (k, &i) in active.iter().enumerate() {
        let s = &prep.summaries[i];
        layout.mean_row(s, u8::from(s.treated), &mut rows[k * d..(k + 1) * d]);
        y.push(s.ybar);
    }

    let mut beta = match opts.start {
        Some(st) if st.coefficients.len() == d => st.coefficients.clone(),
        _ => {
            let mut b = vec![0.0; d];
            let ybar = (y.iter().sum::<f64>() / m as f64).clamp(1e-4, 1.0 - 1e-4);
            b[0] = logit(ybar);
            b
        }
    };
    let mut current = ssr(&beta, &rows, &y);
    let mut iterations = 0;
    let mut converged = false;
    let mut jtj = DMatrix::zeros(d, d);
    let mut grad_norm = f64::INFINITY;
    while iterations < MAX_ITER {
        iterations += 1;
        jtj.fill(0.0);
        let mut jtr = DVector::zeros(d);
        let mut jrow = vec![0.0; d];
        for (x, &yk) in rows.chunks_exact(d).zip(&y) {
            let mu = expit(clamp_eta(dot(&beta, x)));
            let dmu = mu * (1.0 - mu);
            for c in 0..d {
                jrow[c] = dmu * x[c];
            }
            rank1_update(&mut jtj, 1.0, &jrow);
            for c in 0..d {
                jtr[c] += jrow[c] * (yk - mu);
            }
        }
        grad_norm = jtr.norm();
        let step = cholesky(&jtj, "cluster-level logistic model")?.solve(&jtr);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let value = ssr(&trial, &rows, &y);
            if value <= current {
                beta = trial;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let size = t * step.norm();
        let scale = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if !accepted || size <= TOL * (1.0 + scale) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { what: "cluster-level logistic model", iterations });
    }

    let mut model = FittedWorkingModel::new(spec, layout, beta);
    model.diagnostics.iterations = iterations;
    model.diagnostics.gradient_norm = grad_norm;
    if m > d {
        let phi = current / (m - d) as f64;
        model.variance.residual = Some(phi);
        if opts.coef_cov {
            // model-based: φ̂ (JᵀJ)⁻¹ at the solution
            model.coef_cov = Some(spd_inverse(&jtj, "cluster-level logistic model")? * phi);
        }
    }
    Ok(model)
}
