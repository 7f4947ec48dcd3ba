//! Ordinary least squares on cluster means.

use nalgebra::{DMatrix, DVector};

use super::{FitOptions, FittedWorkingModel, ModelSpec, PreparedData};
use crate::error::Result;
use crate::linalg::{cholesky, dot, rank1_update};

pub(super) fn fit(
    spec: &ModelSpec,
    prep: &PreparedData<'_>,
    active: &[usize],
    opts: FitOptions<'_>,
) -> Result<FittedWorkingModel> {
    let layout = prep.layout;
    let d = layout.dim();
    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    let mut rows = vec![0.0; active.len() * d];
    for (k, &i) in active.iter().enumerate() {
        let s = &prep.summaries[i];
        let row = &mut rows[k * d..(k + 1) * d];
        layout.mean_row(s, u8::from(s.treated), row);
        rank1_update(&mut xtx, 1.0, row);
        for c in 0..d {
            xty[c] += row[c] * s.ybar;
        }
    }
    let chol = cholesky(&xtx, "cluster-level linear model")?;
    let beta = chol.solve(&xty);
    let beta: Vec<f64> = beta.iter().copied().collect();

    let resid: Vec<f64> = active
        .iter()
        .enumerate()
        .map(|(k, &i)| prep.summaries[i].ybar - dot(&beta, &rows[k * d..(k + 1) * d]))
        .collect();
    let m = active.len();
    let mut model = FittedWorkingModel::new(spec, layout, beta);
    if m > d {
        model.variance.residual = Some(resid.iter().map(|r| r * r).sum::<f64>() / (m - d) as f64);
    }
    if opts.coef_cov {
        // HC0 sandwich: (XᵀX)⁻¹ Σ e_i² x_i x_iᵀ (XᵀX)⁻¹
        let bread = chol.inverse();
        let mut meat = DMatrix::zeros(d, d);
        for (k, e) in resid.iter().enumerate() {
            rank1_update(&mut meat, e * e, &rows[k * d..(k + 1) * d]);
        }
        model.coef_cov = Some(&bread * meat * &bread);
    }
    Ok(model)
}
