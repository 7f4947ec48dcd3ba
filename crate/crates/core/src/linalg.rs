//! Small dense linear-algebra helpers shared by the model fitters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative pivot below which a column is treated as a linear combination of earlier ones.
const PIVOT_TOL: f64 = 1e-10;

/// Cholesky factor of a symmetric positive definite matrix, with an explicit
/// rank check on every pivot relative to its diagonal entry.
pub(crate) fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    for k in 0..n {
        let d = a[(k, k)];
        if !d.is_finite() {
            return Err(Error::NonFinite(format!("{what}: non-finite cross-product")));
        }
        if d <= 0.0 {
            return Err(Error::RankDeficient(format!("{what}: column {k} is identically zero")));
        }
    }
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| Error::RankDeficient(format!("{what}: design is not of full rank")))?;
    let l = chol.l_dirty();
    for k in 0..n {
        let pivot = l[(k, k)] * l[(k, k)];
        if !(pivot > PIVOT_TOL * a[(k, k)]) {
            return Err(Error::RankDeficient(format!(
                "{what}: column {k} is collinear with earlier columns"
            )));
        }
    }
    Ok(chol)
}

pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(cholesky(a, what)?.solve(b))
}

pub(crate) fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(cholesky(a, what)?.inverse())
}

/// a += w * x xᵀ for a symmetric accumulator.
pub(crate) fn rank1_update(a: &mut DMatrix<f64>, w: f64, x: &[f64]) {
    let d = x.len();
    for c in 0..d {
        let wc = w * x[c];
        if wc == 0.0 {
            continue;
        }
        for r in 0..d {
            a[(r, c)] += wc * x[r];
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
