//! Dense SPD helpers over nalgebra for the back-end models.

use nalgebra::{Cholesky, DMatrix, Dyn};
use ndarray::{Array1, Array2};

use crate::clustering::eigh_symmetric;
use crate::error::{Error, Result};

pub(crate) fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub(crate) fn cholesky(m: &Array2<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(to_na(&symmetrize(m)))
        .ok_or_else(|| Error::Degenerate(format!("{what} is not positive definite")))
}

pub(crate) fn spd_inverse(m: &Array2<f64>, what: &str) -> Result<Array2<f64>> {
    Ok(symmetrize(&from_na(&cholesky(m, what)?.inverse())))
}

pub(crate) fn spd_logdet(m: &Array2<f64>, what: &str) -> Result<f64> {
    let l = cholesky(m, what)?;
    Ok(2.0 * l.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub(crate) fn symmetrize(m: &Array2<f64>) -> Array2<f64> {
    (m + &m.t()) * 0.5
}

/// Symmetric part of `m` with eigenvalues clamped to at least `floor`.
pub(crate) fn floor_eigenvalues(m: &Array2<f64>, floor: f64) -> Result<Array2<f64>> {
    let (vals, vecs) = eigh_symmetric(&symmetrize(m))?;
    if vals.iter().all(|&v| v >= floor) {
        return Ok(symmetrize(m));
    }
    let clamped = Array1::from_iter(vals.iter().map(|&v| v.max(floor)));
    let scaled = &vecs * &clamped;
    Ok(symmetrize(&scaled.dot(&vecs.t())))
}

pub(crate) fn trace(m: &Array2<f64>) -> f64 {
    m.diag().sum()
}
