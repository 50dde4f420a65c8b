use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};

fn to_dmatrix(m: &Array2<f64>) -> Result<DMatrix<f64>> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::InvalidInput(format!("matrix is {r}×{c}, expected square")));
    }
    let scale = m.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    for i in 0..r {
        for j in i + 1..r {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-8 * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[[i, j]],
                    m[[j, i]]
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| 0.5 * (m[[i, j]] + m[[j, i]])))
}

/// Eigenvalues in ascending order with matching unit eigenvectors as the
/// columns of the returned matrix.
pub fn eigh_symmetric(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(to_dmatrix(m)?);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Ascending eigenvalues only.
pub fn eigvalsh(m: &Array2<f64>) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = to_dmatrix(m)?.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}
