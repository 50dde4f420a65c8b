use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};

use super::linalg::{cholesky, from_na, symmetrize, to_na, trace};
use crate::clustering::eigh_symmetric;
use crate::error::{Error, Result};

/// Within-class scatter is regularized by this fraction of trace/D.
pub const LDA_REG: f64 = 1e-6;

/// Linear discriminant projection: y = V (x − mean), one direction per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    pub mean: Array1<f64>,
    pub projection: Array2<f64>,
    /// Generalized eigenvalues, descending, matching the rows of `projection`.
    pub eigenvalues: Vec<f64>,
}

/// Global mean, between-class and within-class scatter, each averaged
/// over samples.
pub fn scatter_matrices(x: &Array2<f64>, labels: &[usize]) -> Result<(Array1<f64>, Array2<f64>, Array2<f64>)> {
    let (n, d) = x.dim();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::EmptyInput("no embeddings".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let mut sb = Array2::zeros((d, d));
    let mut sw = Array2::zeros((d, d));
    for rows in group(labels).values() {
        let sub = x.select(Axis(0), rows);
        let m = sub.mean_axis(Axis(0)).expect("non-empty");
        let dm = (&m - &mean).insert_axis(Axis(1));
        sb = sb + dm.dot(&dm.t()) * rows.len() as f64;
        let c = &sub - &m;
        sw = sw + c.t().dot(&c);
    }
    Ok((mean, sb / n as f64, sw / n as f64))
}

pub(crate) fn group(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        g.entry(l).or_default().push(i);
    }
    g
}

/// Solves S_b v = λ S_w v by whitening with the Cholesky factor of the
/// regularized S_w; directions satisfy vᵀ S_w v = 1.
pub fn fit_lda(x: &Array2<f64>, labels: &[usize], out_dim: usize) -> Result<Lda> {
    let d = x.ncols();
    let groups = group(labels);
    if out_dim == 0 || out_dim >= groups.len() {
        return Err(Error::Parameter(format!(
            "LDA dimension {out_dim} needs more than {out_dim} classes, found {}",
            groups.len()
        )));
    }
    if out_dim > d {
        return Err(Error::Parameter(format!("LDA dimension {out_dim} exceeds input dimension {d}")));
    }
    if !groups.values().any(|r| r.len() >= 2) {
        return Err(Error::InvalidInput("LDA needs a class with at least two samples".into()));
    }
    let (mean, sb, sw) = scatter_matrices(x, labels)?;
    let sw = regularize(&sw)?;
    let l = cholesky(&sw, "within-class scatter")?;
    let lower = l.l();
    // C = L⁻¹ S_b L⁻ᵀ
    let linv_sb = lower
        .solve_lower_triangular(&to_na(&sb))
        .expect("non-singular factor");
    let c = lower
        .solve_lower_triangular(&linv_sb.transpose())
        .expect("non-singular factor");
    let (vals, vecs) = eigh_symmetric(&symmetrize(&from_na(&c)))?;
    let mut projection = Array2::zeros((out_dim, d));
    let mut eigenvalues = Vec::with_capacity(out_dim);
    for k in 0..out_dim {
        let col = d - 1 - k;
        let u = to_na(&vecs.column(col).to_owned().insert_axis(Axis(1)));
        let v = lower.tr_solve_lower_triangular(&u).expect("non-singular factor");
        let mut v: Array1<f64> = Array1::from_iter(v.iter().copied());
        // deterministic sign: largest-magnitude component positive
        let big = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if big < 0.0 {
            v.mapv_inplace(|t| -t);
        }
        projection.row_mut(k).assign(&v);
        eigenvalues.push(vals[col]);
    }
    Ok(Lda {
        mean,
        projection,
        eigenvalues,
    })
}

pub(crate) fn regularize(sw: &Array2<f64>) -> Result<Array2<f64>> {
    let d = sw.nrows();
    let tr = trace(sw);
    if tr <= 0.0 {
        return Err(Error::Degenerate("within-class scatter is zero".into()));
    }
    Ok(sw + &(Array2::<f64>::eye(d) * (LDA_REG * tr / d as f64)))
}

impl Lda {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// V (x − mean) for every row, without normalization.
    pub fn project(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "embeddings have dimension {}, LDA expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok((x - &self.mean).dot(&self.projection.t()))
    }

    /// Projection followed by length normalization.
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut y = self.project(x)?;
        length_normalize(&mut y)?;
        Ok(y)
    }
}

/// Scales every row to unit Euclidean norm.
pub fn length_normalize(x: &mut Array2<f64>) -> Result<()> {
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Degenerate(format!("row {i} has norm {norm}")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(())
}
