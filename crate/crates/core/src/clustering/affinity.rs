use ndarray::Array2;

use crate::error::{Error, Result};

/// Pairwise cosine similarity of embedding rows, exactly symmetric.
pub fn cosine_affinity(emb: &Array2<f64>) -> Result<Array2<f64>> {
    if emb.nrows() == 0 {
        return Err(Error::EmptyInput("no embeddings to compare".into()));
    }
    let mut unit = emb.clone();
    for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate(format!("embedding row {i} has norm {norm}")));
        }
        row /= norm;
    }
    let a = unit.dot(&unit.t());
    let mut s = (&a + &a.t()) * 0.5;
    s.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok(s)
}

/// Keeps the `p` largest off-diagonal entries of each row as 1 (ties to
/// the lower column), sets the diagonal to 1, and symmetrizes as
/// (B + Bᵀ)/2.
pub fn binarize_affinity(a: &Array2<f64>, p: usize) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput(format!("affinity is {}×{}", n, a.ncols())));
    }
    if p < 1 || p + 1 > n {
        return Err(Error::Parameter(format!("p = {p} outside [1, {}]", n.saturating_sub(1))));
    }
    let mut b = Array2::<f64>::zeros((n, n));
    let mut cols: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        cols.clear();
        cols.extend((0..n).filter(|&j| j != i));
        cols.sort_by(|&x, &y| {
            a[[i, y]]
                .partial_cmp(&a[[i, x]])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(x.cmp(&y))
        });
        for &j in &cols[..p] {
            b[[i, j]] = 1.0;
        }
        b[[i, i]] = 1.0;
    }
    Ok((&b + &b.t()) * 0.5)
}

/// Unnormalized graph Laplacian D − B.
pub fn laplacian(b: &Array2<f64>) -> Array2<f64> {
    let mut l = -b.clone();
    for (i, row) in b.rows().into_iter().enumerate() {
        l[[i, i]] += row.sum();
    }
    l
}

/// Connected components of the graph with an edge wherever `b[i][j] > 0`,
/// labelled by first appearance.
pub fn connected_components(b: &Array2<f64>) -> Vec<usize> {
    let n = b.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if b[[i, j]] > 0.0 || b[[j, i]] > 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    relabel(&roots)
}

/// Renumbers labels 0, 1, … in order of first appearance.
pub fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}
