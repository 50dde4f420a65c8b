//! Affinity construction, NME-SC spectral clustering with automatic
//! cluster-count estimation, and average-linkage AHC.

mod affinity;
mod ahc;
mod eigen;
mod kmeans;
mod nme;

use ndarray::{s, Array2};

pub use affinity::{binarize_affinity, connected_components, cosine_affinity, laplacian, relabel};
pub use ahc::{ahc_cluster, ahc_merges, AhcStop, Merge};
pub use eigen::{eigh_symmetric, eigvalsh};
pub use kmeans::kmeans;
pub use nme::{default_p_grid, nme_search, normalized_max_eigengap, NmeResult, DEFAULT_MAX_SPEAKERS};

use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 10;

/// k-means on the rows of the `k` eigenvectors of L = D − A with the
/// smallest eigenvalues. Labels are numbered by first appearance.
pub fn spectral_cluster(a: &Array2<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = a.nrows();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k = {k} must lie in [1, {n}]")));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let (_, vecs) = eigh_symmetric(&laplacian(a))?;
    let emb = vecs.slice(s![.., ..k]).to_owned();
    let (labels, _) = kmeans(&emb, k, KMEANS_RESTARTS, seed)?;
    Ok(relabel(&labels))
}

/// Full NME-SC: estimate p and k ≤ `max_k` on `a` (or take `oracle_k`),
/// then cluster the binarized affinity at the selected p. With an oracle
/// k the p search only considers graphs with at most k components.
pub fn nme_sc(
    a: &Array2<f64>,
    oracle_k: Option<usize>,
    max_k: usize,
    seed: u64,
) -> Result<(Vec<usize>, NmeResult)> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("nothing to cluster".into()));
    }
    let mut grid = default_p_grid(n);
    if let Some(k) = oracle_k.filter(|_| n > 1) {
        // a graph with more than k components cannot be split into k
        // clusters without merging components arbitrarily
        let mut kept = Vec::new();
        for &p in &grid {
            let comps = connected_components(&binarize_affinity(a, p)?);
            if comps.iter().max().map_or(0, |m| m + 1) <= k {
                kept.push(p);
            }
        }
        if !kept.is_empty() {
            grid = kept;
        }
    }
    let nme = nme_search(a, &grid, max_k)?;
    if n == 1 {
        return Ok((vec![0], nme));
    }
    let k = oracle_k.unwrap_or(nme.k_est).min(n);
    let b = binarize_affinity(a, nme.best_p)?;
    Ok((spectral_cluster(&b, k, seed)?, nme))
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total.max(1.0);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

#[cfg(test)]
mod tests;
