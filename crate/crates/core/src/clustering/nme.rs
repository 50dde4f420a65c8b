use ndarray::Array2;

use super::affinity::{binarize_affinity, connected_components, laplacian};
use super::eigen::eigvalsh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NmeResult {
    pub best_p: usize,
    pub k_est: usize,
    pub p_grid: Vec<usize>,
    /// Normalized maximum eigengap for each grid entry.
    pub g_p: Vec<f64>,
    /// p / g_p for each grid entry; infinite when g_p = 0.
    pub ratio: Vec<f64>,
    /// Cluster count implied at each grid entry.
    pub k_per_p: Vec<usize>,
}

/// Search grid {2, …, ceil(n/4)} clipped to [1, n − 1]. p = 1 is left
/// out: a 1-nearest-neighbour graph splits into many small trees whose
/// spectrum carries no cluster information.
pub fn default_p_grid(n: usize) -> Vec<usize> {
    let lo = 2.min(n.saturating_sub(1)).max(1);
    let hi = n.div_ceil(4).min(n.saturating_sub(1)).max(lo);
    (lo..=hi).collect()
}

/// Default upper bound on the cluster count, i.e. on the eigengap index.
pub const DEFAULT_MAX_SPEAKERS: usize = 10;

/// Largest of the first `max_k` eigengaps normalized by the largest
/// eigenvalue, and the number of eigenvalues below that gap. `None` when
/// λ_max = 0.
pub fn normalized_max_eigengap(eigs: &[f64], max_k: usize) -> Option<(f64, usize)> {
    let lmax = *eigs.last()?;
    if !(lmax > 0.0) {
        return None;
    }
    let mut best = (f64::NEG_INFINITY, 1);
    for i in 0..eigs.len().saturating_sub(1).min(max_k.max(1)) {
        let gap = eigs[i + 1] - eigs[i];
        if gap > best.0 {
            best = (gap, i + 1);
        }
    }
    Some(((best.0 / lmax).clamp(0.0, 1.0), best.1))
}

/// Picks p minimizing p/g_p over `p_grid` (ties to the smaller p) and the
/// cluster count, at most `max_k`, at that p.
pub fn nme_search(a: &Array2<f64>, p_grid: &[usize], max_k: usize) -> Result<NmeResult> {
    let n = a.nrows();
    if p_grid.is_empty() {
        return Err(Error::Parameter("empty p grid".into()));
    }
    if n == 1 {
        return Ok(NmeResult {
            best_p: 0,
            k_est: 1,
            p_grid: vec![],
            g_p: vec![],
            ratio: vec![],
            k_per_p: vec![],
        });
    }
    let mut out = NmeResult {
        best_p: p_grid[0],
        k_est: 1,
        p_grid: p_grid.to_vec(),
        g_p: Vec::with_capacity(p_grid.len()),
        ratio: Vec::with_capacity(p_grid.len()),
        k_per_p: Vec::with_capacity(p_grid.len()),
    };
    let mut best: Option<usize> = None;
    for (gi, &p) in p_grid.iter().enumerate() {
        let b = binarize_affinity(a, p)?;
        let eigs = eigvalsh(&laplacian(&b))?;
        let (g, k) = match normalized_max_eigengap(&eigs, max_k) {
            Some(v) => v,
            None => (0.0, *connected_components(&b).iter().max().unwrap_or(&0) + 1),
        };
        let ratio = if g > 0.0 { p as f64 / g } else { f64::INFINITY };
        out.g_p.push(g);
        out.ratio.push(ratio);
        out.k_per_p.push(k);
        if best.is_none_or(|bi| ratio < out.ratio[bi]) {
            best = Some(gi);
        }
    }
    let bi = best.expect("non-empty grid");
    out.best_p = p_grid[bi];
    out.k_est = out.k_per_p[bi].max(1);
    Ok(out)
}
