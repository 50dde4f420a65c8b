use ndarray::Array2;

use super::affinity::relabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AhcStop {
    /// Merge while the best average similarity is at least this value.
    Threshold(f64),
    /// Merge until this many clusters remain.
    TargetK(usize),
}

/// One agglomeration step: the clusters holding the listed members merged
/// at `similarity`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub similarity: f64,
}

/// Average-linkage agglomerative clustering on a similarity matrix.
/// Returns labels by first appearance and the merge sequence. Ties go to
/// the pair whose smallest members come first.
pub fn ahc_merges(scores: &Array2<f64>, stop: AhcStop) -> Result<(Vec<usize>, Vec<Merge>)> {
    let n = scores.nrows();
    if scores.ncols() != n {
        return Err(Error::InvalidInput(format!("score matrix is {n}×{}", scores.ncols())));
    }
    if let AhcStop::TargetK(k) = stop {
        if k == 0 || k > n {
            return Err(Error::Parameter(format!("target_k = {k} must lie in [1, {n}]")));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if (scores[[i, j]] - scores[[j, i]]).abs() > 1e-8 * (1.0 + scores[[i, j]].abs()) {
                return Err(Error::InvalidInput(format!("score matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    // clusters are identified by their smallest member, which never changes
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut sim = scores.clone();
    let mut merges = Vec::new();
    let mut alive = n;
    loop {
        if let AhcStop::TargetK(k) = stop {
            if alive <= k {
                break;
            }
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_none() {
                    continue;
                }
                if best.is_none_or(|b| sim[[i, j]] > b.2) {
                    best = Some((i, j, sim[[i, j]]));
                }
            }
        }
        let Some((i, j, s)) = best else { break };
        if let AhcStop::Threshold(t) = stop {
            if s < t {
                break;
            }
        }
        let mj = members[j].take().expect("alive");
        let mi = members[i].as_mut().expect("alive");
        let (ni, nj) = (mi.len() as f64, mj.len() as f64);
        merges.push(Merge {
            left: mi.clone(),
            right: mj.clone(),
            similarity: s,
        });
        mi.extend(mj);
        mi.sort_unstable();
        for k in 0..n {
            if k != i && members[k].is_some() {
                let v = (ni * sim[[i, k]] + nj * sim[[j, k]]) / (ni + nj);
                sim[[i, k]] = v;
                sim[[k, i]] = v;
            }
        }
        alive -= 1;
    }
    let mut labels = vec![0; n];
    for (c, m) in members.iter().enumerate() {
        if let Some(m) = m {
            for &x in m {
                labels[x] = c;
            }
        }
    }
    Ok((relabel(&labels), merges))
}

pub fn ahc_cluster(scores: &Array2<f64>, stop: AhcStop) -> Result<Vec<usize>> {
    Ok(ahc_merges(scores, stop)?.0)
}
