use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const REL_TOL: f64 = 1e-9;

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn plus_plus(data: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut centers = Array2::zeros((k, data.ncols()));
    centers.row_mut(0).assign(&data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centers.row(c)));
        }
    }
    centers
}

fn lloyd(data: &Array2<f64>, mut centers: Array2<f64>) -> (Vec<usize>, f64) {
    let (n, k) = (data.nrows(), centers.nrows());
    let mut labels = vec![0; n];
    let mut prev = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    for _ in 0..MAX_ITER {
        inertia = 0.0;
        for i in 0..n {
            let (mut best, mut bd) = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(data.row(i), centers.row(c));
                if d < bd {
                    best = c;
                    bd = d;
                }
            }
            labels[i] = best;
            inertia += bd;
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let mut row = sums.row_mut(l);
            row += &data.row(i);
            counts[l] += 1;
        }
        for c in 0..k {
            // an emptied cluster keeps its previous centre
            if counts[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        if prev.is_finite() && (prev - inertia).abs() <= REL_TOL * prev.max(f64::MIN_POSITIVE) {
            break;
        }
        prev = inertia;
    }
    (labels, inertia)
}

/// k-means with k-means++ seeding; the lowest-inertia of `restarts` runs
/// is kept. Returns labels and inertia.
pub fn kmeans(data: &Array2<f64>, k: usize, restarts: usize, seed: u64) -> Result<(Vec<usize>, f64)> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k = {k} must lie in [1, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(data, plus_plus(data, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
