use ndarray::Array2;

use super::FeatureMatrix;

/// Sliding-window cepstral mean normalization.
///
/// Each frame has the per-coefficient mean of a `window_s`-long window
/// centred on it subtracted. Near the edges the window slides inward so it
/// stays inside the utterance; an utterance shorter than the window is
/// normalized by its global mean.
pub fn sliding_cmn(f: &FeatureMatrix, window_s: f64) -> FeatureMatrix {
    let t = f.num_frames();
    let d = f.dim();
    let win = ((window_s / f.frame_shift).round() as usize).clamp(1, t.max(1));
    // prefix sums, (t+1) × d
    let mut prefix = Array2::<f64>::zeros((t + 1, d));
    for i in 0..t {
        for j in 0..d {
            prefix[[i + 1, j]] = prefix[[i, j]] + f.frames[[i, j]];
        }
    }
    let mut out = f.frames.clone();
    for i in 0..t {
        let (lo, hi) = window_bounds(i, t, win);
        let n = (hi - lo) as f64;
        for j in 0..d {
            out[[i, j]] -= (prefix[[hi, j]] - prefix[[lo, j]]) / n;
        }
    }
    FeatureMatrix {
        frames: out,
        ..f.clone()
    }
}

/// Half-open frame range `[lo, hi)` of the normalization window for frame `i`.
pub(crate) fn window_bounds(i: usize, t: usize, win: usize) -> (usize, usize) {
    let mut lo = i as isize - (win / 2) as isize;
    let mut hi = lo + win as isize;
    if lo < 0 {
        hi -= lo;
        lo = 0;
    }
    if hi > t as isize {
        lo = (lo - (hi - t as isize)).max(0);
        hi = t as isize;
    }
    (lo as usize, hi as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fm(frames: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(frames, 0.01, 0.025)
    }

    #[test]
    fn constant_input_cancels() {
        let f = fm(Array2::from_elem((700, 5), 3.25));
        let out = sliding_cmn(&f, 3.0);
        assert!(out.frames.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(out.frames.dim(), (700, 5));
    }

    #[test]
    fn short_input_uses_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = fm(Array2::from_shape_fn((250, 4), |_| rng.random_range(-2.0..2.0)));
        let out = sliding_cmn(&f, 3.0);
        let mean = f.frames.mean_axis(ndarray::Axis(0)).unwrap();
        for i in 0..250 {
            for j in 0..4 {
                assert!((out.frames[[i, j]] - (f.frames[[i, j]] - mean[j])).abs() < 1e-12);
            }
        }
        // output columns are zero-mean when the window is the whole input
        let m = out.frames.mean_axis(ndarray::Axis(0)).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn centre_frame_matches_naive_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = fm(Array2::from_shape_fn((1000, 30), |_| rng.random_range(-5.0..5.0)));
        let out = sliding_cmn(&f, 3.0);
        for j in 0..30 {
            let mut s = 0.0;
            for i in 350..650 {
                s += f.frames[[i, j]];
            }
            let expected = f.frames[[500, j]] - s / 300.0;
            let got = out.frames[[500, j]];
            assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1e-12) + 1e-13);
        }
    }

    #[test]
    fn window_stays_inside() {
        for t in [1usize, 5, 299, 300, 301, 1000] {
            for i in 0..t {
                let (lo, hi) = window_bounds(i, t, 300.min(t));
                assert!(lo <= i && i < hi && hi <= t);
                assert_eq!(hi - lo, 300.min(t));
            }
        }
    }
}
