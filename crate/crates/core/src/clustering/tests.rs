use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::synth::gaussian_clusters;

fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

fn random_sym(n: usize, seed: u64) -> Array2<f64> {
    let m = random(n, n, seed);
    (&m + &m.t()) * 0.5
}

fn block_affinity(sizes: &[usize]) -> Array2<f64> {
    let n: usize = sizes.iter().sum();
    let mut owner = Vec::new();
    for (b, &s) in sizes.iter().enumerate() {
        owner.extend(std::iter::repeat_n(b, s));
    }
    Array2::from_shape_fn((n, n), |(i, j)| if owner[i] == owner[j] { 1.0 } else { 0.0 })
}

#[test]
fn cosine_examples() {
    let same = array![[1.0, 2.0], [2.0, 4.0], [0.5, 1.0]];
    assert!(cosine_affinity(&same).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    let ortho = cosine_affinity(&array![[1.0, 0.0], [0.0, 3.0]]).unwrap();
    assert_eq!(ortho[[0, 1]], 0.0);
    assert_eq!(ortho[[1, 0]], 0.0);
}

#[test]
fn cosine_matches_naive_oracle() {
    let e = random(10, 16, 1);
    let a = cosine_affinity(&e).unwrap();
    for i in 0..10 {
        for j in 0..10 {
            let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
            for k in 0..16 {
                dot += e[[i, k]] * e[[j, k]];
                ni += e[[i, k]] * e[[i, k]];
                nj += e[[j, k]] * e[[j, k]];
            }
            assert_abs_diff_eq!(a[[i, j]], dot / (ni.sqrt() * nj.sqrt()), epsilon = 1e-12);
            assert_eq!(a[[i, j]], a[[j, i]]);
        }
    }
}

#[test]
fn cosine_zero_row() {
    let err = cosine_affinity(&array![[1.0, 0.0], [0.0, 0.0]]).unwrap_err();
    assert!(matches!(err, Error::Degenerate(ref m) if m.contains("row 1")));
}

#[test]
fn binarize_full_and_blocks() {
    let a = random_sym(6, 2);
    let b = binarize_affinity(&a, 5).unwrap();
    assert!(b.iter().all(|&v| v == 1.0));
    // p = block size − 1 keeps every in-block edge
    let blocks = block_affinity(&[4, 4]);
    assert_eq!(binarize_affinity(&blocks, 3).unwrap(), blocks);
    let blocks = block_affinity(&[4, 6]);
    let b = binarize_affinity(&blocks, 2).unwrap();
    for ((i, j), &v) in b.indexed_iter() {
        if (i < 4) != (j < 4) {
            assert_eq!(v, 0.0);
        }
    }
    assert!(matches!(binarize_affinity(&a, 0), Err(Error::Parameter(_))));
    assert!(matches!(binarize_affinity(&a, 6), Err(Error::Parameter(_))));
}

#[test]
fn binarize_matches_naive_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..10 {
        // coarse values force ties
        let a = random_sym(9, seed).mapv(|v| (v * 3.0).round());
        let b = binarize_affinity(&a, 3).unwrap();
        let mut raw = Array2::<f64>::eye(9);
        for i in 0..9 {
            let mut taken = [false; 9];
            taken[i] = true;
            for _ in 0..3 {
                let mut pick = usize::MAX;
                for j in 0..9 {
                    if !taken[j] && (pick == usize::MAX || a[[i, j]] > a[[i, pick]]) {
                        pick = j;
                    }
                }
                taken[pick] = true;
                raw[[i, pick]] = 1.0;
            }
        }
        let oracle = (&raw + &raw.t()) * 0.5;
        assert_eq!(b, oracle);
        assert!(b.iter().all(|&v| v == 0.0 || v == 0.5 || v == 1.0));
        let _ = rng.random::<u8>();
    }
}

#[test]
fn eigh_examples() {
    let (v, _) = eigh_symmetric(&array![[2.0, 1.0], [1.0, 2.0]]).unwrap();
    assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(v[1], 3.0, epsilon = 1e-14);
    let (v, _) = eigh_symmetric(&Array2::eye(7)).unwrap();
    assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-14));
    assert!(matches!(eigh_symmetric(&array![[1.0, 2.0], [0.0, 1.0]]), Err(Error::InvalidInput(_))));
}

#[test]
fn eigh_residuals_and_orthonormality() {
    for seed in 0..5 {
        let m = random_sym(20, 10 + seed);
        let (vals, vecs) = eigh_symmetric(&m).unwrap();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, &l) in vals.iter().enumerate() {
            let v = vecs.column(i);
            let r = &m.dot(&v) - &(&v * l);
            assert!(r.dot(&r).sqrt() <= 1e-8 * norm);
        }
        let gram = vecs.t().dot(&vecs);
        for ((i, j), &g) in gram.indexed_iter() {
            assert_abs_diff_eq!(g, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(vals.iter().sum::<f64>(), m.diag().sum(), epsilon = 1e-8);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let only = eigvalsh(&m).unwrap();
        for (a, b) in only.iter().zip(&vals) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }
}

#[test]
fn laplacian_is_psd_and_counts_components() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..25);
        let a = random_sym(n, 100 + seed);
        let p = rng.random_range(1..=2.min(n - 1));
        let b = binarize_affinity(&a, p).unwrap();
        let eigs = eigvalsh(&laplacian(&b)).unwrap();
        assert!(eigs[0] >= -1e-8);
        let zeros = eigs.iter().filter(|&&v| v.abs() < 1e-8).count();
        let comps = connected_components(&b).iter().max().unwrap() + 1;
        assert_eq!(zeros, comps, "seed {seed}");
    }
}

#[test]
fn nme_block_diagonal() {
    let b = block_affinity(&[5, 6, 7]);
    let eigs = eigvalsh(&laplacian(&b)).unwrap();
    assert_eq!(eigs.iter().filter(|v| v.abs() < 1e-10).count(), 3);
    let (_, k) = normalized_max_eigengap(&eigs, DEFAULT_MAX_SPEAKERS).unwrap();
    assert_eq!(k, 3);
    // equal blocks binarized at p = size − 1 stay complete and disconnected
    for size in 3..8 {
        let eq = block_affinity(&[size; 4]);
        assert_eq!(nme_search(&eq, &[size - 1], DEFAULT_MAX_SPEAKERS).unwrap().k_est, 4);
    }
    let eq = block_affinity(&[6, 6, 6]);
    let r = nme_search(&eq, &default_p_grid(18), DEFAULT_MAX_SPEAKERS).unwrap();
    assert_eq!(r.k_est, 3);
    assert_eq!(r.best_p, 5);
    assert!(r.g_p.iter().all(|g| (0.0..=1.0).contains(g)));
    let bi = r.p_grid.iter().position(|&p| p == r.best_p).unwrap();
    assert!(r.ratio.iter().all(|&x| x >= r.ratio[bi]));
}

#[test]
fn default_grid() {
    assert_eq!(default_p_grid(2), vec![1]);
    assert_eq!(default_p_grid(3), vec![2]);
    assert_eq!(default_p_grid(12), vec![2, 3]);
    assert_eq!(default_p_grid(160), (2..=40).collect::<Vec<_>>());
}

#[test]
fn nme_two_identical_points() {
    let a = cosine_affinity(&array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
    assert_eq!(nme_search(&a, &[1], DEFAULT_MAX_SPEAKERS).unwrap().k_est, 1);
    assert!(matches!(nme_search(&a, &[], DEFAULT_MAX_SPEAKERS), Err(Error::Parameter(_))));
}

#[test]
fn nme_estimates_gaussian_cluster_counts() {
    for k in 2..=8 {
        for seed in 0..5 {
            let (e, truth) = gaussian_clusters(k, 20, 16, 0.1, 1.0, seed);
            let a = cosine_affinity(&e).unwrap();
            let (labels, r) = nme_sc(&a, None, DEFAULT_MAX_SPEAKERS, seed).unwrap();
            assert_eq!(r.k_est, k, "k={k} seed={seed}: {r:?}");
            assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);
        }
    }
}

#[test]
fn spectral_examples() {
    let a = block_affinity(&[3, 4]);
    assert_eq!(spectral_cluster(&a, 1, 0).unwrap(), vec![0; 7]);
    assert_eq!(spectral_cluster(&a, 2, 0).unwrap(), vec![0, 0, 0, 1, 1, 1, 1]);
    assert!(matches!(spectral_cluster(&a, 8, 0), Err(Error::Parameter(_))));
    for seed in 0..20 {
        let (e, truth) = gaussian_clusters(4, 20, 16, 0.1, 1.0, 50 + seed);
        let b = binarize_affinity(&cosine_affinity(&e).unwrap(), 5).unwrap();
        let labels = spectral_cluster(&b, 4, seed).unwrap();
        assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);
    }
}

#[test]
fn clustering_is_permutation_invariant() {
    let (e, _) = gaussian_clusters(3, 10, 8, 0.15, 1.0, 7);
    let n = e.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let a = cosine_affinity(&e).unwrap();
    let pa = Array2::from_shape_fn((n, n), |(i, j)| a[[perm[i], perm[j]]]);
    let (l1, r1) = nme_sc(&a, None, DEFAULT_MAX_SPEAKERS, 1).unwrap();
    let (l2, r2) = nme_sc(&pa, None, DEFAULT_MAX_SPEAKERS, 1).unwrap();
    assert_eq!(r1.k_est, r2.k_est);
    let unpermuted: Vec<usize> = {
        let mut v = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            v[p] = l2[i];
        }
        v
    };
    assert_eq!(adjusted_rand_index(&l1, &unpermuted), 1.0);
    let h1 = ahc_cluster(&a, AhcStop::Threshold(0.5)).unwrap();
    let h2 = ahc_cluster(&pa, AhcStop::Threshold(0.5)).unwrap();
    let h2u: Vec<usize> = {
        let mut v = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            v[p] = h2[i];
        }
        v
    };
    assert_eq!(adjusted_rand_index(&h1, &h2u), 1.0);
}

#[test]
fn ahc_examples() {
    let s = random_sym(6, 20);
    assert_eq!(ahc_cluster(&s, AhcStop::Threshold(10.0)).unwrap(), vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(ahc_cluster(&s, AhcStop::TargetK(1)).unwrap(), vec![0; 6]);
    assert!(matches!(ahc_cluster(&s, AhcStop::TargetK(7)), Err(Error::Parameter(_))));
}

/// Recomputes average linkage from the raw scores at every step.
fn brute_force_merges(s: &Array2<f64>, k: usize) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let mut clusters: Vec<Vec<usize>> = (0..s.nrows()).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    while clusters.len() > k {
        let mut best = (0, 1, f64::NEG_INFINITY);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let mut tot = 0.0;
                for &a in &clusters[i] {
                    for &b in &clusters[j] {
                        tot += s[[a, b]];
                    }
                }
                let avg = tot / (clusters[i].len() * clusters[j].len()) as f64;
                if avg > best.2 + 1e-12 {
                    best = (i, j, avg);
                }
            }
        }
        let right = clusters.remove(best.1);
        let left = clusters[best.0].clone();
        out.push((left.clone(), right.clone(), best.2));
        clusters[best.0].extend(right);
        clusters[best.0].sort_unstable();
    }
    out
}

#[test]
fn ahc_matches_brute_force_linkage() {
    let hand = array![
        [1.0, 0.9, 0.2, 0.1, 0.0, -0.3],
        [0.9, 1.0, 0.3, 0.0, 0.1, -0.2],
        [0.2, 0.3, 1.0, 0.7, 0.4, 0.0],
        [0.1, 0.0, 0.7, 1.0, 0.5, 0.1],
        [0.0, 0.1, 0.4, 0.5, 1.0, 0.6],
        [-0.3, -0.2, 0.0, 0.1, 0.6, 1.0]
    ];
    let mut cases = vec![hand];
    cases.extend((0..10).map(|s| random_sym(6, 200 + s)));
    for s in cases {
        let (_, merges) = ahc_merges(&s, AhcStop::TargetK(1)).unwrap();
        let oracle = brute_force_merges(&s, 1);
        assert_eq!(merges.len(), oracle.len());
        for (m, o) in merges.iter().zip(&oracle) {
            assert_eq!((&m.left, &m.right), (&o.0, &o.1));
            assert_abs_diff_eq!(m.similarity, o.2, epsilon = 1e-12);
        }
    }
}

#[test]
fn kmeans_separates_obvious_groups() {
    let d = array![[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]];
    let (l, inertia) = kmeans(&d, 2, 10, 0).unwrap();
    assert_eq!(relabel(&l), vec![0, 0, 1, 1]);
    assert_abs_diff_eq!(inertia, 0.01, epsilon = 1e-12);
}

#[test]
fn ari_basics() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
    assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
}

#[test]
fn oracle_k_avoids_fragmented_graphs() {
    // two speakers, each split into two turns of 6 windows; windows inside
    // a turn are nearly identical, so small p isolates every turn
    let turn = |i: usize| i / 6;
    let speaker = |i: usize| turn(i) % 2;
    let n = 24;
    let a = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else if turn(i) == turn(j) {
            0.99 - 0.001 * (i as f64 - j as f64).abs()
        } else if speaker(i) == speaker(j) {
            0.9
        } else {
            0.1
        }
    });
    let free = nme_search(&a, &default_p_grid(n), DEFAULT_MAX_SPEAKERS).unwrap();
    assert!(free.k_est > 2, "unconstrained search should see the turn fragments");
    let (labels, _) = nme_sc(&a, Some(2), DEFAULT_MAX_SPEAKERS, 0).unwrap();
    let truth: Vec<usize> = (0..n).map(speaker).collect();
    assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);
}
