use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn bind(pairs: Vec<(&str, Tensor)>) -> TensorMap {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Generic scalar probe so that no primitive's gradient vanishes by symmetry.
fn probe(g: &mut Graph, y: NodeId, rows: usize, cols: usize, rng: &mut ChaCha8Rng, b: &mut TensorMap) -> NodeId {
    let targets = (0..rows).map(|_| rng.random_range(0..cols)).collect();
    let xent = g.softmax_xent(y, targets);
    let c = g.input("probe_c");
    b.insert("probe_c".into(), rand_mat(rng, 2, cols));
    let d = g.sq_euclidean(y, c);
    let s = g.sum(d);
    let s = g.scale(s, 0.1);
    let both = g.concat(vec![xent, s], Axis::Cols);
    g.sum(both)
}

#[test]
fn relu_forward() {
    let mut g = Graph::new();
    let x = g.input("x");
    let y = g.relu(x);
    g.forward(&bind(vec![("x", array![[-1.0, 0.0, 2.0]])])).unwrap();
    assert_eq!(g.value(y).unwrap(), &array![[0.0, 0.0, 2.0]]);
}

#[test]
fn stats_pool_constant_hits_floor() {
    let mut g = Graph::new();
    let x = g.input("x");
    let y = g.stats_pool(x, vec![6], 1e-10);
    g.forward(&bind(vec![("x", Array2::from_elem((6, 2), 1.5))])).unwrap();
    let v = g.value(y).unwrap();
    assert_eq!(v.dim(), (1, 4));
    assert!((v[[0, 0]] - 1.5).abs() < 1e-15);
    assert!((v[[0, 2]] - 1e-5).abs() < 1e-18);
}

#[test]
fn sq_euclidean_example() {
    let mut g = Graph::new();
    let a = g.input("a");
    let b = g.input("b");
    let d = g.sq_euclidean(a, b);
    g.forward(&bind(vec![("a", array![[1.0, 2.0]]), ("b", array![[4.0, 6.0]])])).unwrap();
    assert_eq!(g.scalar(d).unwrap(), 25.0);
    let grads = g.backward(d).unwrap();
    assert_eq!(grads["a"], array![[-6.0, -8.0]]);
    assert_eq!(grads["b"], array![[6.0, 8.0]]);
}

#[test]
fn relu_sum_gradient() {
    let mut g = Graph::new();
    let x = g.input("x");
    let r = g.relu(x);
    let l = g.sum(r);
    g.forward(&bind(vec![("x", array![[-1.0, 2.0]])])).unwrap();
    assert_eq!(g.backward(l).unwrap()["x"], array![[0.0, 1.0]]);
}

#[test]
fn backward_before_forward_is_state_error() {
    let mut g = Graph::new();
    let x = g.input("x");
    let l = g.sum(x);
    assert!(matches!(g.backward(l), Err(Error::State(_))));
}

#[test]
fn shape_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let x = g.input("x");
    let w = g.input("w");
    let b = g.input("b");
    g.affine(x, w, b);
    let err = g
        .forward(&bind(vec![
            ("x", Array2::zeros((2, 3))),
            ("w", Array2::zeros((4, 5))),
            ("b", Array2::zeros((1, 5))),
        ]))
        .unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn nan_reports_node() {
    let mut g = Graph::new();
    let x = g.input("x");
    let y = g.scale(x, f64::INFINITY);
    let err = g.forward(&bind(vec![("x", array![[0.0]])])).unwrap_err();
    match err {
        Error::Numeric { node, op } => {
            assert_eq!(node, y.index());
            assert_eq!(op, "scale");
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn linear_graph_check_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.input("x");
    let w = g.input("w");
    let b = g.input("b");
    let y = g.affine(x, w, b);
    let l = g.sum(y);
    let binds = bind(vec![
        ("x", rand_mat(&mut rng, 1, 6)),
        ("w", rand_mat(&mut rng, 6, 1)),
        ("b", Array2::zeros((1, 1))),
    ]);
    // exact for a linear loss up to roundoff, which a larger step suppresses
    let err = finite_diff_check(&mut g, &binds, l, &[], 1e-3).unwrap();
    assert!(err < 1e-10, "{err}");
}

fn check_primitive(build: impl Fn(&mut Graph, &mut ChaCha8Rng, &mut TensorMap) -> (NodeId, usize, usize)) {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut g = Graph::new();
        let mut b = TensorMap::new();
        let (y, r, c) = build(&mut g, &mut rng, &mut b);
        let l = probe(&mut g, y, r, c, &mut rng, &mut b);
        let wrt: Vec<String> = b.keys().filter(|k| *k != "probe_c").cloned().collect();
        let wrt: Vec<&str> = wrt.iter().map(String::as_str).collect();
        let err = finite_diff_check(&mut g, &b, l, &wrt, 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: rel err {err}");
    }
}

#[test]
fn grad_affine() {
    check_primitive(|g, rng, b| {
        let (x, w, bb) = (g.input("x"), g.input("w"), g.input("b"));
        b.insert("x".into(), rand_mat(rng, 5, 7));
        b.insert("w".into(), rand_mat(rng, 7, 3));
        b.insert("b".into(), rand_mat(rng, 1, 3));
        (g.affine(x, w, bb), 5, 3)
    });
}

#[test]
fn grad_tdnn() {
    check_primitive(|g, rng, b| {
        let (x, w, bb) = (g.input("x"), g.input("w"), g.input("b"));
        b.insert("x".into(), rand_mat(rng, 9 + 7, 3));
        b.insert("w".into(), rand_mat(rng, 3 * 3, 4));
        b.insert("b".into(), rand_mat(rng, 1, 4));
        (g.tdnn_conv(x, w, bb, 3, 2, vec![9, 7]), 5 + 3, 4)
    });
}

#[test]
fn grad_batch_norm_train_and_inference() {
    for mode in [NormMode::Train, NormMode::Inference] {
        check_primitive(|g, rng, b| {
            let ids: Vec<_> = ["x", "g", "be", "rm", "rv"].iter().map(|n| g.input(n)).collect();
            b.insert("x".into(), rand_mat(rng, 5, 7));
            b.insert("g".into(), rand_mat(rng, 1, 7) + 1.5);
            b.insert("be".into(), rand_mat(rng, 1, 7));
            b.insert("rm".into(), rand_mat(rng, 1, 7));
            b.insert("rv".into(), rand_mat(rng, 1, 7).mapv(|v| v.abs() + 0.5));
            (g.batch_norm(ids[0], ids[1], ids[2], ids[3], ids[4], mode, 1e-5), 5, 7)
        });
    }
}

#[test]
fn grad_stats_pool() {
    check_primitive(|g, rng, b| {
        let x = g.input("x");
        b.insert("x".into(), rand_mat(rng, 12, 4));
        (g.stats_pool(x, vec![5, 7], 1e-10), 2, 8)
    });
}

#[test]
fn grad_relu_dropout_concat_gather_segment() {
    check_primitive(|g, rng, b| {
        let x = g.input("x");
        let mut v = rand_mat(rng, 5, 7);
        v.mapv_inplace(|a| if a.abs() < 1e-3 { 0.5 } else { a });
        b.insert("x".into(), v);
        let r = g.relu(x);
        let d = g.dropout(r, 0.3, 9);
        let c = g.concat(vec![d, x], Axis::Rows);
        let gg = g.gather_rows(c, vec![0, 7, 7, 3]);
        let s = g.segment_sum(gg, vec![vec![0, 1], vec![2], vec![1, 3]]);
        let n = g.neg(s);
        let sc = g.scale(n, 0.7);
        (g.reshape(sc, 7, 3), 7, 3)
    });
}

#[test]
fn grad_sq_euclidean_pairwise() {
    check_primitive(|g, rng, b| {
        let (x, y) = (g.input("x"), g.input("y"));
        b.insert("x".into(), rand_mat(rng, 5, 7));
        b.insert("y".into(), rand_mat(rng, 3, 7));
        (g.sq_euclidean(x, y), 5, 3)
    });
}

#[test]
fn fan_out_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xv = rand_mat(&mut rng, 4, 3);
    let cv = rand_mat(&mut rng, 2, 3);
    // x used twice
    let mut g = Graph::new();
    let x = g.input("x");
    let c = g.input("c");
    let d1 = g.sq_euclidean(x, c);
    let r = g.relu(x);
    let d2 = g.sq_euclidean(r, c);
    let both = g.concat(vec![d1, d2], Axis::Rows);
    let l = g.sum(both);
    g.forward(&bind(vec![("x", xv.clone()), ("c", cv.clone())])).unwrap();
    let shared = g.backward(l).unwrap()["x"].clone();
    // duplicated inputs, one per path
    let mut g2 = Graph::new();
    let x1 = g2.input("x1");
    let x2 = g2.input("x2");
    let c = g2.input("c");
    let d1 = g2.sq_euclidean(x1, c);
    let r = g2.relu(x2);
    let d2 = g2.sq_euclidean(r, c);
    let both = g2.concat(vec![d1, d2], Axis::Rows);
    let l2 = g2.sum(both);
    g2.forward(&bind(vec![("x1", xv.clone()), ("x2", xv), ("c", cv)])).unwrap();
    let split = g2.backward(l2).unwrap();
    let summed = &split["x1"] + &split["x2"];
    for (a, b) in shared.iter().zip(summed.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn determinism_with_dropout() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let binds = bind(vec![("x", rand_mat(&mut rng, 6, 5))]);
    let run = || {
        let mut g = Graph::new();
        let x = g.input("x");
        let d = g.dropout(x, 0.5, 42);
        let l = g.softmax_xent(d, vec![0, 1, 2, 3, 4, 0]);
        g.forward(&binds).unwrap();
        g.backward(l).unwrap()["x"].clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn batch_norm_inference_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xv = rand_mat(&mut rng, 5, 4);
    let mut g = Graph::new();
    let ids: Vec<_> = ["x", "g", "b", "rm", "rv"].iter().map(|n| g.input(n)).collect();
    let y = g.batch_norm(ids[0], ids[1], ids[2], ids[3], ids[4], NormMode::Inference, 0.0);
    g.forward(&bind(vec![
        ("x", xv.clone()),
        ("g", Array2::ones((1, 4))),
        ("b", Array2::zeros((1, 4))),
        ("rm", Array2::zeros((1, 4))),
        ("rv", Array2::ones((1, 4))),
    ]))
    .unwrap();
    assert_eq!(g.value(y).unwrap(), &xv);
}

#[test]
fn softmax_xent_posteriors_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::new();
    let z = g.input("z");
    let l = g.softmax_xent(z, vec![0, 1, 2]);
    g.forward(&bind(vec![("z", rand_mat(&mut rng, 3, 5) * 10.0)])).unwrap();
    for row in g.posteriors(l).unwrap().rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn tdnn_rejects_short_segment() {
    let mut g = Graph::new();
    let (x, w, b) = (g.input("x"), g.input("w"), g.input("b"));
    g.tdnn_conv(x, w, b, 3, 3, vec![6]);
    let err = g
        .forward(&bind(vec![
            ("x", Array2::zeros((6, 2))),
            ("w", Array2::zeros((6, 1))),
            ("b", Array2::zeros((1, 1))),
        ]))
        .unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}
