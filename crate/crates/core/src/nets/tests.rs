use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::features::FeatureMatrix;

fn toy_spec(tdnn: Vec<TdnnLayerSpec>) -> EncoderSpec {
    EncoderSpec {
        input_dim: 3,
        tdnn,
        segment_dims: vec![6],
        head: HeadSpec::Protonet { dims: vec![4] },
        comparison: None,
        var_floor: 1e-10,
        bn_eps: 1e-5,
    }
}

fn feats(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::new(Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0)), 0.01, 0.025)
}

/// Hand-set weights: deterministic trigonometric patterns, non-trivial BN stats.
fn hand_weights(spec: &EncoderSpec) -> NetworkWeights {
    let mut w = build_network(spec, 0).unwrap();
    for (k, (name, t)) in w.params.iter_mut().enumerate() {
        let scale = if name.ends_with("gamma") { 0.5 } else { 0.3 };
        let off = if name.ends_with("gamma") { 1.0 } else { 0.0 };
        for (i, v) in t.iter_mut().enumerate() {
            *v = off + scale * ((i as f64 + 1.0) * 0.7 + k as f64).sin();
        }
    }
    for (k, (name, t)) in w.buffers.iter_mut().enumerate() {
        for (i, v) in t.iter_mut().enumerate() {
            let s = ((i as f64) * 1.3 + k as f64).cos();
            *v = if name.ends_with("running_var") { 0.5 + 0.4 * s.abs() } else { 0.2 * s };
        }
    }
    w
}

/// Step-by-step dense arithmetic over plain vectors.
fn oracle_embed(w: &NetworkWeights, x: &Array2<f64>) -> Vec<f64> {
    let spec = &w.spec;
    let p = |n: &str| w.get(n).unwrap();
    let bn = |v: &mut Vec<Vec<f64>>, layer: &str| {
        let (g, b) = (p(&format!("{layer}.bn.gamma")), p(&format!("{layer}.bn.beta")));
        let (m, s) = (p(&format!("{layer}.bn.running_mean")), p(&format!("{layer}.bn.running_var")));
        for row in v.iter_mut() {
            for j in 0..row.len() {
                row[j] = g[[0, j]] * (row[j] - m[[0, j]]) / (s[[0, j]] + spec.bn_eps).sqrt() + b[[0, j]];
            }
        }
    };
    let mut h: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
    for (li, l) in spec.tdnn.iter().enumerate() {
        let name = format!("tdnn{}", li + 1);
        let (wt, bias) = (p(&format!("{name}.weight")), p(&format!("{name}.bias")));
        let cin = h[0].len();
        let tout = h.len() - (l.context - 1) * l.dilation;
        let mut next = vec![vec![0.0; l.out_dim]; tout];
        for t in 0..tout {
            for o in 0..l.out_dim {
                let mut acc = bias[[0, o]];
                for k in 0..l.context {
                    for c in 0..cin {
                        acc += h[t + k * l.dilation][c] * wt[[k * cin + c, o]];
                    }
                }
                next[t][o] = acc;
            }
        }
        bn(&mut next, &name);
        for row in next.iter_mut() {
            for v in row.iter_mut() {
                *v = v.max(0.0);
            }
        }
        h = next;
    }
    let c = h[0].len();
    let n = h.len() as f64;
    let mut pooled = vec![0.0; 2 * c];
    for j in 0..c {
        let m: f64 = h.iter().map(|r| r[j]).sum::<f64>() / n;
        let var: f64 = h.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        pooled[j] = m;
        pooled[c + j] = var.max(spec.var_floor).sqrt();
    }
    let mut v = vec![pooled];
    for l in spec.fc_layers() {
        let (wt, bias) = (p(&format!("{}.weight", l.name)), p(&format!("{}.bias", l.name)));
        let mut out = vec![vec![0.0; l.out_dim]];
        for o in 0..l.out_dim {
            out[0][o] = bias[[0, o]] + (0..l.in_dim).map(|i| v[0][i] * wt[[i, o]]).sum::<f64>();
        }
        if l.batch_norm {
            bn(&mut out, &l.name);
        }
        if l.relu {
            out[0].iter_mut().for_each(|a| *a = a.max(0.0));
        }
        v = out;
    }
    v.remove(0)
}

#[test]
fn matches_dense_oracle() {
    let spec = toy_spec(vec![TdnnLayerSpec::new(4, 1, 3), TdnnLayerSpec::new(5, 2, 2)]);
    let w = hand_weights(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let f = feats(&mut rng, 20, 3);
    let got = embed(&w, &f, &Tap::Embedding).unwrap();
    let want = oracle_embed(&w, &f.frames);
    assert_eq!(got.len(), 4);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{got:?} vs {want:?}");
    }
}

#[test]
fn dimension_independent_of_duration() {
    let spec = toy_spec(vec![TdnnLayerSpec::new(4, 1, 3), TdnnLayerSpec::new(5, 2, 2)]);
    let w = build_network(&spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in [spec.receptive_field(), 17, 300] {
        assert_eq!(embed(&w, &feats(&mut rng, t, 3), &Tap::Embedding).unwrap().len(), 4);
    }
}

#[test]
fn too_few_frames() {
    let spec = toy_spec(vec![TdnnLayerSpec::new(4, 1, 3), TdnnLayerSpec::new(5, 2, 2)]);
    let w = build_network(&spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = feats(&mut rng, spec.receptive_field() - 1, 3);
    assert!(matches!(embed(&w, &f, &Tap::Embedding), Err(Error::InputLength(_))));
}

#[test]
fn pooling_makes_pointwise_encoder_order_and_duplication_invariant() {
    // frame-local stack: per-frame outputs, so permuting/duplicating
    // frames permutes/duplicates the pooled multiset
    let spec = toy_spec(vec![TdnnLayerSpec::new(4, 1, 1), TdnnLayerSpec::new(5, 1, 1)]);
    let w = hand_weights(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = feats(&mut rng, 25, 3);
    let base = embed(&w, &f, &Tap::Embedding).unwrap();
    let mut order: Vec<usize> = (0..25).collect();
    order.reverse();
    order.swap(3, 17);
    let permuted = FeatureMatrix::new(f.frames.select(Axis(0), &order), 0.01, 0.025);
    let doubled = FeatureMatrix::new(
        concatenate(Axis(0), &[f.frames.view(), f.frames.view()]).unwrap(),
        0.01,
        0.025,
    );
    for other in [permuted, doubled] {
        let e = embed(&w, &other, &Tap::Embedding).unwrap();
        for (a, b) in e.iter().zip(&base) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn inference_is_deterministic_and_batch_independent() {
    let spec = toy_spec(vec![TdnnLayerSpec::new(4, 1, 3), TdnnLayerSpec::new(5, 2, 2)]);
    let w = build_network(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = feats(&mut rng, 30, 3);
    let b = feats(&mut rng, 41, 3);
    let batch = embed_batch(&w, &[&a, &b], &Tap::Embedding).unwrap();
    assert_eq!(batch.row(0).to_vec(), embed(&w, &a, &Tap::Embedding).unwrap());
    assert_eq!(batch.row(1).to_vec(), embed(&w, &b, &Tap::Embedding).unwrap());
}

#[test]
fn xvector_taps() {
    let mut spec = toy_spec(vec![TdnnLayerSpec::new(4, 1, 3)]);
    spec.head = HeadSpec::XVector { n_speakers: 7 };
    spec.segment_dims = vec![6, 5];
    let w = build_network(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = feats(&mut rng, 30, 3);
    assert_eq!(embed(&w, &f, &Tap::Fc(1)).unwrap().len(), 6);
    assert_eq!(embed(&w, &f, &Tap::Fc(2)).unwrap().len(), 5);
    assert!(matches!(embed(&w, &f, &Tap::Embedding), Err(Error::Parameter(_))));
    let proto = build_network(&toy_spec(vec![TdnnLayerSpec::new(4, 1, 3)]), 1).unwrap();
    assert!(matches!(embed(&proto, &f, &Tap::Fc(1)), Err(Error::Parameter(_))));
}

#[test]
fn fc_uniform_init_statistics() {
    let spec = EncoderSpec {
        input_dim: 3,
        tdnn: vec![TdnnLayerSpec::new(512, 1, 1)],
        segment_dims: vec![],
        head: HeadSpec::Protonet { dims: vec![512, 512] },
        comparison: None,
        var_floor: 1e-10,
        bn_eps: 1e-5,
    };
    let src = build_network(&spec, 1).unwrap();
    let out = init_from_pretrained(&build_network(&spec, 2).unwrap(), &src, 5).unwrap();
    // fc2 is the 512×512 layer
    let w = &out.params["fc2.weight"];
    let n = (512 * 512 + 512) as f64;
    let bound = 1.0 / n.sqrt();
    let draws: Vec<f64> = w.iter().take(10_000).copied().collect();
    assert!(draws.iter().all(|v| v.abs() <= bound));
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    // uniform on [-a, a] has σ = a/√3
    let sigma_mean = bound / 3f64.sqrt() / (draws.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}, 3σ {}", 3.0 * sigma_mean);
}
