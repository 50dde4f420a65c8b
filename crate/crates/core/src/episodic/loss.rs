use ndarray::{s, Array2};
use rand::Rng;

use super::store::{Episode, LabeledUtteranceStore};
use crate::autograd::{numeric_gradient, Axis, Graph, NodeId, Tensor, TensorMap};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nets::{comparison_graph, encoder_graph, EncoderSpec, GraphMode, HeadSpec, NetworkWeights};

/// Logits −‖q − v_c‖² against mean prototypes. `supports[c]` and
/// `queries` index rows of `emb`.
pub fn prototype_logits(g: &mut Graph, emb: NodeId, supports: &[Vec<usize>], queries: &[usize]) -> Result<NodeId> {
    check_supports(supports)?;
    let shot = supports[0].len();
    if supports.iter().any(|s| s.len() != shot) {
        return Err(Error::Episode("classes have different support counts".into()));
    }
    let sums = g.segment_sum(emb, supports.to_vec());
    let protos = g.scale(sums, 1.0 / shot as f64);
    let q = g.gather_rows(emb, queries.to_vec());
    let d = g.sq_euclidean(q, protos);
    Ok(g.neg(d))
}

/// Relation scores g([v_c ‖ q]) with summed class representations,
/// arranged as queries × classes.
pub fn relation_logits(
    g: &mut Graph,
    spec: &EncoderSpec,
    emb: NodeId,
    supports: &[Vec<usize>],
    queries: &[usize],
) -> Result<NodeId> {
    check_supports(supports)?;
    let c = supports.len();
    let v = g.segment_sum(emb, supports.to_vec());
    let left = g.gather_rows(v, (0..queries.len()).flat_map(|_| 0..c).collect());
    let right = g.gather_rows(emb, queries.iter().flat_map(|&q| std::iter::repeat_n(q, c)).collect());
    let pairs = g.concat(vec![left, right], Axis::Cols);
    let scores = comparison_graph(g, spec, pairs)?;
    Ok(g.reshape(scores, queries.len(), c))
}

fn check_supports(supports: &[Vec<usize>]) -> Result<()> {
    if supports.is_empty() {
        return Err(Error::Episode("episode has no classes".into()));
    }
    if let Some(c) = supports.iter().position(Vec::is_empty) {
        return Err(Error::Episode(format!("class {c} has no supports")));
    }
    Ok(())
}

/// Fraction of rows whose first maximal logit is the target.
pub fn accuracy(logits: &Tensor, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = logits
        .rows()
        .into_iter()
        .zip(targets)
        .filter(|(row, &t)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            best.0 == t
        })
        .count();
    hits as f64 / targets.len() as f64
}

/// Takes a random window of at most `max_frames` frames.
pub fn random_crop(f: &FeatureMatrix, max_frames: usize, rng: &mut impl Rng) -> Array2<f64> {
    let t = f.num_frames();
    if t <= max_frames {
        return f.frames.clone();
    }
    let start = rng.random_range(0..=t - max_frames);
    f.frames.slice(s![start..start + max_frames, ..]).to_owned()
}

/// A built episode graph awaiting evaluation.
pub struct EpisodeGraph {
    pub graph: Graph,
    pub loss: NodeId,
    pub logits: NodeId,
    pub batch_norms: Vec<(String, NodeId)>,
    pub targets: Vec<usize>,
    pub inputs: TensorMap,
}

/// Encodes supports then queries in one batch and adds the head for the
/// network's family. `crop` limits each utterance's frame count.
pub fn build_episode_graph(
    store: &LabeledUtteranceStore,
    episode: &Episode,
    weights: &NetworkWeights,
    mode: GraphMode,
    crop: Option<(usize, &mut dyn rand::RngCore)>,
) -> Result<EpisodeGraph> {
    let spec = &weights.spec;
    if matches!(spec.head, HeadSpec::XVector { .. }) {
        return Err(Error::Spec("episodic losses need a protonet or relation encoder".into()));
    }
    if episode.supports.len() != episode.way() || episode.queries.len() != episode.way() {
        return Err(Error::Episode("support/query lists do not match the class list".into()));
    }
    check_supports(&episode.supports)?;
    let order: Vec<usize> = episode
        .supports
        .iter()
        .chain(&episode.queries)
        .flatten()
        .copied()
        .collect();
    let mut crop = crop;
    let mut mats = Vec::with_capacity(order.len());
    for &u in &order {
        let f = &store.utterance(u).features;
        mats.push(match crop.as_mut() {
            Some((n, rng)) => random_crop(f, *n, rng),
            None => f.frames.clone(),
        });
    }
    let lengths: Vec<usize> = mats.iter().map(|m| m.nrows()).collect();
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    let stacked = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|_| Error::Dimension("utterances have different feature dims".into()))?;

    let mut support_rows = Vec::with_capacity(episode.way());
    let mut row = 0;
    for s in &episode.supports {
        support_rows.push((row..row + s.len()).collect::<Vec<_>>());
        row += s.len();
    }
    let mut query_rows = Vec::new();
    let mut targets = Vec::new();
    for (c, q) in episode.queries.iter().enumerate() {
        for _ in q {
            query_rows.push(row);
            targets.push(c);
            row += 1;
        }
    }

    let mut g = Graph::new();
    let x = g.input("features");
    let enc = encoder_graph(&mut g, spec, x, &lengths, mode)?;
    let logits = match spec.head {
        HeadSpec::RelationEncoder { .. } => {
            if weights.comparison_params().next().is_none() {
                return Err(Error::Spec("relation loss needs comparison network weights".into()));
            }
            relation_logits(&mut g, spec, enc.embedding, &support_rows, &query_rows)?
        }
        _ => prototype_logits(&mut g, enc.embedding, &support_rows, &query_rows)?,
    };
    let loss = g.softmax_xent(logits, targets.clone());
    Ok(EpisodeGraph {
        graph: g,
        loss,
        logits,
        batch_norms: enc.batch_norms,
        targets,
        inputs: TensorMap::from([("features".to_string(), stacked)]),
    })
}

fn eval_episode(store: &LabeledUtteranceStore, episode: &Episode, weights: &NetworkWeights) -> Result<(f64, f64)> {
    let mut eg = build_episode_graph(store, episode, weights, GraphMode::INFERENCE, None)?;
    eg.graph.forward(&(&eg.inputs, weights))?;
    let loss = eg.graph.scalar(eg.loss)?;
    Ok((loss, accuracy(eg.graph.value(eg.logits)?, &eg.targets)))
}

/// Prototypical-network episode loss and query accuracy, inference mode.
pub fn proto_episode_loss(
    store: &LabeledUtteranceStore,
    episode: &Episode,
    weights: &NetworkWeights,
) -> Result<(f64, f64)> {
    if !matches!(weights.spec.head, HeadSpec::Protonet { .. }) {
        return Err(Error::Spec("prototypical loss needs a protonet encoder".into()));
    }
    eval_episode(store, episode, weights)
}

/// Relation-network episode loss and query accuracy, inference mode.
pub fn relation_episode_loss(
    store: &LabeledUtteranceStore,
    episode: &Episode,
    weights: &NetworkWeights,
) -> Result<(f64, f64)> {
    if !matches!(weights.spec.head, HeadSpec::RelationEncoder { .. }) {
        return Err(Error::Spec("relation loss needs a relation encoder with comparison network".into()));
    }
    eval_episode(store, episode, weights)
}

/// Graph for softmax classification over speaker classes. Every
/// utterance in the batch must have the same number of frames.
pub fn classification_graph(
    batch: &[(&FeatureMatrix, usize)],
    weights: &NetworkWeights,
    mode: GraphMode,
) -> Result<EpisodeGraph> {
    let spec = &weights.spec;
    let HeadSpec::XVector { n_speakers } = spec.head else {
        return Err(Error::Spec("classification needs an x-vector network".into()));
    };
    let Some(first) = batch.first() else {
        return Err(Error::Batch("empty minibatch".into()));
    };
    let t = first.0.num_frames();
    if let Some((i, f)) = batch.iter().enumerate().find(|(_, f)| f.0.num_frames() != t) {
        return Err(Error::Batch(format!(
            "minibatch utterances must share one duration: item 0 has {t} frames, item {i} has {}",
            f.0.num_frames()
        )));
    }
    if let Some(&(_, y)) = batch.iter().find(|(_, y)| *y >= n_speakers) {
        return Err(Error::Batch(format!("label {y} is outside the {n_speakers} output classes")));
    }
    let feats: Vec<&FeatureMatrix> = batch.iter().map(|b| b.0).collect();
    let (stacked, lengths) = crate::nets::stack_frames(&feats)?;
    let targets: Vec<usize> = batch.iter().map(|b| b.1).collect();
    let mut g = Graph::new();
    let x = g.input("features");
    let enc = encoder_graph(&mut g, spec, x, &lengths, mode)?;
    let logits = enc.logits.expect("x-vector head has logits");
    let loss = g.softmax_xent(logits, targets.clone());
    Ok(EpisodeGraph {
        graph: g,
        loss,
        logits,
        batch_norms: enc.batch_norms,
        targets,
        inputs: TensorMap::from([("features".to_string(), stacked)]),
    })
}

/// Mean softmax cross-entropy of a labelled batch, inference mode.
pub fn classification_step(batch: &[(&FeatureMatrix, usize)], weights: &NetworkWeights) -> Result<f64> {
    let mut cg = classification_graph(batch, weights, GraphMode::INFERENCE)?;
    cg.graph.forward(&(&cg.inputs, weights))?;
    cg.graph.scalar(cg.loss)
}

/// Outcome of a finite-difference check of an episodic loss against all
/// trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error over coordinates with a non-zero analytic gradient.
    pub max_rel_error: f64,
    /// Parameters whose analytic gradient vanishes up to roundoff, such as
    /// biases cancelled by a following batch norm.
    pub structural_zero: Vec<String>,
    /// Largest |numeric gradient| over coordinates with a zero analytic gradient.
    pub max_abs_on_zero: f64,
    /// Number of parameters checked.
    pub checked: usize,
}

/// Analytic gradients below this are treated as exact zeros.
const ZERO_GRAD: f64 = 1e-10;

/// Central finite-difference check of the training-mode episode loss.
/// Relative error is meaningless where the true derivative is zero and
/// both estimates are roundoff (biases ahead of a batch norm, weights into
/// a dead ReLU unit), so coordinates whose analytic gradient is below
/// `ZERO_GRAD` are held to an absolute bound on the numeric gradient.
pub fn check_episode_gradients(
    store: &LabeledUtteranceStore,
    episode: &Episode,
    weights: &NetworkWeights,
    h: f64,
) -> Result<GradCheckReport> {
    let mut eg = build_episode_graph(store, episode, weights, GraphMode::TRAIN, None)?;
    let mut bindings = weights.params.clone();
    bindings.extend(weights.buffers.clone());
    bindings.extend(eg.inputs.clone());
    eg.graph.forward(&bindings)?;
    let analytic = eg.graph.backward(eg.loss)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        structural_zero: Vec::new(),
        max_abs_on_zero: 0.0,
        checked: 0,
    };
    for (name, p) in &weights.params {
        let zero = Tensor::zeros(p.dim());
        let a = analytic.get(name).unwrap_or(&zero);
        let n = numeric_gradient(&mut eg.graph, &bindings, eg.loss, name, h)?;
        report.checked += 1;
        if a.iter().all(|v| v.abs() < ZERO_GRAD) {
            report.structural_zero.push(name.clone());
        }
        for (&x, &y) in a.iter().zip(n.iter()) {
            if x.abs() < ZERO_GRAD {
                report.max_abs_on_zero = report.max_abs_on_zero.max(y.abs());
            } else {
                let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-12);
                report.max_rel_error = report.max_rel_error.max(rel);
            }
        }
    }
    Ok(report)
}
