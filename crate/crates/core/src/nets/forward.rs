use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, Axis as NdAxis};

use super::spec::{EncoderSpec, FcLayer, HeadSpec};
use super::weights::NetworkWeights;
use crate::autograd::{tdnn_out_lengths, Bindings, Graph, NodeId, NormMode, Tensor, TensorMap};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

impl Bindings for NetworkWeights {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

/// How the encoder graph is instantiated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphMode {
    pub norm: NormMode,
    /// Dropout rate and seed; applied after every hidden ReLU.
    pub dropout: Option<(f64, u64)>,
}

impl GraphMode {
    pub const INFERENCE: GraphMode = GraphMode {
        norm: NormMode::Inference,
        dropout: None,
    };
    pub const TRAIN: GraphMode = GraphMode {
        norm: NormMode::Train,
        dropout: None,
    };
}

/// Handles into an encoder graph.
#[derive(Debug, Clone)]
pub struct EncoderNodes {
    /// Final embedding layer output (meta-learning heads) or fc2 for x-vectors.
    pub embedding: NodeId,
    /// Classification logits (x-vector head only).
    pub logits: Option<NodeId>,
    /// Named tap points.
    pub taps: BTreeMap<String, NodeId>,
    /// Batch-norm nodes by layer name, for running-statistic updates.
    pub batch_norms: Vec<(String, NodeId)>,
}

/// Embedding extraction point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tap {
    /// Pre-activation (affine) output of fc1 or fc2 of an x-vector network.
    Fc(usize),
    /// Final layer output of a meta-learned encoder.
    Embedding,
}

impl std::str::FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc1" => Ok(Tap::Fc(1)),
            "fc2" => Ok(Tap::Fc(2)),
            "embedding" | "final" => Ok(Tap::Embedding),
            other => Err(Error::Parameter(format!("unknown tap '{other}'"))),
        }
    }
}

impl std::fmt::Display for Tap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tap::Fc(i) => write!(f, "fc{i}"),
            Tap::Embedding => write!(f, "embedding"),
        }
    }
}

impl Tap {
    /// Default tap for a spec: fc1 for x-vectors, final layer otherwise.
    pub fn default_for(spec: &EncoderSpec) -> Tap {
        match spec.head {
            HeadSpec::XVector { .. } => Tap::Fc(1),
            _ => Tap::Embedding,
        }
    }

    fn key(&self, spec: &EncoderSpec) -> Result<String> {
        match (self, &spec.head) {
            (Tap::Fc(i), HeadSpec::XVector { .. }) if *i >= 1 && *i <= spec.segment_dims.len() => {
                Ok(format!("fc{i}"))
            }
            (Tap::Embedding, HeadSpec::Protonet { .. } | HeadSpec::RelationEncoder { .. }) => {
                Ok("embedding".into())
            }
            _ => Err(Error::Parameter(format!(
                "tap '{self}' is not valid for a {} network",
                spec.head.name()
            ))),
        }
    }

    pub fn dim(&self, spec: &EncoderSpec) -> Result<usize> {
        self.key(spec)?;
        Ok(match self {
            Tap::Fc(i) => spec.segment_dims[i - 1],
            Tap::Embedding => spec.embedding_dim(),
        })
    }
}

fn fc_block(
    g: &mut Graph,
    x: NodeId,
    l: &FcLayer,
    spec: &EncoderSpec,
    mode: GraphMode,
    salt: u64,
    bns: &mut Vec<(String, NodeId)>,
) -> (NodeId, NodeId) {
    let w = g.input(&format!("{}.weight", l.name));
    let b = g.input(&format!("{}.bias", l.name));
    let pre = g.affine(x, w, b);
    let mut y = pre;
    if l.batch_norm {
        y = batch_norm(g, y, &l.name, spec, mode, bns);
    }
    if l.relu {
        y = g.relu(y);
        if let Some((rate, seed)) = mode.dropout {
            y = g.dropout(y, rate, seed.wrapping_add(salt));
        }
    }
    (pre, y)
}

fn batch_norm(
    g: &mut Graph,
    x: NodeId,
    layer: &str,
    spec: &EncoderSpec,
    mode: GraphMode,
    bns: &mut Vec<(String, NodeId)>,
) -> NodeId {
    let gamma = g.input(&format!("{layer}.bn.gamma"));
    let beta = g.input(&format!("{layer}.bn.beta"));
    let rm = g.input(&format!("{layer}.bn.running_mean"));
    let rv = g.input(&format!("{layer}.bn.running_var"));
    let y = g.batch_norm(x, gamma, beta, rm, rv, mode.norm, spec.bn_eps);
    bns.push((layer.to_string(), y));
    y
}

/// Adds the encoder f(·) to `g`. `features` stacks the frames of a ragged
/// batch row-wise with per-utterance `lengths`; the outputs have one row
/// per utterance.
pub fn encoder_graph(
    g: &mut Graph,
    spec: &EncoderSpec,
    features: NodeId,
    lengths: &[usize],
    mode: GraphMode,
) -> Result<EncoderNodes> {
    let rf = spec.receptive_field();
    if let Some((i, t)) = lengths.iter().enumerate().find(|(_, &t)| t < rf) {
        return Err(Error::InputLength(format!(
            "utterance {i} has {t} frames; the TDNN receptive field is {rf}"
        )));
    }
    let mut bns = Vec::new();
    let mut taps = BTreeMap::new();
    let mut x = features;
    let mut lens = lengths.to_vec();
    let mut salt = 0u64;
    for (i, l) in spec.tdnn.iter().enumerate() {
        let name = EncoderSpec::tdnn_name(i);
        let w = g.input(&format!("{name}.weight"));
        let b = g.input(&format!("{name}.bias"));
        x = g.tdnn_conv(x, w, b, l.context, l.dilation, lens.clone());
        lens = tdnn_out_lengths(&lens, l.context, l.dilation)?;
        x = batch_norm(g, x, &name, spec, mode, &mut bns);
        x = g.relu(x);
        if let Some((rate, seed)) = mode.dropout {
            x = g.dropout(x, rate, seed.wrapping_add(salt));
        }
        salt += 1;
    }
    x = g.stats_pool(x, lens, spec.var_floor);
    taps.insert("pool".to_string(), x);
    let mut logits = None;
    for l in spec.fc_layers() {
        let (pre, y) = fc_block(g, x, &l, spec, mode, salt, &mut bns);
        salt += 1;
        if l.name == "output" {
            logits = Some(pre);
        } else {
            taps.insert(l.name.clone(), pre);
        }
        x = y;
    }
    let embedding = match spec.head {
        HeadSpec::XVector { .. } => taps[&format!("fc{}", spec.segment_dims.len())],
        _ => {
            taps.insert("embedding".into(), x);
            x
        }
    };
    Ok(EncoderNodes {
        embedding,
        logits,
        taps,
        batch_norms: bns,
    })
}

/// Adds the comparison network g(·) to `g`, mapping each row of `pairs`
/// (class representation ‖ query embedding) to one relation score.
pub fn comparison_graph(g: &mut Graph, spec: &EncoderSpec, pairs: NodeId) -> Result<NodeId> {
    let layers = spec.comparison_layers();
    if layers.is_empty() {
        return Err(Error::Spec("spec has no comparison network".into()));
    }
    let mut x = pairs;
    let mut unused = Vec::new();
    for l in &layers {
        let (_, y) = fc_block(g, x, l, spec, GraphMode::INFERENCE, 0, &mut unused);
        x = y;
    }
    Ok(x)
}

/// Stacks feature matrices into one ragged batch.
pub fn stack_frames(batch: &[&FeatureMatrix]) -> Result<(Tensor, Vec<usize>)> {
    let dim = batch.first().map(|f| f.dim()).unwrap_or(0);
    if let Some(bad) = batch.iter().find(|f| f.dim() != dim) {
        return Err(Error::Dimension(format!(
            "feature dims differ within batch: {dim} vs {}",
            bad.dim()
        )));
    }
    let views: Vec<_> = batch.iter().map(|f| f.frames.view()).collect();
    let lens = batch.iter().map(|f| f.num_frames()).collect();
    let stacked = if views.is_empty() {
        Array2::zeros((0, dim))
    } else {
        concatenate(NdAxis(0), &views).expect("equal widths")
    };
    Ok((stacked, lens))
}

/// Embeddings for a batch of utterances (one row each) in inference mode.
pub fn embed_batch(weights: &NetworkWeights, batch: &[&FeatureMatrix], tap: &Tap) -> Result<Array2<f64>> {
    let spec = &weights.spec;
    let key = tap.key(spec)?;
    let dim = tap.dim(spec)?;
    if batch.is_empty() {
        return Ok(Array2::zeros((0, dim)));
    }
    if let Some(f) = batch.iter().find(|f| f.dim() != spec.input_dim) {
        return Err(Error::Dimension(format!(
            "features have {} coefficients, network expects {}",
            f.dim(),
            spec.input_dim
        )));
    }
    let mut out = Vec::with_capacity(batch.len());
    // bounded chunks keep the unfolded TDNN inputs small
    for chunk in batch.chunks(32) {
        let (stacked, lens) = stack_frames(chunk)?;
        let mut g = Graph::new();
        let x = g.input("features");
        let nodes = encoder_graph(&mut g, spec, x, &lens, GraphMode::INFERENCE)?;
        let inputs = TensorMap::from([("features".to_string(), stacked)]);
        g.forward(&(&inputs, weights))?;
        out.push(g.value(nodes.taps[&key])?.clone());
    }
    let views: Vec<_> = out.iter().map(|a| a.view()).collect();
    Ok(concatenate(NdAxis(0), &views).expect("equal widths"))
}

/// Fixed-dimension embedding of one utterance.
pub fn embed(weights: &NetworkWeights, f: &FeatureMatrix, tap: &Tap) -> Result<Vec<f64>> {
    Ok(embed_batch(weights, &[f], tap)?.row(0).to_vec())
}
