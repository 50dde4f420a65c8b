//! A small tape-based reverse-mode differentiation engine over 2-D `f64`
//! tensors, carrying exactly the primitives the encoders and episodic
//! losses use.
//!
//! A [`Graph`] is built structurally first (node shapes are resolved at
//! forward time), then evaluated with [`Graph::forward`] against named
//! bindings for its inputs and parameters, and differentiated with
//! [`Graph::backward`]. Nodes are appended in topological order, so the
//! reverse pass is a single sweep over the node list.

mod adam;
mod check;
mod ops;

pub use adam::{adam_step, AdamState};
pub use check::{finite_diff_check, numeric_gradient};

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Name → tensor map used for parameters, inputs and gradients.
pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Source of values for the graph's named input nodes.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<&Tensor>;
}

impl Bindings for TensorMap {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl Bindings for HashMap<String, Tensor> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl<A: Bindings, B: Bindings> Bindings for (&A, &B) {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.0.lookup(name).or_else(|| self.1.lookup(name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with the supplied running statistics.
    Inference,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Input {
        name: String,
    },
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    TdnnConv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        context: usize,
        dilation: usize,
        lengths: Vec<usize>,
    },
    Relu(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: NodeId,
        running_var: NodeId,
        mode: NormMode,
        eps: f64,
    },
    Dropout {
        x: NodeId,
        rate: f64,
        seed: u64,
    },
    StatsPool {
        x: NodeId,
        lengths: Vec<usize>,
        var_floor: f64,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: Axis,
    },
    GatherRows {
        x: NodeId,
        index: Vec<usize>,
    },
    SegmentSum {
        x: NodeId,
        groups: Vec<Vec<usize>>,
    },
    SqEuclidean {
        a: NodeId,
        b: NodeId,
    },
    Reshape(NodeId, usize, usize),
    Neg(NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    SoftmaxXent {
        logits: NodeId,
        targets: Vec<usize>,
    },
}

impl Op {
    pub(crate) fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Affine { .. } => "affine",
            Op::TdnnConv { .. } => "tdnn_conv",
            Op::Relu(_) => "relu",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Dropout { .. } => "dropout",
            Op::StatsPool { .. } => "stats_pool",
            Op::Concat { .. } => "concat",
            Op::GatherRows { .. } => "gather_rows",
            Op::SegmentSum { .. } => "segment_sum",
            Op::SqEuclidean { .. } => "sq_euclidean",
            Op::Reshape(..) => "reshape",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::SoftmaxXent { .. } => "softmax_xent",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } => vec![],
            Op::Affine { x, w, b } | Op::TdnnConv { x, w, b, .. } => vec![*x, *w, *b],
            Op::Relu(x) | Op::Neg(x) | Op::Scale(x, _) | Op::Sum(x) | Op::Reshape(x, ..) => vec![*x],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => vec![*x, *gamma, *beta, *running_mean, *running_var],
            Op::Dropout { x, .. }
            | Op::StatsPool { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SegmentSum { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::SqEuclidean { a, b } => vec![*a, *b],
            Op::SoftmaxXent { logits, .. } => vec![*logits],
        }
    }
}

/// Per-op values saved during forward for use in backward.
#[derive(Debug, Clone, Default)]
pub(crate) enum Saved {
    #[default]
    None,
    Unfolded(Tensor),
    Norm {
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    Mask(Tensor),
    Pool {
        mean: Tensor,
        std: Tensor,
        var: Tensor,
    },
    Probs(Tensor),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Option<Tensor>,
    pub(crate) grad: Option<Tensor>,
    pub(crate) saved: Saved,
}

/// A computation description plus the values and gradients of its most
/// recent evaluation.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: HashMap<String, NodeId>,
    evaluated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.evaluated = false;
        self.nodes.push(Node {
            op,
            value: None,
            grad: None,
            saved: Saved::None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Named leaf. Requesting the same name twice returns the same node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input {
            name: name.to_string(),
        });
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// `x·w + b` with `x` n×i, `w` i×o and `b` 1×o.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Affine { x, w, b })
    }

    /// Dilated 1-D convolution over time applied independently to each
    /// segment of a ragged batch. `x` stacks the segments' frames row-wise
    /// (lengths given by `lengths`); `w` is (context·C_in)×N.
    pub fn tdnn_conv(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        context: usize,
        dilation: usize,
        lengths: Vec<usize>,
    ) -> NodeId {
        self.push(Op::TdnnConv {
            x,
            w,
            b,
            context,
            dilation,
            lengths,
        })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: NodeId,
        running_var: NodeId,
        mode: NormMode,
        eps: f64,
    ) -> NodeId {
        self.push(Op::BatchNorm {
            x,
            gamma,
            beta,
            running_mean,
            running_var,
            mode,
            eps,
        })
    }

    /// Inverted dropout; the mask is drawn from `seed` so repeated forward
    /// passes see the same mask.
    pub fn dropout(&mut self, x: NodeId, rate: f64, seed: u64) -> NodeId {
        self.push(Op::Dropout { x, rate, seed })
    }

    /// Per-segment mean ‖ standard deviation over time: (ΣT)×C → B×2C.
    pub fn stats_pool(&mut self, x: NodeId, lengths: Vec<usize>, var_floor: f64) -> NodeId {
        self.push(Op::StatsPool {
            x,
            lengths,
            var_floor,
        })
    }

    pub fn concat(&mut self, parts: Vec<NodeId>, axis: Axis) -> NodeId {
        self.push(Op::Concat { parts, axis })
    }

    pub fn gather_rows(&mut self, x: NodeId, index: Vec<usize>) -> NodeId {
        self.push(Op::GatherRows { x, index })
    }

    /// Row `g` of the output is the sum of the rows of `x` listed in `groups[g]`.
    pub fn segment_sum(&mut self, x: NodeId, groups: Vec<Vec<usize>>) -> NodeId {
        self.push(Op::SegmentSum { x, groups })
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (n×D)
    /// and `b` (m×D), giving n×m.
    pub fn sq_euclidean(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::SqEuclidean { a, b })
    }

    /// Row-major reshape to `rows`×`cols`.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Reshape(x, rows, cols))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Neg(x))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(x, c))
    }

    /// Sum of all elements, 1×1.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    /// Mean over rows of the softmax cross-entropy against `targets`, 1×1.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        self.push(Op::SoftmaxXent { logits, targets })
    }

    /// Evaluates every node. Inputs are looked up by name in `bindings`.
    pub fn forward(&mut self, bindings: &dyn Bindings) -> Result<()> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            self.nodes[i].grad = None;
            let (value, saved) = ops::forward_node(&self.nodes, i, bindings)?;
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: i,
                    op: self.nodes[i].op.kind(),
                });
            }
            self.nodes[i].value = Some(value);
            self.nodes[i].saved = saved;
        }
        self.evaluated = true;
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every
    /// named input that the loss depends on.
    pub fn backward(&mut self, loss: NodeId) -> Result<TensorMap> {
        if !self.evaluated {
            return Err(Error::State("backward called before forward".into()));
        }
        let lv = self.value(loss)?;
        if lv.dim() != (1, 1) {
            return Err(Error::Dimension(format!(
                "loss node must be 1×1, got {:?}",
                lv.dim()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = ops::backward_node(&self.nodes, i, &g);
            self.nodes[i].grad = Some(g);
            for (parent, delta) in contributions {
                let slot = &mut self.nodes[parent.0].grad;
                match slot {
                    Some(acc) => *acc += &delta,
                    None => *slot = Some(delta),
                }
            }
        }
        let mut out = TensorMap::new();
        for (name, id) in &self.inputs {
            if let Some(g) = &self.nodes[id.0].grad {
                out.insert(name.clone(), g.clone());
            }
        }
        Ok(out)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .and_then(|n| n.value.as_ref())
            .ok_or_else(|| Error::State(format!("node {} has no value; run forward first", id.0)))
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        Ok(self.value(id)?[[0, 0]])
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.grad.as_ref())
    }

    pub fn op_kind(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.kind()
    }

    /// Direct inputs of a node.
    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    /// Softmax posteriors computed by a `softmax_xent` node.
    pub fn posteriors(&self, id: NodeId) -> Option<&Tensor> {
        match &self.nodes.get(id.0)?.saved {
            Saved::Probs(p) => Some(p),
            _ => None,
        }
    }

    /// Batch mean and biased variance seen by a training-mode batch norm.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes.get(id.0)?.saved {
            Saved::Norm {
                batch_mean,
                batch_var,
                ..
            } => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    /// Names of all input nodes.
    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.keys().map(String::as_str)
    }
}

/// Output segment lengths of a TDNN layer, or an error naming the first
/// segment that is too short for the kernel.
pub fn tdnn_out_lengths(lengths: &[usize], context: usize, dilation: usize) -> Result<Vec<usize>> {
    let span = (context - 1) * dilation;
    lengths
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if t > span {
                Ok(t - span)
            } else {
                Err(Error::Dimension(format!(
                    "segment {i} has {t} frames; kernel spans {}",
                    span + 1
                )))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
