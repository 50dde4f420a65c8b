use ndarray::{s, Array2, Axis as NdAxis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tdnn_out_lengths, Axis, Bindings, Node, NodeId, NormMode, Op, Saved, Tensor};
use crate::error::{Error, Result};

fn val(nodes: &[Node], id: NodeId) -> &Tensor {
    nodes[id.0]
        .value
        .as_ref()
        .expect("parents are evaluated before children")
}

fn dim_err(i: usize, kind: &str, msg: String) -> Error {
    Error::Dimension(format!("node {i} ({kind}): {msg}"))
}

fn row_vec(t: &Tensor, len: usize) -> bool {
    t.dim() == (1, len)
}

pub(super) fn forward_node(nodes: &[Node], i: usize, bindings: &dyn Bindings) -> Result<(Tensor, Saved)> {
    let op = &nodes[i].op;
    let kind = op.kind();
    let out = match op {
        Op::Input { name } => {
            let v = bindings
                .lookup(name)
                .ok_or_else(|| Error::State(format!("input '{name}' is not bound")))?;
            (v.clone(), Saved::None)
        }
        Op::Affine { x, w, b } => {
            let (x, w, b) = (val(nodes, *x), val(nodes, *w), val(nodes, *b));
            if x.ncols() != w.nrows() || !row_vec(b, w.ncols()) {
                return Err(dim_err(
                    i,
                    kind,
                    format!("x {:?}, w {:?}, b {:?}", x.dim(), w.dim(), b.dim()),
                ));
            }
            (x.dot(w) + b, Saved::None)
        }
        Op::TdnnConv {
            x,
            w,
            b,
            context,
            dilation,
            lengths,
        } => {
            let (x, w, b) = (val(nodes, *x), val(nodes, *w), val(nodes, *b));
            let c = x.ncols();
            if lengths.iter().sum::<usize>() != x.nrows() {
                return Err(dim_err(
                    i,
                    kind,
                    format!("segment lengths sum to {}, input has {} rows", lengths.iter().sum::<usize>(), x.nrows()),
                ));
            }
            if w.nrows() != context * c || !row_vec(b, w.ncols()) {
                return Err(dim_err(
                    i,
                    kind,
                    format!("x {:?} with context {context}, w {:?}, b {:?}", x.dim(), w.dim(), b.dim()),
                ));
            }
            let out_lens = tdnn_out_lengths(lengths, *context, *dilation)?;
            let u = unfold(x, c, *context, *dilation, lengths, &out_lens);
            (u.dot(w) + b, Saved::Unfolded(u))
        }
        Op::Relu(x) => (val(nodes, *x).mapv(|v| v.max(0.0)), Saved::None),
        Op::BatchNorm {
            x,
            gamma,
            beta,
            running_mean,
            running_var,
            mode,
            eps,
        } => {
            let x = val(nodes, *x);
            let d = x.ncols();
            let (g, bt) = (val(nodes, *gamma), val(nodes, *beta));
            let (rm, rv) = (val(nodes, *running_mean), val(nodes, *running_var));
            if ![g, bt, rm, rv].iter().all(|t| row_vec(t, d)) {
                return Err(dim_err(i, kind, format!("x {:?} vs per-channel params", x.dim())));
            }
            let n = x.nrows();
            if n == 0 {
                return Err(dim_err(i, kind, "empty batch".into()));
            }
            let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
                NormMode::Train => (0..d)
                    .map(|j| {
                        let col = x.column(j);
                        let m = col.sum() / n as f64;
                        let v = col.iter().map(|&a| (a - m) * (a - m)).sum::<f64>() / n as f64;
                        (m, v)
                    })
                    .unzip(),
                NormMode::Inference => (rm.row(0).to_vec(), rv.row(0).to_vec()),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let xhat = Array2::from_shape_fn((n, d), |(r, j)| (x[[r, j]] - mean[j]) * inv_std[j]);
            let y = Array2::from_shape_fn((n, d), |(r, j)| g[[0, j]] * xhat[[r, j]] + bt[[0, j]]);
            (
                y,
                Saved::Norm {
                    xhat,
                    inv_std,
                    batch_mean: mean,
                    batch_var: var,
                },
            )
        }
        Op::Dropout { x, rate, seed } => {
            let x = val(nodes, *x);
            if !(0.0..1.0).contains(rate) {
                return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let keep = 1.0 / (1.0 - rate);
            let mask = Array2::from_shape_fn(x.dim(), |_| {
                if rng.random::<f64>() < *rate {
                    0.0
                } else {
                    keep
                }
            });
            (x * &mask, Saved::Mask(mask))
        }
        Op::StatsPool {
            x,
            lengths,
            var_floor,
        } => {
            let x = val(nodes, *x);
            if lengths.iter().sum::<usize>() != x.nrows() || lengths.contains(&0) {
                return Err(dim_err(i, kind, format!("lengths {lengths:?} vs {} rows", x.nrows())));
            }
            let c = x.ncols();
            let b = lengths.len();
            let mut mean = Array2::zeros((b, c));
            let mut std = Array2::zeros((b, c));
            let mut var_raw = Array2::zeros((b, c));
            let mut start = 0;
            for (seg, &t) in lengths.iter().enumerate() {
                let block = x.slice(s![start..start + t, ..]);
                let m = block.mean_axis(NdAxis(0)).expect("non-empty");
                for j in 0..c {
                    let var = block.column(j).iter().map(|&a| (a - m[j]).powi(2)).sum::<f64>() / t as f64;
                    mean[[seg, j]] = m[j];
                    var_raw[[seg, j]] = var;
                    std[[seg, j]] = var.max(*var_floor).sqrt();
                }
                start += t;
            }
            let out = ndarray::concatenate(NdAxis(1), &[mean.view(), std.view()]).expect("same rows");
            (out, Saved::Pool { mean, std, var: var_raw })
        }
        Op::Concat { parts, axis } => {
            let views: Vec<_> = parts.iter().map(|p| val(nodes, *p).view()).collect();
            if views.is_empty() {
                return Err(dim_err(i, kind, "no parts".into()));
            }
            let ax = match axis {
                Axis::Rows => NdAxis(0),
                Axis::Cols => NdAxis(1),
            };
            let out = ndarray::concatenate(ax, &views)
                .map_err(|e| dim_err(i, kind, e.to_string()))?;
            (out, Saved::None)
        }
        Op::GatherRows { x, index } => {
            let x = val(nodes, *x);
            if let Some(bad) = index.iter().find(|&&r| r >= x.nrows()) {
                return Err(dim_err(i, kind, format!("row {bad} of {}", x.nrows())));
            }
            (x.select(NdAxis(0), index), Saved::None)
        }
        Op::SegmentSum { x, groups } => {
            let x = val(nodes, *x);
            let mut out = Array2::zeros((groups.len(), x.ncols()));
            for (g, rows) in groups.iter().enumerate() {
                for &r in rows {
                    if r >= x.nrows() {
                        return Err(dim_err(i, kind, format!("row {r} of {}", x.nrows())));
                    }
                    let mut dst = out.row_mut(g);
                    dst += &x.row(r);
                }
            }
            (out, Saved::None)
        }
        Op::SqEuclidean { a, b } => {
            let (a, b) = (val(nodes, *a), val(nodes, *b));
            if a.ncols() != b.ncols() {
                return Err(dim_err(i, kind, format!("{:?} vs {:?}", a.dim(), b.dim())));
            }
            let out = Array2::from_shape_fn((a.nrows(), b.nrows()), |(r, c)| {
                a.row(r)
                    .iter()
                    .zip(b.row(c).iter())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum()
            });
            (out, Saved::None)
        }
        Op::Reshape(x, r, c) => {
            let v = val(nodes, *x);
            if v.len() != r * c {
                return Err(dim_err(i, kind, format!("{:?} into {r}×{c}", v.dim())));
            }
            let flat: Vec<f64> = v.iter().copied().collect();
            (Array2::from_shape_vec((*r, *c), flat).expect("length checked"), Saved::None)
        }
        Op::Neg(x) => (-val(nodes, *x), Saved::None),
        Op::Scale(x, c) => (val(nodes, *x) * *c, Saved::None),
        Op::Sum(x) => (Array2::from_elem((1, 1), val(nodes, *x).sum()), Saved::None),
        Op::SoftmaxXent { logits, targets } => {
            let z = val(nodes, *logits);
            if targets.len() != z.nrows() || targets.iter().any(|&t| t >= z.ncols()) {
                return Err(dim_err(
                    i,
                    kind,
                    format!("{} targets for logits {:?}", targets.len(), z.dim()),
                ));
            }
            let probs = softmax_rows(z);
            let n = z.nrows() as f64;
            let mut loss = 0.0;
            for (r, &t) in targets.iter().enumerate() {
                let row = z.row(r);
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - z[[r, t]];
            }
            (Array2::from_elem((1, 1), loss / n), Saved::Probs(probs))
        }
    };
    Ok(out)
}

pub(crate) fn softmax_rows(z: &Tensor) -> Tensor {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

fn unfold(x: &Tensor, c: usize, context: usize, dilation: usize, lens: &[usize], out_lens: &[usize]) -> Tensor {
    let rows: usize = out_lens.iter().sum();
    let mut u = Array2::zeros((rows, context * c));
    let (mut src, mut dst) = (0, 0);
    for (&t, &to) in lens.iter().zip(out_lens) {
        for r in 0..to {
            for k in 0..context {
                u.slice_mut(s![dst + r, k * c..(k + 1) * c])
                    .assign(&x.row(src + r + k * dilation));
            }
        }
        src += t;
        dst += to;
    }
    u
}

/// Gradient contributions of node `i` to its parents given upstream `g`.
pub(super) fn backward_node(nodes: &[Node], i: usize, g: &Tensor) -> Vec<(NodeId, Tensor)> {
    let node = &nodes[i];
    match &node.op {
        Op::Input { .. } => vec![],
        Op::Affine { x, w, b } => {
            let (xv, wv) = (val(nodes, *x), val(nodes, *w));
            vec![
                (*x, g.dot(&wv.t())),
                (*w, xv.t().dot(g)),
                (*b, g.sum_axis(NdAxis(0)).insert_axis(NdAxis(0))),
            ]
        }
        Op::TdnnConv {
            x,
            w,
            b,
            context,
            dilation,
            lengths,
        } => {
            let Saved::Unfolded(u) = &node.saved else {
                unreachable!("tdnn forward saves its unfolded input")
            };
            let (xv, wv) = (val(nodes, *x), val(nodes, *w));
            let c = xv.ncols();
            let du = g.dot(&wv.t());
            let mut dx = Array2::zeros(xv.dim());
            let span = (context - 1) * dilation;
            let (mut src, mut dst) = (0, 0);
            for &t in lengths {
                let to = t - span;
                for r in 0..to {
                    for k in 0..*context {
                        let mut row = dx.row_mut(src + r + k * dilation);
                        row += &du.slice(s![dst + r, k * c..(k + 1) * c]);
                    }
                }
                src += t;
                dst += to;
            }
            vec![
                (*x, dx),
                (*w, u.t().dot(g)),
                (*b, g.sum_axis(NdAxis(0)).insert_axis(NdAxis(0))),
            ]
        }
        Op::Relu(x) => {
            let xv = val(nodes, *x);
            let mut d = g.clone();
            d.zip_mut_with(xv, |gi, &xi| {
                if xi <= 0.0 {
                    *gi = 0.0
                }
            });
            vec![(*x, d)]
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            running_mean,
            running_var,
            mode,
            ..
        } => {
            let Saved::Norm { xhat, inv_std, .. } = &node.saved else {
                unreachable!("batch norm forward saves normalized input")
            };
            let gv = val(nodes, *gamma);
            let (n, d) = xhat.dim();
            let dgamma = (g * xhat).sum_axis(NdAxis(0)).insert_axis(NdAxis(0));
            let dbeta = g.sum_axis(NdAxis(0)).insert_axis(NdAxis(0));
            let mut dx = Array2::zeros((n, d));
            let mut drm = Array2::zeros((1, d));
            let mut drv = Array2::zeros((1, d));
            for j in 0..d {
                let gj = gv[[0, j]];
                match mode {
                    NormMode::Inference => {
                        for r in 0..n {
                            dx[[r, j]] = g[[r, j]] * gj * inv_std[j];
                            drm[[0, j]] -= g[[r, j]] * gj * inv_std[j];
                            drv[[0, j]] -= 0.5 * g[[r, j]] * gj * xhat[[r, j]] * inv_std[j] * inv_std[j];
                        }
                    }
                    NormMode::Train => {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for r in 0..n {
                            let dxh = g[[r, j]] * gj;
                            s1 += dxh;
                            s2 += dxh * xhat[[r, j]];
                        }
                        let nf = n as f64;
                        for r in 0..n {
                            let dxh = g[[r, j]] * gj;
                            dx[[r, j]] = inv_std[j] / nf * (nf * dxh - s1 - xhat[[r, j]] * s2);
                        }
                    }
                }
            }
            let mut out = vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)];
            if *mode == NormMode::Inference {
                out.push((*running_mean, drm));
                out.push((*running_var, drv));
            }
            out
        }
        Op::Dropout { x, .. } => {
            let Saved::Mask(mask) = &node.saved else {
                unreachable!("dropout forward saves its mask")
            };
            vec![(*x, g * mask)]
        }
        Op::StatsPool { x, lengths, var_floor } => {
            let Saved::Pool { mean, std, var } = &node.saved else {
                unreachable!("stats pool forward saves moments")
            };
            let xv = val(nodes, *x);
            let c = xv.ncols();
            let mut dx = Array2::zeros(xv.dim());
            let mut start = 0;
            for (seg, &t) in lengths.iter().enumerate() {
                let tf = t as f64;
                for j in 0..c {
                    let dmean = g[[seg, j]] / tf;
                    let s = std[[seg, j]];
                    let floored = var[[seg, j]] <= *var_floor;
                    let dvar = if floored { 0.0 } else { g[[seg, c + j]] / (2.0 * s) };
                    for r in start..start + t {
                        dx[[r, j]] = dmean + dvar * 2.0 * (xv[[r, j]] - mean[[seg, j]]) / tf;
                    }
                }
                start += t;
            }
            vec![(*x, dx)]
        }
        Op::Concat { parts, axis } => {
            let mut out = Vec::with_capacity(parts.len());
            let mut off = 0;
            for p in parts {
                let v = val(nodes, *p);
                let piece = match axis {
                    Axis::Rows => g.slice(s![off..off + v.nrows(), ..]).to_owned(),
                    Axis::Cols => g.slice(s![.., off..off + v.ncols()]).to_owned(),
                };
                off += match axis {
                    Axis::Rows => v.nrows(),
                    Axis::Cols => v.ncols(),
                };
                out.push((*p, piece));
            }
            out
        }
        Op::GatherRows { x, index } => {
            let mut dx = Array2::zeros(val(nodes, *x).dim());
            for (r, &src) in index.iter().enumerate() {
                let mut row = dx.row_mut(src);
                row += &g.row(r);
            }
            vec![(*x, dx)]
        }
        Op::SegmentSum { x, groups } => {
            let mut dx = Array2::zeros(val(nodes, *x).dim());
            for (gi, rows) in groups.iter().enumerate() {
                for &r in rows {
                    let mut row = dx.row_mut(r);
                    row += &g.row(gi);
                }
            }
            vec![(*x, dx)]
        }
        Op::SqEuclidean { a, b } => {
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            let row_sums = g.sum_axis(NdAxis(1)).insert_axis(NdAxis(1));
            let col_sums = g.sum_axis(NdAxis(0)).insert_axis(NdAxis(1));
            let da = (av * &row_sums - g.dot(bv)) * 2.0;
            let db = (bv * &col_sums - g.t().dot(av)) * 2.0;
            vec![(*a, da), (*b, db)]
        }
        Op::Reshape(x, ..) => {
            let shape = val(nodes, *x).dim();
            let flat: Vec<f64> = g.iter().copied().collect();
            vec![(*x, Array2::from_shape_vec(shape, flat).expect("same length"))]
        }
        Op::Neg(x) => vec![(*x, -g)],
        Op::Scale(x, c) => vec![(*x, g * *c)],
        Op::Sum(x) => {
            let shape = val(nodes, *x).dim();
            vec![(*x, Array2::from_elem(shape, g[[0, 0]]))]
        }
        Op::SoftmaxXent { logits, targets } => {
            let Saved::Probs(p) = &node.saved else {
                unreachable!("softmax_xent forward saves posteriors")
            };
            let n = p.nrows() as f64;
            let mut d = p.clone();
            for (r, &t) in targets.iter().enumerate() {
                d[[r, t]] -= 1.0;
            }
            d *= g[[0, 0]] / n;
            vec![(*logits, d)]
        }
    }
}
