use super::{Graph, NodeId, Tensor, TensorMap};
use crate::error::{Error, Result};

/// Central finite-difference estimate of d`loss`/d`name`.
pub fn numeric_gradient(graph: &mut Graph, bindings: &TensorMap, loss: NodeId, name: &str, h: f64) -> Result<Tensor> {
    let base = bindings
        .get(name)
        .ok_or_else(|| Error::State(format!("no binding named '{name}'")))?;
    let mut work = bindings.clone();
    let mut out = Tensor::zeros(base.dim());
    for ((r, c), &x0) in base.indexed_iter() {
        work.get_mut(name).expect("cloned")[[r, c]] = x0 + h;
        graph.forward(&work)?;
        let up = graph.scalar(loss)?;
        work.get_mut(name).expect("cloned")[[r, c]] = x0 - h;
        graph.forward(&work)?;
        let down = graph.scalar(loss)?;
        work.get_mut(name).expect("cloned")[[r, c]] = x0;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Central finite-difference check of the gradient of scalar `loss` with
/// respect to the named inputs in `wrt` (all of `bindings` when empty).
///
/// Returns the maximum over all checked coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_diff_check(
    graph: &mut Graph,
    bindings: &TensorMap,
    loss: NodeId,
    wrt: &[&str],
    h: f64,
) -> Result<f64> {
    graph.forward(bindings)?;
    let analytic = graph.backward(loss)?;
    let names: Vec<String> = if wrt.is_empty() {
        bindings.keys().cloned().collect()
    } else {
        wrt.iter().map(|s| s.to_string()).collect()
    };
    let mut worst = 0.0f64;
    for name in &names {
        if !bindings.contains_key(name) {
            continue;
        }
        let numeric = numeric_gradient(graph, bindings, loss, name, h)?;
        for ((r, c), &n) in numeric.indexed_iter() {
            let a = analytic.get(name).map_or(0.0, |g| g[[r, c]]);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    graph.forward(bindings)?;
    graph.backward(loss)?;
    Ok(worst)
}
