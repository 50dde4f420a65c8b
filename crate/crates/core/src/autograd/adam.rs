use super::{Tensor, TensorMap};
use crate::error::{Error, Result};

/// First/second moment estimates for every parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: TensorMap,
    pub v: TensorMap,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.99, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: TensorMap::new(),
            v: TensorMap::new(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update of `params` in place. Parameters without
/// a gradient are left untouched. A non-finite gradient rejects the whole
/// step before anything is modified.
pub fn adam_step(params: &mut TensorMap, grads: &TensorMap, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate {lr} must be positive")));
    }
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Dimension(format!("gradient for unknown parameter '{name}'")))?;
        if p.dim() != g.dim() {
            return Err(Error::Dimension(format!(
                "parameter '{name}' is {:?}, gradient {:?}",
                p.dim(),
                g.dim()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericMsg(format!("non-finite gradient for '{name}'")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.dim()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.dim()));
        ndarray::Zip::from(p)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + state.eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one(name: &str, t: Tensor) -> TensorMap {
        TensorMap::from([(name.to_string(), t)])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one("w", array![[1.0, -2.0, 0.5]]);
        let g = one("w", array![[3.0, -0.001, 1e4]]);
        let mut st = AdamState::default();
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        let d = &p["w"] - &array![[1.0, -2.0, 0.5]];
        assert!((d[[0, 0]] + 0.01).abs() < 1e-8);
        assert!((d[[0, 1]] - 0.01).abs() < 1e-6);
        assert!((d[[0, 2]] + 0.01).abs() < 1e-8);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let start = array![[0.3, -0.7]];
        let mut p = one("w", start.clone());
        let g = one("w", Tensor::zeros((1, 2)));
        let mut st = AdamState::default();
        for _ in 0..50 {
            adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        }
        assert_eq!(p["w"], start);
    }

    #[test]
    fn non_finite_gradient_rejected_without_update() {
        let mut p = one("w", array![[1.0, 2.0]]);
        let g = one("w", array![[0.5, f64::NAN]]);
        let mut st = AdamState::default();
        assert!(matches!(adam_step(&mut p, &g, &mut st, 0.1), Err(Error::NumericMsg(_))));
        assert_eq!(p["w"], array![[1.0, 2.0]]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = one("w", array![[1.0, 2.0]]);
        let g = one("w", array![[0.5]]);
        let mut st = AdamState::default();
        assert!(matches!(adam_step(&mut p, &g, &mut st, 0.1), Err(Error::Dimension(_))));
    }

    /// Independent scalar Adam, written out longhand.
    fn scalar_adam(x0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.99f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for k in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(k as i32));
            let vh = v / (1.0 - b2.powi(k as i32));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn quadratic_matches_scalar_oracle() {
        let mut p = one("x", array![[1.0]]);
        let mut st = AdamState::default();
        for _ in 0..100 {
            let g = one("x", &p["x"] * 2.0);
            adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        }
        let x = p["x"][[0, 0]];
        let oracle = scalar_adam(1.0, 0.1, 100);
        assert!((x - oracle).abs() < 1e-12, "{x} vs {oracle}");
        assert!(x.abs() < 0.05, "|x| = {}", x.abs());
    }
}
