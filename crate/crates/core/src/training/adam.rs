use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &impl Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.values.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is modified.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState, lr: f64) -> Result<()> {
    let grad_tensors = grads.tensors();
    let shapes_match = grad_tensors.len() == state.m.len()
        && params.tensors().iter().zip(&grad_tensors).zip(&state.m).all(|((p, g), m)| {
            p.values.len() == g.values.len() && g.values.len() == m.len()
        });
    if !shapes_match {
        return Err(Error::Shape("parameters, gradients and Adam moments disagree in shape".into()));
    }
    for g in &grad_tensors {
        if let Some(index) = g.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: g.name.clone(),
                index,
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&grad_tensors)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for k in 0..g.values.len() {
            let gk = g.values[k];
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p.values[k] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TensorMut, TensorRef};

    #[derive(Clone)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn tensors(&self) -> Vec<TensorRef<'_>> {
            vec![TensorRef {
                name: "x".into(),
                values: &self.0,
                is_weight: true,
            }]
        }
        fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
            vec![TensorMut {
                name: "x".into(),
                values: &mut self.0,
                is_weight: true,
            }]
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Flat(vec![1.5, -2.0, 0.25]);
        let before = p.0.clone();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &Flat(vec![0.0; 3]), &mut s, 0.1).unwrap();
        assert_eq!(p.0, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Flat(vec![0.0; 4]);
        let g = Flat(vec![3.0, -0.02, 1e-3, -50.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        for (x, gk) in p.0.iter().zip(&g.0) {
            assert!((x + 0.01 * gk.signum()).abs() < 1e-6, "{x}");
        }
    }

    /// Plain scalar Adam, written out separately from `adam_step`.
    fn scalar_adam_trajectory(steps: usize, lr: f64) -> Vec<f64> {
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut out = Vec::new();
        for t in 1..=steps as i32 {
            let g = x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            out.push(x);
        }
        out
    }

    #[test]
    fn converges_on_quadratic() {
        let oracle = scalar_adam_trajectory(150, 0.1);
        let mut p = Flat(vec![1.0]);
        let mut s = AdamState::new(&p);
        for want in &oracle {
            let g = Flat(p.0.clone());
            adam_step(&mut p, &g, &mut s, 0.1).unwrap();
            assert!((p.0[0] - want).abs() < 1e-12);
        }
        assert!(oracle[..100].iter().any(|x| x.abs() < 1e-3));
        assert!(p.0[0].abs() < 1e-3, "{}", p.0[0]);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let mut p = Flat(vec![0.0; 3]);
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &Flat(vec![0.0, f64::NAN, 1.0]), &mut s, 0.1).unwrap_err();
        match err {
            Error::NonFiniteGradient { name, index } => assert_eq!((name.as_str(), index), ("x", 1)),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(s.t, 0);
        assert_eq!(p.0, vec![0.0; 3]);
    }
}
