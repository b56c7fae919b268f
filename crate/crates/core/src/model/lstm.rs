use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};

/// Weights of one LSTM gate: `a = W x + U h_prev + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub input: Matrix,
    pub recurrent: Matrix,
    pub bias: Vec<f64>,
}

impl Gate {
    pub(crate) fn zeros(hidden: usize, input: usize) -> Self {
        Gate {
            input: Matrix::zeros(hidden, input),
            recurrent: Matrix::zeros(hidden, hidden),
            bias: vec![0.0; hidden],
        }
    }

    fn preactivation(&self, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let mut a = self.bias.clone();
        self.input.matvec_add(x, &mut a);
        self.recurrent.matvec_add(h_prev, &mut a);
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub output_gate: Gate,
    pub candidate: Gate,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmParams {
            input_gate: Gate::zeros(hidden, input),
            forget_gate: Gate::zeros(hidden, input),
            output_gate: Gate::zeros(hidden, input),
            candidate: Gate::zeros(hidden, input),
        }
    }

    pub fn hidden(&self) -> usize {
        self.input_gate.bias.len()
    }

    pub fn input_width(&self) -> usize {
        self.input_gate.input.cols()
    }

    pub(crate) fn gates(&self) -> [(&'static str, &Gate); 4] {
        [
            ("input", &self.input_gate),
            ("forget", &self.forget_gate),
            ("output", &self.output_gate),
            ("candidate", &self.candidate),
        ]
    }

    pub(crate) fn gates_mut(&mut self) -> [(&'static str, &mut Gate); 4] {
        [
            ("input", &mut self.input_gate),
            ("forget", &mut self.forget_gate),
            ("output", &mut self.output_gate),
            ("candidate", &mut self.candidate),
        ]
    }
}

/// Activations of one timestep, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub x: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Runs the recurrence from zero hidden and cell state and returns the last
/// hidden state with the per-step trace.
pub fn lstm_forward(params: &LstmParams, inputs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<StepTrace>)> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("LSTM input sequence is empty".into()));
    }
    let width = params.input_width();
    if let Some((t, x)) = inputs.iter().enumerate().find(|(_, x)| x.len() != width) {
        return Err(Error::Shape(format!(
            "LSTM input at step {t} has width {}, expected {width}",
            x.len()
        )));
    }
    let h = params.hidden();
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let i: Vec<f64> = params.input_gate.preactivation(x, &h_prev).into_iter().map(sigmoid).collect();
        let f: Vec<f64> = params.forget_gate.preactivation(x, &h_prev).into_iter().map(sigmoid).collect();
        let o: Vec<f64> = params.output_gate.preactivation(x, &h_prev).into_iter().map(sigmoid).collect();
        let g: Vec<f64> = params.candidate.preactivation(x, &h_prev).into_iter().map(f64::tanh).collect();
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let hidden: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
        h_prev.clone_from(&hidden);
        c_prev.clone_from(&c);
        steps.push(StepTrace {
            x: x.clone(),
            i,
            f,
            o,
            g,
            c,
            tanh_c,
            h: hidden,
        });
    }
    Ok((h_prev, steps))
}

/// Backpropagates `d_last` (gradient w.r.t. the final hidden state) through
/// time, accumulating parameter gradients into `grads`. Returns the gradient
/// w.r.t. each step's input.
pub(crate) fn lstm_backward(
    params: &LstmParams,
    steps: &[StepTrace],
    d_last: &[f64],
    grads: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let h = params.hidden();
    let width = params.input_width();
    let mut dh = d_last.to_vec();
    let mut dc = vec![0.0; h];
    let mut dx_all = vec![Vec::new(); steps.len()];
    let zeros = vec![0.0; h];
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let c_prev = if t > 0 { &steps[t - 1].c } else { &zeros };
        let h_prev = if t > 0 { &steps[t - 1].h } else { &zeros };

        let mut da_i = vec![0.0; h];
        let mut da_f = vec![0.0; h];
        let mut da_o = vec![0.0; h];
        let mut da_g = vec![0.0; h];
        for k in 0..h {
            let d_o = dh[k] * s.tanh_c[k];
            dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            da_i[k] = dc[k] * s.g[k] * s.i[k] * (1.0 - s.i[k]);
            da_f[k] = dc[k] * c_prev[k] * s.f[k] * (1.0 - s.f[k]);
            da_o[k] = d_o * s.o[k] * (1.0 - s.o[k]);
            da_g[k] = dc[k] * s.i[k] * (1.0 - s.g[k] * s.g[k]);
            dc[k] *= s.f[k];
        }

        let mut dx = vec![0.0; width];
        let mut dh_prev = vec![0.0; h];
        let pre = [&da_i, &da_f, &da_o, &da_g];
        for (((_, gate), (_, grad)), da) in params.gates().into_iter().zip(grads.gates_mut()).zip(pre) {
            grad.input.add_outer(da, &s.x);
            if t > 0 {
                grad.recurrent.add_outer(da, h_prev);
            }
            grad.bias.iter_mut().zip(da.iter()).for_each(|(b, d)| *b += d);
            gate.input.matvec_transposed_add(da, &mut dx);
            gate.recurrent.matvec_transposed_add(da, &mut dh_prev);
        }
        dx_all[t] = dx;
        dh = dh_prev;
    }
    dx_all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_params(rng: &mut Rng, hidden: usize, input: usize) -> LstmParams {
        let mut p = LstmParams::zeros(hidden, input);
        for (_, g) in p.gates_mut() {
            for v in g.input.as_mut_slice().iter_mut().chain(g.recurrent.as_mut_slice()).chain(&mut g.bias) {
                *v = rng.uniform_range(-1.0, 1.0);
            }
        }
        p
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let p = LstmParams::zeros(3, 2);
        let (h, steps) = lstm_forward(&p, &[vec![1.0, -4.0], vec![2.0, 9.0]]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(steps.len(), 2);
        assert!(steps[0].i.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn single_step_matches_scalar_oracle() {
        let mut p = LstmParams::zeros(1, 1);
        let set = |g: &mut Gate, w: f64, b: f64| {
            g.input.set(0, 0, w);
            g.recurrent.set(0, 0, 0.7);
            g.bias[0] = b;
        };
        set(&mut p.input_gate, 0.5, 0.1);
        set(&mut p.forget_gate, -0.3, 1.0);
        set(&mut p.output_gate, 0.8, -0.2);
        set(&mut p.candidate, 1.5, 0.05);
        let x = 0.9;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5 * x + 0.1);
        let g = (1.5 * x + 0.05).tanh();
        let o = sig(0.8 * x - 0.2);
        // zero initial state: forget gate and recurrent weights do not contribute
        let want = o * (i * g).tanh();
        let (h, _) = lstm_forward(&p, &[vec![x]]).unwrap();
        assert!((h[0] - want).abs() < 1e-15);
    }

    #[test]
    fn order_matters() {
        let mut rng = Rng::new(2);
        let p = random_params(&mut rng, 4, 3);
        let seq: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.standard_normal()).collect()).collect();
        let mut rev = seq.clone();
        rev.reverse();
        let (a, _) = lstm_forward(&p, &seq).unwrap();
        let (b, _) = lstm_forward(&p, &rev).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn input_errors() {
        let p = LstmParams::zeros(2, 3);
        assert!(lstm_forward(&p, &[]).is_err());
        assert!(lstm_forward(&p, &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let mut p = random_params(&mut rng, 3, 2);
        let seq: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.standard_normal(), rng.standard_normal()]).collect();
        let probe = [0.3, -1.2, 0.8];
        let loss = |p: &LstmParams| {
            let (h, _) = lstm_forward(p, &seq).unwrap();
            h.iter().zip(probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, steps) = lstm_forward(&p, &seq).unwrap();
        let mut grads = LstmParams::zeros(3, 2);
        lstm_backward(&p, &steps, &probe, &mut grads);
        let eps = 1e-6;
        for gi in 0..4 {
            for idx in 0..6 {
                let base = p.gates()[gi].1.input.as_slice()[idx];
                p.gates_mut()[gi].1.input.as_mut_slice()[idx] = base + eps;
                let up = loss(&p);
                p.gates_mut()[gi].1.input.as_mut_slice()[idx] = base - eps;
                let down = loss(&p);
                p.gates_mut()[gi].1.input.as_mut_slice()[idx] = base;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.gates()[gi].1.input.as_slice()[idx];
                assert!((numeric - analytic).abs() < 1e-8, "gate {gi} idx {idx}: {numeric} vs {analytic}");
            }
        }
    }
}
