//! LSTM sequence classifier.
//!
//! Every topology shares the same trunk: a per-frame fully connected layer
//! with ReLU, an LSTM whose final hidden state summarizes the sequence, and
//! inverted dropout on that state. The heads differ:
//!
//! * `ST-REL` / `ST-DOM`: one softmax head over relations or domains.
//! * `MT-IND`: a domain head and a relation head, both reading the hidden
//!   state.
//! * `MT-TD`: the relation head reads the hidden state concatenated with the
//!   domain head's softmax output, so relation loss also trains the domain
//!   head.

mod io;
mod loss;
mod lstm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use io::SavedModel;
pub use loss::{class_weights, weighted_cross_entropy, ClassWeights};
pub use lstm::{lstm_forward, Gate, LstmParams, StepTrace};

use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, Matrix, Rng};
use crate::taxonomy::{NUM_DOMAINS, NUM_RELATIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    SingleRelation,
    SingleDomain,
    MultiIndependent,
    MultiTopDown,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::SingleRelation,
        Architecture::SingleDomain,
        Architecture::MultiIndependent,
        Architecture::MultiTopDown,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::SingleRelation => "ST-REL",
            Architecture::SingleDomain => "ST-DOM",
            Architecture::MultiIndependent => "MT-IND",
            Architecture::MultiTopDown => "MT-TD",
        }
    }

    pub fn has_domain_head(self) -> bool {
        !matches!(self, Architecture::SingleRelation)
    }

    pub fn has_relation_head(self) -> bool {
        !matches!(self, Architecture::SingleDomain)
    }

    pub fn is_multi_task(self) -> bool {
        matches!(self, Architecture::MultiIndependent | Architecture::MultiTopDown)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown architecture {s:?}")))
    }
}

impl Serialize for Architecture {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Fully connected layer: `y = W x + b`, `W` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Dense {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.weight.matvec_add(x, &mut y);
        y
    }

    fn accumulate(&mut self, dy: &[f64], x: &[f64]) {
        self.weight.add_outer(dy, x);
        self.bias.iter_mut().zip(dy).for_each(|(b, d)| *b += d);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_width: usize,
    /// Width of the per-frame FC layer feeding the LSTM.
    pub fc_width: usize,
    pub hidden: usize,
}

/// Borrowed view of one parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub values: &'a [f64],
    /// Weight matrices carry the L2 penalty; biases do not.
    pub is_weight: bool,
}

pub struct TensorMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub is_weight: bool,
}

/// Anything Adam can update: an ordered list of named tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.values.iter().copied()).collect()
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub input_fc: Dense,
    pub lstm: LstmParams,
    pub domain_head: Option<Dense>,
    pub relation_head: Option<Dense>,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

/// Which classes a sequence belongs to, as taxonomy indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Labels {
    pub domain: usize,
    pub relation: usize,
}

/// Softmax outputs of whichever heads the architecture has.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub domain: Option<Vec<f64>>,
    pub relation: Option<Vec<f64>>,
}

/// How the dropout site behaves during a forward pass.
pub enum Dropout<'a> {
    /// Evaluation mode: identity.
    Off,
    /// Training mode: draw a fresh inverted-dropout mask.
    Sample { rate: f64, rng: &'a mut Rng },
    /// Replay a given mask (entries 0 or 1/(1-rate)).
    Mask(&'a [f64]),
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub steps: Vec<StepTrace>,
    /// ReLU-input of the FC layer per step.
    pub fc_pre: Vec<Vec<f64>>,
    pub mask: Option<Vec<f64>>,
    /// Final hidden state after dropout.
    pub dropped: Vec<f64>,
    pub outputs: HeadOutputs,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn glorot(rng: &mut Rng, m: &mut Matrix) {
    let limit = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
    for v in m.as_mut_slice() {
        *v = rng.uniform_range(-limit, limit);
    }
}

impl ModelParams {
    pub fn zeros(architecture: Architecture, shape: ModelShape) -> Self {
        let relation_in = match architecture {
            Architecture::MultiTopDown => shape.hidden + NUM_DOMAINS,
            _ => shape.hidden,
        };
        ModelParams {
            architecture,
            input_fc: Dense::zeros(shape.fc_width, shape.input_width),
            lstm: LstmParams::zeros(shape.hidden, shape.fc_width),
            domain_head: architecture
                .has_domain_head()
                .then(|| Dense::zeros(NUM_DOMAINS, shape.hidden)),
            relation_head: architecture
                .has_relation_head()
                .then(|| Dense::zeros(NUM_RELATIONS, relation_in)),
        }
    }

    /// Glorot-uniform weights, zero biases, forget-gate bias of one.
    pub fn init(architecture: Architecture, shape: ModelShape, rng: &mut Rng) -> Self {
        let mut p = ModelParams::zeros(architecture, shape);
        glorot(rng, &mut p.input_fc.weight);
        for (_, g) in p.lstm.gates_mut() {
            glorot(rng, &mut g.input);
            glorot(rng, &mut g.recurrent);
        }
        p.lstm.forget_gate.bias.iter_mut().for_each(|b| *b = 1.0);
        if let Some(d) = p.domain_head.as_mut() {
            glorot(rng, &mut d.weight);
        }
        if let Some(r) = p.relation_head.as_mut() {
            glorot(rng, &mut r.weight);
        }
        p
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_width: self.input_fc.weight.cols(),
            fc_width: self.input_fc.weight.rows(),
            hidden: self.lstm.hidden(),
        }
    }

    pub fn zeros_like(&self) -> Gradients {
        ModelParams::zeros(self.architecture, self.shape())
    }

    /// Checks that heads and widths match what the architecture tag implies.
    pub fn validate(&self) -> Result<()> {
        let shape = self.shape();
        let problem = |m: String| Err(Error::Shape(format!("{}: {m}", self.architecture)));
        if self.lstm.input_width() != shape.fc_width {
            return problem("LSTM input width differs from FC width".into());
        }
        if self.domain_head.is_some() != self.architecture.has_domain_head()
            || self.relation_head.is_some() != self.architecture.has_relation_head()
        {
            return problem("head set does not match architecture".into());
        }
        if let Some(d) = &self.domain_head {
            if d.weight.shape() != (NUM_DOMAINS, shape.hidden) {
                return problem(format!("domain head is {:?}", d.weight.shape()));
            }
        }
        if let Some(r) = &self.relation_head {
            let want = match self.architecture {
                Architecture::MultiTopDown => shape.hidden + NUM_DOMAINS,
                _ => shape.hidden,
            };
            if r.weight.shape() != (NUM_RELATIONS, want) {
                return problem(format!("relation head is {:?}, expected input {want}", r.weight.shape()));
            }
        }
        Ok(())
    }

    /// Full forward pass over one sequence (one frame per row).
    pub fn forward(&self, seq: &Matrix, dropout: Dropout<'_>) -> Result<ForwardTrace> {
        let width = self.input_fc.weight.cols();
        if seq.cols() != width {
            return Err(Error::Shape(format!(
                "model expects frames of width {width}, got {}",
                seq.cols()
            )));
        }
        let mut fc_pre = Vec::with_capacity(seq.rows());
        let mut xs = Vec::with_capacity(seq.rows());
        for frame in seq.iter_rows() {
            let pre = self.input_fc.forward(frame);
            xs.push(pre.iter().map(|v| v.max(0.0)).collect());
            fc_pre.push(pre);
        }
        let (last, steps) = lstm_forward(&self.lstm, &xs)?;

        let hidden = last.len();
        let mask = match dropout {
            Dropout::Off => None,
            Dropout::Mask(m) => {
                if m.len() != hidden {
                    return Err(Error::Shape(format!("dropout mask has {} entries, expected {hidden}", m.len())));
                }
                Some(m.to_vec())
            }
            Dropout::Sample { rate, rng } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidInput(format!("dropout rate {rate} outside [0, 1)")));
                }
                let keep = 1.0 / (1.0 - rate);
                Some((0..hidden).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect())
            }
        };
        let dropped: Vec<f64> = match &mask {
            Some(m) => last.iter().zip(m).map(|(h, k)| h * k).collect(),
            None => last,
        };

        let domain = self.domain_head.as_ref().map(|d| {
            let mut z = d.forward(&dropped);
            softmax_in_place(&mut z);
            z
        });
        let relation = self.relation_head.as_ref().map(|r| {
            let mut z = match (&self.architecture, &domain) {
                (Architecture::MultiTopDown, Some(p)) => {
                    let joined: Vec<f64> = dropped.iter().chain(p.iter()).copied().collect();
                    r.forward(&joined)
                }
                _ => r.forward(&dropped),
            };
            softmax_in_place(&mut z);
            z
        });
        Ok(ForwardTrace {
            steps,
            fc_pre,
            mask,
            dropped,
            outputs: HeadOutputs { domain, relation },
        })
    }

    /// Evaluation-mode head outputs.
    pub fn predict(&self, seq: &Matrix) -> Result<HeadOutputs> {
        Ok(self.forward(seq, Dropout::Off)?.outputs)
    }

    /// `λ/2 Σ ‖W‖²` over weight matrices only.
    pub fn l2_penalty(&self, l2: f64) -> f64 {
        0.5 * l2
            * self
                .tensors()
                .iter()
                .filter(|t| t.is_weight)
                .map(|t| t.values.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
    }

    /// Class-weighted cross-entropy summed over the architecture's heads
    /// (equal task weights), without regularization.
    pub fn data_loss(&self, outputs: &HeadOutputs, labels: Labels, weights: &ClassWeights) -> Result<f64> {
        let mut total = 0.0;
        if let Some(p) = &outputs.domain {
            total += weighted_cross_entropy(p, labels.domain, &weights.domain)?;
        }
        if let Some(p) = &outputs.relation {
            total += weighted_cross_entropy(p, labels.relation, &weights.relation)?;
        }
        Ok(total)
    }

    /// Data loss plus the L2 penalty.
    pub fn joint_loss(&self, outputs: &HeadOutputs, labels: Labels, weights: &ClassWeights, l2: f64) -> Result<f64> {
        Ok(self.data_loss(outputs, labels, weights)? + self.l2_penalty(l2))
    }

    /// Exact gradient of [`joint_loss`](Self::joint_loss) for one sequence.
    pub fn backward(
        &self,
        seq: &Matrix,
        labels: Labels,
        weights: &ClassWeights,
        l2: f64,
        trace: &ForwardTrace,
    ) -> Result<Gradients> {
        let mut grads = self.zeros_like();
        self.accumulate_data_gradient(seq, labels, weights, trace, 1.0, &mut grads)?;
        self.add_l2_gradient(l2, &mut grads);
        Ok(grads)
    }

    pub fn add_l2_gradient(&self, l2: f64, grads: &mut Gradients) {
        if l2 == 0.0 {
            return;
        }
        for (p, g) in self.tensors().into_iter().zip(grads.tensors_mut()) {
            if p.is_weight {
                g.values.iter_mut().zip(p.values).for_each(|(g, w)| *g += l2 * w);
            }
        }
    }

    /// Adds `scale · ∂(data loss)/∂θ` into `grads`.
    pub(crate) fn accumulate_data_gradient(
        &self,
        seq: &Matrix,
        labels: Labels,
        weights: &ClassWeights,
        trace: &ForwardTrace,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        if trace.len() != seq.rows() || trace.fc_pre.len() != seq.rows() {
            return Err(Error::Shape(format!(
                "trace covers {} steps, sequence has {}",
                trace.len(),
                seq.rows()
            )));
        }
        if grads.architecture != self.architecture || grads.shape() != self.shape() {
            return Err(Error::Shape("gradient buffer does not match model".into()));
        }
        let hidden = self.lstm.hidden();
        let mut d_dropped = vec![0.0; hidden];

        let d_domain_logits = match (&trace.outputs.domain, &weights.domain) {
            (Some(p), w) => Some(loss::logit_gradient(p, labels.domain, w, scale)?),
            (None, _) => None,
        };
        let mut d_domain_logits = d_domain_logits;

        if let (Some(p), Some(head)) = (&trace.outputs.relation, &self.relation_head) {
            let g = loss::logit_gradient(p, labels.relation, &weights.relation, scale)?;
            let mut d_input = vec![0.0; head.weight.cols()];
            head.weight.matvec_transposed_add(&g, &mut d_input);
            let grad_head = grads.relation_head.as_mut().expect("validated head set");
            match (&self.architecture, &trace.outputs.domain) {
                (Architecture::MultiTopDown, Some(pd)) => {
                    let joined: Vec<f64> = trace.dropped.iter().chain(pd.iter()).copied().collect();
                    grad_head.accumulate(&g, &joined);
                    // back through the domain softmax: Jᵀ v = p ⊙ (v − p·v)
                    let v = &d_input[hidden..];
                    let pv: f64 = pd.iter().zip(v).map(|(a, b)| a * b).sum();
                    let dz = d_domain_logits.as_mut().expect("MT-TD has a domain head");
                    for ((z, p), vi) in dz.iter_mut().zip(pd).zip(v) {
                        *z += p * (vi - pv);
                    }
                }
                _ => grad_head.accumulate(&g, &trace.dropped),
            }
            d_dropped.iter_mut().zip(&d_input[..hidden]).for_each(|(a, b)| *a += b);
        }

        if let (Some(g), Some(head)) = (&d_domain_logits, &self.domain_head) {
            grads.domain_head.as_mut().expect("validated head set").accumulate(g, &trace.dropped);
            head.weight.matvec_transposed_add(g, &mut d_dropped);
        }

        if let Some(m) = &trace.mask {
            d_dropped.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }

        let dx = lstm::lstm_backward(&self.lstm, &trace.steps, &d_dropped, &mut grads.lstm);
        for ((frame, pre), dx) in seq.iter_rows().zip(&trace.fc_pre).zip(&dx) {
            let d_pre: Vec<f64> = dx.iter().zip(pre).map(|(d, p)| if *p > 0.0 { *d } else { 0.0 }).collect();
            grads.input_fc.accumulate(&d_pre, frame);
        }
        Ok(())
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![
            TensorRef {
                name: "input_fc.weight".into(),
                values: self.input_fc.weight.as_slice(),
                is_weight: true,
            },
            TensorRef {
                name: "input_fc.bias".into(),
                values: &self.input_fc.bias,
                is_weight: false,
            },
        ];
        for (gate, g) in self.lstm.gates() {
            out.push(TensorRef {
                name: format!("lstm.{gate}.input"),
                values: g.input.as_slice(),
                is_weight: true,
            });
            out.push(TensorRef {
                name: format!("lstm.{gate}.recurrent"),
                values: g.recurrent.as_slice(),
                is_weight: true,
            });
            out.push(TensorRef {
                name: format!("lstm.{gate}.bias"),
                values: &g.bias,
                is_weight: false,
            });
        }
        for (name, head) in [("domain_head", &self.domain_head), ("relation_head", &self.relation_head)] {
            if let Some(h) = head {
                out.push(TensorRef {
                    name: format!("{name}.weight"),
                    values: h.weight.as_slice(),
                    is_weight: true,
                });
                out.push(TensorRef {
                    name: format!("{name}.bias"),
                    values: &h.bias,
                    is_weight: false,
                });
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = vec![
            TensorMut {
                name: "input_fc.weight".into(),
                values: self.input_fc.weight.as_mut_slice(),
                is_weight: true,
            },
            TensorMut {
                name: "input_fc.bias".into(),
                values: &mut self.input_fc.bias,
                is_weight: false,
            },
        ];
        for (gate, g) in self.lstm.gates_mut() {
            out.push(TensorMut {
                name: format!("lstm.{gate}.input"),
                values: g.input.as_mut_slice(),
                is_weight: true,
            });
            out.push(TensorMut {
                name: format!("lstm.{gate}.recurrent"),
                values: g.recurrent.as_mut_slice(),
                is_weight: true,
            });
            out.push(TensorMut {
                name: format!("lstm.{gate}.bias"),
                values: &mut g.bias,
                is_weight: false,
            });
        }
        for (name, head) in [("domain_head", &mut self.domain_head), ("relation_head", &mut self.relation_head)] {
            if let Some(h) = head {
                out.push(TensorMut {
                    name: format!("{name}.weight"),
                    values: h.weight.as_mut_slice(),
                    is_weight: true,
                });
                out.push(TensorMut {
                    name: format!("{name}.bias"),
                    values: &mut h.bias,
                    is_weight: false,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
