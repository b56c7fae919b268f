//! Optimization, the training loop, metrics and the benchmark grid.

mod adam;
mod benchmark;
mod metrics;

use std::borrow::Borrow;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use benchmark::{benchmark_suite, class_weights_for, AttributeSubset, BenchmarkCell, BenchmarkConfig, BenchmarkRow, BenchmarkTable};
pub use metrics::{
    accuracy, confusion_matrix, evaluate, macro_f1, per_class_scores, predict_sequence, report_from_predictions,
    ClassScore, Confusion, EvalMode, EvalReport, Prediction,
};

use crate::dataset::{Provenance, SocialSequence};
use crate::error::{Error, Result};
use crate::model::{Architecture, ClassWeights, Dropout, Labels, ModelParams, ModelShape, Parameters};
use crate::numerics::Rng;

const INIT_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub hidden: usize,
    /// Width of the ReLU layer in front of the LSTM; defaults to `hidden`.
    pub fc_width: Option<usize>,
    pub alpha0: f64,
    pub dropout: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub decay_period: usize,
    pub decay_factor: f64,
    /// Sequences per Adam step; full batch when unset.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: Architecture::MultiTopDown,
            hidden: 128,
            fc_width: None,
            alpha0: 2e-3,
            dropout: 0.3,
            lambda: 1e-3,
            iterations: 150,
            decay_period: 50,
            decay_factor: 0.5,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("train config: {what}")));
        if self.hidden == 0 || self.fc_width == Some(0) {
            return bad("hidden and fc_width must be >= 1");
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return bad("alpha0 must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if self.iterations == 0 || self.decay_period == 0 {
            return bad("iterations and decay_period must be >= 1");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must be in (0, 1]");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    pub fn shape(&self, input_width: usize) -> ModelShape {
        ModelShape {
            input_width,
            fc_width: self.fc_width.unwrap_or(self.hidden),
            hidden: self.hidden,
        }
    }
}

/// Step decay: `alpha0 · decay_factor^⌊iter / decay_period⌋`.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    let drops = (iter / cfg.decay_period.max(1)) as i32;
    cfg.alpha0 * cfg.decay_factor.powi(drops)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean data loss under dropout plus the L2 penalty, before the update.
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub architecture: Architecture,
    pub selection_mode: EvalMode,
    pub records: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct HistoryHeader {
    provenance: Provenance,
    architecture: Architecture,
    selection_mode: EvalMode,
    best_epoch: Option<usize>,
    best_val_macro_f1: Option<f64>,
}

impl History {
    /// Earliest epoch with the highest validation macro-F1.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_macro_f1 >= r.val_macro_f1 => Some(b),
                _ => Some(r),
            })
    }

    /// A header line followed by one JSON record per epoch.
    pub fn write_jsonl(&self, provenance: &Provenance, mut out: impl Write) -> Result<()> {
        let header = HistoryHeader {
            provenance: provenance.clone(),
            architecture: self.architecture,
            selection_mode: self.selection_mode,
            best_epoch: self.best().map(|r| r.epoch),
            best_val_macro_f1: self.best().map(|r| r.val_macro_f1),
        };
        let io = |e| Error::io("history", e);
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<(Provenance, History)> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::format("history", "empty file"))?
            .map_err(|e| Error::io("history", e))?;
        let header: HistoryHeader =
            serde_json::from_str(&first).map_err(|e| Error::format("history", e.to_string()))?;
        let mut records = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io("history", e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::format("history", e.to_string()))?);
        }
        Ok((
            header.provenance,
            History {
                architecture: header.architecture,
                selection_mode: header.selection_mode,
                records,
            },
        ))
    }
}

fn labels_of(s: &SocialSequence) -> Labels {
    Labels {
        domain: s.domain.index(),
        relation: s.relation.index(),
    }
}

/// Trains `cfg.architecture` and returns the snapshot with the best
/// validation macro-F1 (earliest epoch on ties) together with the history.
pub fn train<S: Borrow<SocialSequence>>(
    cfg: &TrainConfig,
    train_set: &[S],
    val_set: &[S],
    weights: &ClassWeights,
) -> Result<(ModelParams, History)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput(format!(
            "training needs nonempty splits (train {}, validation {})",
            train_set.len(),
            val_set.len()
        )));
    }
    if weights.domain.len() != crate::taxonomy::NUM_DOMAINS || weights.relation.len() != crate::taxonomy::NUM_RELATIONS {
        return Err(Error::Shape("class weights do not cover the taxonomy".into()));
    }
    let width = train_set[0].borrow().frames.cols();
    if let Some(s) = train_set.iter().chain(val_set).map(Borrow::borrow).find(|s| s.frames.cols() != width) {
        return Err(Error::Width {
            expected: width,
            actual: s.frames.cols(),
            detail: format!("sequence {}", s.id),
        });
    }

    let root = Rng::new(cfg.seed);
    let mut params = ModelParams::init(cfg.architecture, cfg.shape(width), &mut root.split(INIT_STREAM));
    let mut state = AdamState::new(&params);
    let dropout_root = root.split(DROPOUT_STREAM);
    let shuffle_root = root.split(SHUFFLE_STREAM);
    let selection_mode = EvalMode::selection(cfg.architecture);
    let mut history = History {
        architecture: cfg.architecture,
        selection_mode,
        records: Vec::with_capacity(cfg.iterations),
    };
    let mut best: Option<(f64, ModelParams)> = None;

    let n = train_set.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    for epoch in 0..cfg.iterations {
        let lr = lr_schedule(epoch, cfg);
        let mut order: Vec<usize> = (0..n).collect();
        if batch < n {
            shuffle_root.split(epoch as u64).shuffle(&mut order);
        }
        let epoch_dropout = dropout_root.split(epoch as u64);
        let mut loss_sum = 0.0;
        let mut penalty_sum = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads = params.zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let s = train_set[i].borrow();
                let dropout = if cfg.dropout > 0.0 {
                    Dropout::Sample {
                        rate: cfg.dropout,
                        rng: &mut epoch_dropout.split(i as u64),
                    }
                } else {
                    Dropout::Off
                };
                let trace = params.forward(&s.frames, dropout)?;
                let finite = |p: &Option<Vec<f64>>| p.iter().flatten().all(|v| v.is_finite());
                if !finite(&trace.outputs.domain) || !finite(&trace.outputs.relation) {
                    return Err(Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                        history: Box::new(history),
                    });
                }
                let labels = labels_of(s);
                batch_loss += params.data_loss(&trace.outputs, labels, weights)?;
                params.accumulate_data_gradient(&s.frames, labels, weights, &trace, scale, &mut grads)?;
            }
            loss_sum += batch_loss;
            penalty_sum += params.l2_penalty(cfg.lambda) * chunk.len() as f64;
            if !(batch_loss.is_finite()) {
                break;
            }
            params.add_l2_gradient(cfg.lambda, &mut grads);
            adam_step(&mut params, &grads, &mut state, lr)?;
        }
        let train_loss = (loss_sum + penalty_sum) / n as f64;
        let params_finite = params.tensors().iter().all(|t| t.values.iter().all(|v| v.is_finite()));
        if !train_loss.is_finite() || !params_finite {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
                history: Box::new(history),
            });
        }
        let report = evaluate(&params, val_set, selection_mode)?;
        history.records.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            val_accuracy: report.accuracy,
            val_macro_f1: report.macro_f1,
        });
        if best.as_ref().is_none_or(|(f1, _)| report.macro_f1 > *f1) {
            best = Some((report.macro_f1, params.clone()));
        }
    }
    let (_, params) = best.expect("at least one iteration");
    Ok((params, history))
}
