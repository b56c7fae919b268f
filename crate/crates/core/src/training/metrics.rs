use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::SocialSequence;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::numerics::argmax;
use crate::taxonomy::{infer_domain_distribution, Domain, Relation, NUM_DOMAINS, NUM_RELATIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    RelationDirect,
    DomainDirect,
    /// Most likely domain after summing relation probabilities per domain.
    DomainInferred,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::RelationDirect, EvalMode::DomainDirect, EvalMode::DomainInferred];

    pub fn tag(self) -> &'static str {
        match self {
            EvalMode::RelationDirect => "relation-direct",
            EvalMode::DomainDirect => "domain-direct",
            EvalMode::DomainInferred => "domain-inferred",
        }
    }

    /// Row prefix in result tables.
    pub fn prefix(self) -> &'static str {
        match self {
            EvalMode::RelationDirect => "REL",
            EvalMode::DomainDirect => "DOM",
            EvalMode::DomainInferred => "DOM-INF",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            EvalMode::RelationDirect => NUM_RELATIONS,
            _ => NUM_DOMAINS,
        }
    }

    pub fn supports(self, arch: Architecture) -> bool {
        match self {
            EvalMode::DomainDirect => arch.has_domain_head(),
            _ => arch.has_relation_head(),
        }
    }

    /// The mode model selection optimizes for an architecture.
    pub fn selection(arch: Architecture) -> EvalMode {
        if arch.has_relation_head() {
            EvalMode::RelationDirect
        } else {
            EvalMode::DomainDirect
        }
    }

    fn class_name(self, c: usize) -> String {
        match self {
            EvalMode::RelationDirect => Relation::from_index(c).map(|r| r.name().to_string()),
            _ => Domain::from_index(c).map(|d| d.name().to_string()),
        }
        .unwrap_or_else(|| c.to_string())
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown evaluation mode {s:?}")))
    }
}

/// `confusion[truth][predicted]`.
pub type Confusion = Vec<Vec<u64>>;

pub fn confusion_matrix(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Confusion {
    let mut m = vec![vec![0; classes]; classes];
    for (truth, pred) in pairs {
        m[truth][pred] += 1;
    }
    m
}

/// Trace over total; 0 for an empty matrix.
pub fn accuracy(confusion: &[Vec<u64>]) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let hits: u64 = (0..confusion.len()).map(|c| confusion[c][c]).sum();
    hits as f64 / total as f64
}

/// (precision, recall, F1) per class. Any ratio with a zero denominator is 0.
pub fn per_class_scores(confusion: &[Vec<u64>]) -> Vec<(f64, f64, f64)> {
    let c = confusion.len();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let fn_: u64 = confusion[k].iter().sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|r| confusion[r][k]).sum::<u64>() - tp;
            (ratio(tp, tp + fp), ratio(tp, tp + fn_), ratio(2 * tp, 2 * tp + fp + fn_))
        })
        .collect()
}

/// Unweighted mean of per-class F1 over every class, absent ones included.
pub fn macro_f1(confusion: &[Vec<u64>]) -> f64 {
    if confusion.is_empty() {
        return 0.0;
    }
    let scores = per_class_scores(confusion);
    scores.iter().map(|s| s.2).sum::<f64>() / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub architecture: Architecture,
    pub samples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub classes: Vec<ClassScore>,
    pub confusion: Confusion,
}

impl EvalReport {
    pub fn from_confusion(mode: EvalMode, architecture: Architecture, confusion: Confusion) -> Self {
        let classes = per_class_scores(&confusion)
            .into_iter()
            .enumerate()
            .map(|(c, (precision, recall, f1))| ClassScore {
                label: mode.class_name(c),
                precision,
                recall,
                f1,
                support: confusion[c].iter().sum(),
            })
            .collect();
        EvalReport {
            mode,
            architecture,
            samples: confusion.iter().flatten().sum::<u64>() as usize,
            accuracy: accuracy(&confusion),
            macro_f1: macro_f1(&confusion),
            classes,
            confusion,
        }
    }
}

/// Everything the model says about one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub relation_probs: Option<Vec<f64>>,
    pub domain_probs: Option<Vec<f64>>,
    /// Relation probabilities summed per domain.
    pub inferred_domain_probs: Option<Vec<f64>>,
    pub relation: Option<Relation>,
    pub domain: Option<Domain>,
    pub inferred_domain: Option<Domain>,
}

impl Prediction {
    pub fn class_for(&self, mode: EvalMode) -> Option<usize> {
        match mode {
            EvalMode::RelationDirect => self.relation.map(Relation::index),
            EvalMode::DomainDirect => self.domain.map(Domain::index),
            EvalMode::DomainInferred => self.inferred_domain.map(Domain::index),
        }
    }
}

pub fn predict_sequence(model: &ModelParams, seq: &SocialSequence) -> Result<Prediction> {
    let out = model.predict(&seq.frames)?;
    let inferred = out
        .relation
        .as_ref()
        .map(|r| infer_domain_distribution(r).map(|d| d.to_vec()))
        .transpose()?;
    let pick_relation = |p: &Vec<f64>| Relation::from_index(argmax(p)).expect("relation head has 9 outputs");
    let pick_domain = |p: &Vec<f64>| Domain::from_index(argmax(p)).expect("domain distribution has 5 entries");
    Ok(Prediction {
        id: seq.id.clone(),
        relation: out.relation.as_ref().map(pick_relation),
        domain: out.domain.as_ref().map(pick_domain),
        inferred_domain: inferred.as_ref().map(pick_domain),
        relation_probs: out.relation,
        domain_probs: out.domain,
        inferred_domain_probs: inferred,
    })
}

fn truth_for(seq: &SocialSequence, mode: EvalMode) -> usize {
    match mode {
        EvalMode::RelationDirect => seq.relation.index(),
        _ => seq.domain.index(),
    }
}

pub fn report_from_predictions<S: Borrow<SocialSequence>>(
    architecture: Architecture,
    sequences: &[S],
    predictions: &[Prediction],
    mode: EvalMode,
) -> Result<EvalReport> {
    if !mode.supports(architecture) {
        return Err(Error::InvalidInput(format!(
            "{mode} evaluation needs a {} head, which {architecture} lacks",
            if mode == EvalMode::DomainDirect { "domain" } else { "relation" }
        )));
    }
    if sequences.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty dataset".into()));
    }
    let pairs = sequences
        .iter()
        .zip(predictions)
        .map(|(s, p)| {
            let pred = p.class_for(mode).expect("mode supported by architecture");
            (truth_for(s.borrow(), mode), pred)
        })
        .collect::<Vec<_>>();
    Ok(EvalReport::from_confusion(mode, architecture, confusion_matrix(mode.num_classes(), pairs)))
}

pub fn evaluate<S: Borrow<SocialSequence>>(model: &ModelParams, sequences: &[S], mode: EvalMode) -> Result<EvalReport> {
    if !mode.supports(model.architecture) || sequences.is_empty() {
        return report_from_predictions(model.architecture, sequences, &[], mode);
    }
    let predictions = sequences
        .iter()
        .map(|s| predict_sequence(model, s.borrow()))
        .collect::<Result<Vec<_>>>()?;
    report_from_predictions(model.architecture, sequences, &predictions, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive_macro_f1(m: &[Vec<u64>]) -> f64 {
        let c = m.len();
        let mut sum = 0.0;
        for k in 0..c {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for truth in 0..c {
                for pred in 0..c {
                    let n = m[truth][pred];
                    if truth == k && pred == k {
                        tp += n;
                    } else if pred == k {
                        fp += n;
                    } else if truth == k {
                        fn_ += n;
                    }
                }
            }
            let den = 2 * tp + fp + fn_;
            sum += if den == 0 { 0.0 } else { 2.0 * tp as f64 / den as f64 };
        }
        sum / c as f64
    }

    #[test]
    fn hand_case() {
        let m = vec![vec![8, 2], vec![3, 7]];
        assert_eq!(accuracy(&m), 0.75);
        let s = per_class_scores(&m);
        assert!((s[0].2 - 16.0 / 21.0).abs() < 1e-12);
        assert!((s[1].2 - 14.0 / 19.0).abs() < 1e-12);
        assert!((macro_f1(&m) - 0.7494).abs() < 1e-4);
    }

    #[test]
    fn diagonal_and_absent_classes() {
        let m = vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]];
        assert_eq!(macro_f1(&m), 1.0);
        let with_absent = vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 0]];
        assert!((macro_f1(&with_absent) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = Rng::new(12);
        for _ in 0..1000 {
            let c = 2 + rng.below(8);
            let m: Confusion = (0..c).map(|_| (0..c).map(|_| rng.below(6) as u64).collect()).collect();
            assert!((macro_f1(&m) - naive_macro_f1(&m)).abs() < 1e-12);
            let rows: u64 = m.iter().map(|r| r.iter().sum::<u64>()).sum();
            let diag: u64 = (0..c).map(|k| m[k][k]).sum();
            let acc = if rows == 0 { 0.0 } else { diag as f64 / rows as f64 };
            assert_eq!(accuracy(&m), acc);
        }
    }

    #[test]
    fn mode_tags_round_trip() {
        for m in EvalMode::ALL {
            assert_eq!(m.tag().parse::<EvalMode>().unwrap(), m);
        }
        assert!(!EvalMode::DomainDirect.supports(Architecture::SingleRelation));
        assert!(EvalMode::DomainInferred.supports(Architecture::SingleRelation));
        assert!(!EvalMode::DomainInferred.supports(Architecture::SingleDomain));
    }
}
