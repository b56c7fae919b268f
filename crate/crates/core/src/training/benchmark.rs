use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, EvalMode, EvalReport, TrainConfig};
use crate::dataset::{Dataset, SocialSequence};
use crate::error::{Error, Result};
use crate::features::{augment, AugmentConfig, WEARER_AGE_FIELD, WEARER_GENDER_FIELD};
use crate::model::{Architecture, ClassWeights};
use crate::splits::{DaySplit, SplitSuite};
use crate::taxonomy::{NUM_DOMAINS, NUM_RELATIONS};

/// Attribute groups for the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AttributeSubset {
    /// Facial attributes plus the wearer's own info.
    Face,
    /// Body attributes plus the wearer's own info.
    Body,
    /// Activities and proximity.
    Ctx,
    All,
}

impl AttributeSubset {
    pub const ALL: [AttributeSubset; 4] = [
        AttributeSubset::Face,
        AttributeSubset::Body,
        AttributeSubset::Ctx,
        AttributeSubset::All,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AttributeSubset::Face => "FACE",
            AttributeSubset::Body => "BODY",
            AttributeSubset::Ctx => "CTX",
            AttributeSubset::All => "ALL",
        }
    }

    pub fn attributes(self) -> Vec<&'static str> {
        match self {
            AttributeSubset::Face => vec![
                "age-face",
                "gender-face",
                "facial-expression",
                "head-appearance",
                "head-orientation",
                WEARER_AGE_FIELD,
                WEARER_GENDER_FIELD,
            ],
            AttributeSubset::Body => vec!["age-body", "gender-body", "clothing", WEARER_AGE_FIELD, WEARER_GENDER_FIELD],
            AttributeSubset::Ctx => vec!["activities", "proximity"],
            AttributeSubset::All => {
                let mut all = Vec::new();
                for s in [AttributeSubset::Face, AttributeSubset::Body, AttributeSubset::Ctx] {
                    for a in s.attributes() {
                        if !all.contains(&a) {
                            all.push(a);
                        }
                    }
                }
                all
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Shared hyperparameters; the architecture field is overridden per cell.
    pub train: TrainConfig,
    /// Augmentation of each fold's training side, skipped when unset.
    pub augment: Option<AugmentConfig>,
    pub architectures: Vec<Architecture>,
    /// Attribute-group rows, trained with `subset_architecture`.
    pub subsets: Vec<AttributeSubset>,
    pub subset_architecture: Architecture,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            train: TrainConfig::default(),
            augment: None,
            architectures: Architecture::ALL.to_vec(),
            subsets: Vec::new(),
            subset_architecture: Architecture::MultiTopDown,
        }
    }
}

/// One (architecture, subset, fold) training run, evaluated on the test side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub architecture: Architecture,
    pub subset: Option<AttributeSubset>,
    pub fold: usize,
    pub reports: Vec<EvalReport>,
    pub best_val_macro_f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub label: String,
    pub architecture: Architecture,
    pub mode: EvalMode,
    pub subset: Option<AttributeSubset>,
    pub folds_ok: usize,
    pub folds: usize,
    pub mean_macro_f1: Option<f64>,
    pub mean_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub cells: Vec<BenchmarkCell>,
    pub rows: Vec<BenchmarkRow>,
}

fn arch_label(a: Architecture) -> &'static str {
    match a {
        Architecture::SingleRelation | Architecture::SingleDomain => "ST",
        Architecture::MultiIndependent => "MT-IND",
        Architecture::MultiTopDown => "MT-TD",
    }
}

impl BenchmarkTable {
    /// Fixed-width table with F1-score [%] and Acc [%] columns.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = |title: &str, rows: Vec<&BenchmarkRow>| {
            if rows.is_empty() {
                return;
            }
            let _ = writeln!(out, "{title}");
            let _ = writeln!(out, "{:<16} {:>13} {:>9} {:>7}", "model", "F1-score [%]", "Acc [%]", "folds");
            for r in rows {
                let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
                let _ = writeln!(
                    out,
                    "{:<16} {:>13} {:>9} {:>7}",
                    r.label,
                    pct(r.mean_macro_f1),
                    pct(r.mean_accuracy),
                    format!("{}/{}", r.folds_ok, r.folds)
                );
            }
            let _ = writeln!(out);
        };
        section("Relation and domain recognition", self.rows.iter().filter(|r| r.subset.is_none()).collect());
        section("Recognition by attribute group", self.rows.iter().filter(|r| r.subset.is_some()).collect());
        for c in &self.cells {
            if let Some(e) = &c.error {
                let subset = c.subset.map_or(String::new(), |s| format!(" {}", s.tag()));
                let _ = writeln!(out, "failed: {}{} fold {}: {e}", c.architecture, subset, c.fold);
            }
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Inverse-frequency weights from a training side's label counts.
pub fn class_weights_for<S: std::borrow::Borrow<SocialSequence>>(sequences: &[S]) -> ClassWeights {
    let mut domain = vec![0; NUM_DOMAINS];
    let mut relation = vec![0; NUM_RELATIONS];
    for s in sequences {
        domain[s.borrow().domain.index()] += 1;
        relation[s.borrow().relation.index()] += 1;
    }
    ClassWeights::from_counts(&domain, &relation)
}

fn project(seqs: &[&SocialSequence], columns: Option<&[usize]>) -> Vec<SocialSequence> {
    seqs.iter()
        .map(|s| {
            let mut s = (*s).clone();
            if let Some(c) = columns {
                s.frames = s.frames.select_columns(c);
            }
            s
        })
        .collect()
}

fn run_cell(
    cfg: &BenchmarkConfig,
    architecture: Architecture,
    columns: Option<&[usize]>,
    fold_index: usize,
    fold: &DaySplit,
    sequences: &[SocialSequence],
    test: &[SocialSequence],
) -> Result<(Vec<EvalReport>, Option<f64>)> {
    let (train_side, val_side) = fold.partition(sequences);
    let val_side: Vec<&SocialSequence> = val_side.into_iter().filter(|s| s.origin.is_none()).collect();
    let mut train_set = project(&train_side, columns);
    let val_set = project(&val_side, columns);
    if let Some(aug) = &cfg.augment {
        let aug = AugmentConfig {
            seed: aug.seed.wrapping_add(fold_index as u64),
            ..*aug
        };
        let extra = augment(&train_set, &aug)?;
        train_set.extend(extra);
    }
    let weights = class_weights_for(&train_set);
    let train_cfg = TrainConfig {
        architecture,
        ..cfg.train.clone()
    };
    let (model, history) = train(&train_cfg, &train_set, &val_set, &weights)?;
    let reports = EvalMode::ALL
        .into_iter()
        .filter(|m| m.supports(architecture))
        .map(|m| evaluate(&model, test, m))
        .collect::<Result<Vec<_>>>()?;
    Ok((reports, history.best().map(|r| r.val_macro_f1)))
}

/// Trains every requested (architecture, subset) on each cross-validation
/// fold of `suite`, selecting on the fold's validation side and scoring on
/// the suite's test side. Failed cells are recorded and skipped.
pub fn benchmark_suite(cfg: &BenchmarkConfig, dataset: &Dataset, suite: &SplitSuite) -> Result<BenchmarkTable> {
    suite.check_dataset(&dataset.sequences)?;
    if suite.inner.is_empty() {
        return Err(Error::InvalidInput("split suite has no cross-validation folds".into()));
    }
    let (_, test_side) = suite.outer.partition(&dataset.sequences);
    let test_side: Vec<&SocialSequence> = test_side.into_iter().filter(|s| s.origin.is_none()).collect();
    if test_side.is_empty() {
        return Err(Error::InvalidInput("split suite leaves an empty test side".into()));
    }

    let mut plan: Vec<(Architecture, Option<AttributeSubset>, Option<Vec<usize>>)> =
        cfg.architectures.iter().map(|&a| (a, None, None)).collect();
    for &s in &cfg.subsets {
        let (_, columns) = dataset.manifest.subset(&s.attributes())?;
        plan.push((cfg.subset_architecture, Some(s), Some(columns)));
    }

    let mut cells = Vec::new();
    for (arch, subset, columns) in &plan {
        let test = project(&test_side, columns.as_deref());
        for (fold, split) in suite.inner.iter().enumerate() {
            let outcome = run_cell(cfg, *arch, columns.as_deref(), fold, split, &dataset.sequences, &test);
            let (reports, best, error) = match outcome {
                Ok((r, b)) => (r, b, None),
                Err(e) => (Vec::new(), None, Some(e.to_string())),
            };
            cells.push(BenchmarkCell {
                architecture: *arch,
                subset: *subset,
                fold,
                reports,
                best_val_macro_f1: best,
                error,
            });
        }
    }

    let mut rows = Vec::new();
    let folds = suite.inner.len();
    let mut push_row = |label: String, arch: Architecture, mode: EvalMode, subset: Option<AttributeSubset>| {
        let reports: Vec<&EvalReport> = cells
            .iter()
            .filter(|c| c.architecture == arch && c.subset == subset)
            .filter_map(|c| c.reports.iter().find(|r| r.mode == mode))
            .collect();
        let mean = |f: fn(&EvalReport) -> f64| {
            (!reports.is_empty()).then(|| reports.iter().map(|r| f(r)).sum::<f64>() / reports.len() as f64)
        };
        rows.push(BenchmarkRow {
            label,
            architecture: arch,
            mode,
            subset,
            folds_ok: reports.len(),
            folds,
            mean_macro_f1: mean(|r| r.macro_f1),
            mean_accuracy: mean(|r| r.accuracy),
        });
    };
    for mode in EvalMode::ALL {
        for &arch in &cfg.architectures {
            if mode.supports(arch) {
                push_row(format!("{}-{}", mode.prefix(), arch_label(arch)), arch, mode, None);
            }
        }
    }
    for mode in [EvalMode::RelationDirect, EvalMode::DomainDirect] {
        if !mode.supports(cfg.subset_architecture) {
            continue;
        }
        for &s in &cfg.subsets {
            push_row(format!("{}-{}", mode.prefix(), s.tag()), cfg.subset_architecture, mode, Some(s));
        }
    }
    Ok(BenchmarkTable { cells, rows })
}
