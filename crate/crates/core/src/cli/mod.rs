//! The `socrel` command line.
//!
//! Settings come from an optional TOML [`RunConfig`] plus flags; flags win.
//! The effective config is hashed, and every artifact records that hash,
//! the seed and the toolkit version. Exit codes: 0 success, 2 invalid input
//! or configuration, 1 runtime failure.

mod config;
pub mod ingest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{BenchmarkSection, RunConfig};

use crate::dataset::{Dataset, Provenance, SocialSequence};
use crate::error::{Error, Result};
use crate::features::{augment, LayoutManifest};
use crate::model::{Architecture, SavedModel};
use crate::splits::{select_splits, SplitSuite};
use crate::synth::{synth_dataset, synth_raw_corpus};
use crate::training::{
    benchmark_suite, class_weights_for, evaluate, predict_sequence, train, AttributeSubset, EvalMode, EvalReport,
};

#[derive(Debug, Parser)]
#[command(name = "socrel", version, about = "Social relation recognition from attribute sequences")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run config; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sets every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub fc_width: Option<usize>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub decay_period: Option<usize>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SplitFlags {
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct AugmentFlags {
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub multiplier: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (dataset file and optionally raw CSVs).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Also write raw attribute CSVs for `ingest` into this directory.
        #[arg(long)]
        raw_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        raw_width: usize,
        #[arg(long)]
        sequences_per_relation: Option<usize>,
        #[arg(long)]
        domain_signal: Option<f64>,
        #[arg(long)]
        relation_signal: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Quantize, compress and assemble raw attribute CSVs into a dataset.
    Ingest {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        frames_dir: PathBuf,
        /// Layout manifest text file; the standard 459-wide layout if unset.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the fitted compressors (default `<out>.compressors.json`).
        #[arg(long)]
        compressors: Option<PathBuf>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Select the test split and cross-validation folds.
    Split {
        #[command(flatten)]
        flags: SplitFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add noisy copies along principal axes.
    Augment {
        #[command(flatten)]
        flags: AugmentFlags,
        #[arg(long)]
        data: PathBuf,
        /// Only augment the train+validation pool of this split suite.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on one cross-validation fold.
    Train {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Output directory for model.bin, history.jsonl and config.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        splits: Option<PathBuf>,
        /// Evaluate on this fold's sides instead of the test split.
        #[arg(long)]
        fold: Option<usize>,
        /// train, val or test; default val with --fold, test otherwise.
        #[arg(long)]
        side: Option<Side>,
        /// One mode; every mode the architecture supports if unset.
        #[arg(long)]
        mode: Option<EvalMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-sequence probabilities as JSON lines.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every architecture on every fold and tabulate test results.
    Benchmark {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        /// Comma-separated architecture tags.
        #[arg(long, value_delimiter = ',')]
        architectures: Option<Vec<Architecture>>,
        /// Comma-separated attribute groups (FACE, BODY, CTX, ALL).
        #[arg(long, value_delimiter = ',')]
        subsets: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Lossless JSON-lines dump of a dataset.
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Side {
    Train,
    Val,
    Test,
}

/// Parses `args` and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let inv = match Cli::try_parse_from(args) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&inv.common, inv.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn apply_train(cfg: &mut RunConfig, f: &TrainFlags) {
    let t = &mut cfg.train;
    if let Some(v) = f.arch {
        t.architecture = v;
    }
    if let Some(v) = f.hidden {
        t.hidden = v;
    }
    if f.fc_width.is_some() {
        t.fc_width = f.fc_width;
    }
    if let Some(v) = f.alpha0 {
        t.alpha0 = v;
    }
    if let Some(v) = f.dropout {
        t.dropout = v;
    }
    if let Some(v) = f.lambda {
        t.lambda = v;
    }
    if let Some(v) = f.iterations {
        t.iterations = v;
    }
    if let Some(v) = f.decay_period {
        t.decay_period = v;
    }
    if let Some(v) = f.decay_factor {
        t.decay_factor = v;
    }
    if f.batch_size.is_some() {
        t.batch_size = f.batch_size;
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Train and validation sequences of fold `fold`. Validation keeps only
/// original records.
pub fn fold_sets<'a>(
    dataset: &'a Dataset,
    suite: &SplitSuite,
    fold: usize,
) -> Result<(Vec<&'a SocialSequence>, Vec<&'a SocialSequence>)> {
    let split = suite.inner.get(fold).ok_or_else(|| {
        Error::InvalidInput(format!("fold {fold} requested, split suite has {}", suite.inner.len()))
    })?;
    let (train_side, val_side) = split.partition(&dataset.sequences);
    Ok((train_side, val_side.into_iter().filter(|s| s.origin.is_none()).collect()))
}

fn test_set<'a>(dataset: &'a Dataset, suite: &SplitSuite) -> Vec<&'a SocialSequence> {
    let (_, test) = suite.outer.partition(&dataset.sequences);
    test.into_iter().filter(|s| s.origin.is_none()).collect()
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    provenance: Provenance,
    model: &'a Path,
    side: String,
    reports: Vec<EvalReport>,
}

#[derive(Serialize)]
struct PredictHeader {
    provenance: Provenance,
    architecture: Architecture,
    sequences: usize,
}

#[derive(Serialize)]
struct BenchmarkOutput<'a> {
    provenance: Provenance,
    table: &'a crate::training::BenchmarkTable,
}

fn parse_subset(s: &str) -> Result<AttributeSubset> {
    AttributeSubset::ALL
        .into_iter()
        .find(|a| a.tag().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| Error::InvalidInput(format!("unknown attribute group {s:?}")))
}

pub fn execute(common: &Common, command: Command) -> Result<()> {
    let mut cfg = load_config(common)?;
    match command {
        Command::Synth {
            out,
            raw_dir,
            raw_width,
            sequences_per_relation,
            domain_signal,
            relation_signal,
            noise,
        } => {
            let s = &mut cfg.synth;
            if let Some(v) = sequences_per_relation {
                s.sequences_per_relation = v;
            }
            if let Some(v) = domain_signal {
                s.domain_signal = v;
            }
            if let Some(v) = relation_signal {
                s.relation_signal = v;
            }
            if let Some(v) = noise {
                s.noise = v;
            }
            let manifest = LayoutManifest::standard();
            let mut dataset = synth_dataset(&cfg.synth, &manifest)?;
            dataset.provenance = Provenance::new(cfg.hash()?, cfg.synth.seed);
            dataset.write(&out)?;
            println!("wrote {} sequences ({} wide) to {}", dataset.len(), dataset.width(), out.display());
            if let Some(dir) = raw_dir {
                let raw = synth_raw_corpus(&cfg.synth, &manifest, raw_width)?;
                ingest::write_raw(&raw, &dir.join("labels.csv"), &dir.join("frames"))?;
                println!("wrote raw corpus to {}", dir.display());
            }
        }
        Command::Ingest {
            labels,
            frames_dir,
            manifest,
            out,
            compressors,
            levels,
            components,
        } => {
            if let Some(v) = levels {
                cfg.compression.levels = v;
            }
            if let Some(v) = components {
                cfg.compression.components = v;
            }
            let manifest = match manifest {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    LayoutManifest::parse(&text)?
                }
                None => LayoutManifest::standard(),
            };
            let raw = ingest::read_raw(&labels, &frames_dir, &manifest)?;
            let provenance = Provenance::new(cfg.hash()?, 0);
            let (dataset, set) = ingest::ingest(&raw, &manifest, &cfg.compression, provenance)?;
            dataset.write(&out)?;
            let comp_path = compressors.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".compressors.json");
                PathBuf::from(p)
            });
            write_file(&comp_path, &json_pretty(&set)?)?;
            println!("{}", manifest.width_report());
            for c in &set.compressors {
                println!("{}: explained variance {:.4}", c.name, c.explained_variance());
            }
            println!("wrote {} sequences to {}", dataset.len(), out.display());
        }
        Command::Split { flags, data, out } => {
            if let Some(v) = flags.candidates {
                cfg.split.candidates = v;
            }
            if let Some(v) = flags.folds {
                cfg.split.folds = v;
            }
            if let Some(v) = flags.ratio {
                cfg.split.ratio = v;
            }
            let dataset = Dataset::read(&data)?;
            let mut suite = select_splits(&dataset.sequences, &cfg.split, cfg.seed)?;
            suite.provenance = Provenance::new(cfg.hash()?, cfg.seed);
            suite.write(&out)?;
            println!(
                "test split: {} groups, {} sequences, KL {:.6}; {} folds written to {}",
                suite.outer.held_out.len(),
                suite.outer.held_out_size,
                suite.outer.kl_score,
                suite.inner.len(),
                out.display()
            );
        }
        Command::Augment {
            flags,
            data,
            splits,
            out,
        } => {
            if let Some(v) = flags.sigma {
                cfg.augment.sigma = v;
            }
            if let Some(v) = flags.multiplier {
                cfg.augment.multiplier = v;
            }
            let mut dataset = Dataset::read(&data)?;
            let pool: Vec<SocialSequence> = match &splits {
                Some(p) => {
                    let suite = SplitSuite::read(p)?;
                    suite.check_dataset(&dataset.sequences)?;
                    let (pool, _) = suite.outer.partition(&dataset.sequences);
                    pool.into_iter().filter(|s| s.origin.is_none()).cloned().collect()
                }
                None => dataset.sequences.iter().filter(|s| s.origin.is_none()).cloned().collect(),
            };
            let extra = augment(&pool, &cfg.augment)?;
            let added = extra.len();
            dataset.sequences.extend(extra);
            let dataset = Dataset::new(
                dataset.manifest,
                dataset.sequences,
                Provenance::new(cfg.hash()?, cfg.augment.seed),
            )?;
            dataset.write(&out)?;
            println!("added {added} augmented sequences; wrote {}", out.display());
        }
        Command::Train {
            flags,
            data,
            splits,
            fold,
            out,
        } => {
            apply_train(&mut cfg, &flags);
            let dataset = Dataset::read(&data)?;
            let suite = SplitSuite::read(&splits)?;
            suite.check_dataset(&dataset.sequences)?;
            let (train_set, val_set) = fold_sets(&dataset, &suite, fold)?;
            let weights = class_weights_for(&train_set);
            let (params, history) = train(&cfg.train, &train_set, &val_set, &weights)?;
            let provenance = Provenance::new(cfg.hash()?, cfg.train.seed);
            let saved = SavedModel {
                params,
                manifest_hash: dataset.manifest.hash(),
                attributes: None,
                provenance: provenance.clone(),
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            saved.write(out.join("model.bin"))?;
            let mut hist = Vec::new();
            history.write_jsonl(&provenance, &mut hist)?;
            write_file(&out.join("history.jsonl"), &hist)?;
            write_file(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
            let best = history.best().expect("at least one epoch");
            println!(
                "{}: best validation macro-F1 {:.4} at epoch {} (train {} / val {} sequences)",
                cfg.train.architecture,
                best.val_macro_f1,
                best.epoch,
                train_set.len(),
                val_set.len()
            );
        }
        Command::Eval {
            model,
            data,
            splits,
            fold,
            side,
            mode,
            out,
        } => {
            let saved = SavedModel::read(&model)?;
            let dataset = Dataset::read(&data)?;
            saved.check_manifest(&dataset.manifest.hash())?;
            let side = side.unwrap_or(if fold.is_some() { Side::Val } else { Side::Test });
            let (label, seqs): (String, Vec<&SocialSequence>) = match &splits {
                None => ("all".into(), dataset.sequences.iter().filter(|s| s.origin.is_none()).collect()),
                Some(p) => {
                    let suite = SplitSuite::read(p)?;
                    suite.check_dataset(&dataset.sequences)?;
                    match (side, fold) {
                        (Side::Test, _) => ("test".into(), test_set(&dataset, &suite)),
                        (s, f) => {
                            let f = f.unwrap_or(0);
                            let (tr, va) = fold_sets(&dataset, &suite, f)?;
                            if s == Side::Train {
                                (format!("fold {f} train"), tr)
                            } else {
                                (format!("fold {f} val"), va)
                            }
                        }
                    }
                }
            };
            let arch = saved.params.architecture;
            let modes: Vec<EvalMode> = match mode {
                Some(m) => vec![m],
                None => EvalMode::ALL.into_iter().filter(|m| m.supports(arch)).collect(),
            };
            let reports = modes
                .into_iter()
                .map(|m| evaluate(&saved.params, &seqs, m))
                .collect::<Result<Vec<_>>>()?;
            for r in &reports {
                println!(
                    "{arch} {} on {label}: accuracy {:.4}, macro-F1 {:.4} ({} sequences)",
                    r.mode, r.accuracy, r.macro_f1, r.samples
                );
            }
            if let Some(out) = out {
                let output = EvalOutput {
                    provenance: Provenance::new(cfg.hash()?, cfg.seed),
                    model: &model,
                    side: label,
                    reports,
                };
                write_file(&out, &json_pretty(&output)?)?;
            }
        }
        Command::Predict { model, data, out } => {
            let saved = SavedModel::read(&model)?;
            let dataset = Dataset::read(&data)?;
            saved.check_manifest(&dataset.manifest.hash())?;
            let mut buf = Vec::new();
            let header = PredictHeader {
                provenance: Provenance::new(cfg.hash()?, cfg.seed),
                architecture: saved.params.architecture,
                sequences: dataset.len(),
            };
            serde_json::to_writer(&mut buf, &header)?;
            buf.push(b'\n');
            for s in &dataset.sequences {
                serde_json::to_writer(&mut buf, &predict_sequence(&saved.params, s)?)?;
                buf.push(b'\n');
            }
            match out {
                Some(p) => write_file(&p, &buf)?,
                None => std::io::stdout().write_all(&buf).map_err(|e| Error::io("stdout", e))?,
            }
        }
        Command::Benchmark {
            flags,
            data,
            splits,
            architectures,
            subsets,
            out,
            json,
        } => {
            apply_train(&mut cfg, &flags);
            if let Some(a) = architectures {
                cfg.benchmark.architectures = a;
            }
            if let Some(s) = subsets {
                cfg.benchmark.subsets = s.iter().map(|x| parse_subset(x)).collect::<Result<_>>()?;
            }
            let dataset = Dataset::read(&data)?;
            let suite = SplitSuite::read(&splits)?;
            let table = benchmark_suite(&cfg.benchmark_config(), &dataset, &suite)?;
            let provenance = Provenance::new(cfg.hash()?, cfg.train.seed);
            let text = format!(
                "# {} | config {} | seed {}\n{}",
                provenance.toolkit_version,
                provenance.config_hash,
                provenance.seed,
                table.to_text()
            );
            write_file(&out, text.as_bytes())?;
            print!("{text}");
            if let Some(j) = json {
                write_file(&j, &json_pretty(&BenchmarkOutput { provenance, table: &table })?)?;
            }
        }
        Command::Export { data, out } => {
            let dataset = Dataset::read(&data)?;
            let mut buf = Vec::new();
            dataset.write_text(&mut buf)?;
            write_file(&out, &buf)?;
            println!("exported {} sequences to {}", dataset.len(), out.display());
        }
    }
    Ok(())
}
