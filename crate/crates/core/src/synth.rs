//! Synthetic corpora with tunable label structure.
//!
//! Every domain and every relation owns a random prototype direction in
//! feature space. A frame of a sequence labelled `r` (in domain `d`) is
//! `domain_signal · μ_d + relation_signal · ν_r + noise · ε`, so the two
//! knobs set how separable each level of the hierarchy is. Wearer columns
//! carry a fixed one-hot per user.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Provenance, SocialSequence};
use crate::error::{Error, Result};
use crate::features::{AttributeBlock, AttributeKind, LayoutManifest, WearerInfo, AGE_CATEGORIES, GENDER_CATEGORIES};
use crate::numerics::{Matrix, Rng};
use crate::taxonomy::{domain_of, Relation, NUM_DOMAINS, NUM_RELATIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sequences_per_relation: usize,
    pub users: usize,
    pub days_per_user: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub domain_signal: f64,
    pub relation_signal: f64,
    pub noise: f64,
    /// Scale of the per-sequence offset shared by all its frames.
    pub sequence_jitter: f64,
    /// Relations reuse one cue per position inside their domain, so the
    /// cue only identifies a relation once the domain is known.
    pub shared_relation_cues: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sequences_per_relation: 12,
            users: 6,
            days_per_user: 4,
            min_len: 2,
            max_len: 20,
            domain_signal: 1.0,
            relation_signal: 1.0,
            noise: 1.0,
            sequence_jitter: 0.0,
            shared_relation_cues: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Both levels clearly visible above the noise.
    pub fn separable(seed: u64) -> Self {
        SynthConfig {
            domain_signal: 0.5,
            relation_signal: 0.5,
            noise: 1.0,
            seed,
            ..Default::default()
        }
    }

    /// Domains stand out, relations within a domain barely differ.
    pub fn domain_easy_relation_hard(seed: u64) -> Self {
        SynthConfig {
            domain_signal: 0.6,
            relation_signal: 0.12,
            noise: 1.0,
            sequence_jitter: 0.3,
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sequences_per_relation == 0 || self.users == 0 || self.days_per_user == 0 {
            return Err(Error::InvalidInput("synth: counts must be >= 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidInput(format!(
                "synth: need 1 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if [self.domain_signal, self.relation_signal, self.noise, self.sequence_jitter]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidInput("synth: signal and noise scales must be >= 0".into()));
        }
        Ok(())
    }
}

struct Labelling {
    id: String,
    user: usize,
    day: usize,
    relation: Relation,
    len: usize,
}

/// Labels, owners and lengths, shuffled so relations spread over days.
fn draw_labelling(cfg: &SynthConfig, rng: &mut Rng) -> Vec<Labelling> {
    let mut relations: Vec<usize> = (0..NUM_RELATIONS)
        .flat_map(|r| std::iter::repeat_n(r, cfg.sequences_per_relation))
        .collect();
    rng.shuffle(&mut relations);
    relations
        .into_iter()
        .enumerate()
        .map(|(k, r)| Labelling {
            id: format!("seq{k:04}"),
            user: rng.below(cfg.users),
            day: rng.below(cfg.days_per_user),
            relation: Relation::from_index(r).expect("index below NUM_RELATIONS"),
            len: cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1),
        })
        .collect()
}

fn wearer_of(user: usize) -> WearerInfo {
    WearerInfo {
        age: user % AGE_CATEGORIES.len(),
        gender: user % GENDER_CATEGORIES.len(),
    }
}

fn cue_index(cfg: &SynthConfig, r: Relation) -> usize {
    if cfg.shared_relation_cues {
        let d = domain_of(r);
        d.relations().position(|x| x == r).expect("relation listed under its domain")
    } else {
        r.index()
    }
}

fn prototypes(rng: &mut Rng, count: usize, width: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..width).map(|_| rng.standard_normal()).collect()).collect()
}

/// A ready-to-train corpus in `manifest`'s layout.
pub fn synth_dataset(cfg: &SynthConfig, manifest: &LayoutManifest) -> Result<Dataset> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let width = manifest.total_width();
    let domain_protos = prototypes(&mut root.split(1), NUM_DOMAINS, width);
    let relation_protos = prototypes(&mut root.split(2), NUM_RELATIONS, width);
    let labels = draw_labelling(cfg, &mut root.split(3));
    let frame_root = root.split(4);
    let wearer_ranges: Vec<_> = manifest
        .entries()
        .iter()
        .zip(manifest.ranges())
        .filter(|(e, _)| e.kind == AttributeKind::Wearer)
        .map(|(e, (_, r))| (e.name.clone(), r))
        .collect();

    let mut sequences = Vec::with_capacity(labels.len());
    for (k, l) in labels.iter().enumerate() {
        let mut rng = frame_root.split(k as u64);
        let d = domain_of(l.relation);
        let mu = &domain_protos[d.index()];
        let nu = &relation_protos[cue_index(cfg, l.relation)];
        let offset: Vec<f64> = (0..width).map(|_| cfg.sequence_jitter * rng.standard_normal()).collect();
        let mut frames = Matrix::zeros(l.len, width);
        for t in 0..l.len {
            let row = frames.row_mut(t);
            for j in 0..width {
                row[j] = cfg.domain_signal * mu[j]
                    + cfg.relation_signal * nu[j]
                    + offset[j]
                    + cfg.noise * rng.standard_normal();
            }
            let wearer = wearer_of(l.user);
            for (name, range) in &wearer_ranges {
                let active = if name == crate::features::WEARER_AGE_FIELD {
                    wearer.age
                } else {
                    wearer.gender
                };
                for (i, c) in range.clone().enumerate() {
                    row[c] = if i == active { 1.0 } else { 0.0 };
                }
            }
        }
        sequences.push(SocialSequence {
            id: l.id.clone(),
            user: format!("user{}", l.user),
            day: format!("day{}", l.day),
            relation: l.relation,
            domain: d,
            frames,
            origin: None,
        });
    }
    Dataset::new(manifest.clone(), sequences, Provenance::new("synth", cfg.seed))
}

/// One sequence in raw form: uncompressed attribute blocks plus wearer info.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub user: String,
    pub day: String,
    pub relation: Relation,
    pub wearer: WearerInfo,
    /// Whether this record belongs to the groups compression is fitted on.
    pub fit: bool,
    pub blocks: Vec<AttributeBlock>,
}

/// Raw attribute blocks for `manifest`: CNN attributes get `raw_width`
/// columns before compression, signal attributes their final width.
pub fn synth_raw_corpus(cfg: &SynthConfig, manifest: &LayoutManifest, raw_width: usize) -> Result<Vec<RawRecord>> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let labels = draw_labelling(cfg, &mut root.split(3));
    let blocks: Vec<_> = manifest
        .entries()
        .iter()
        .filter(|e| e.kind != AttributeKind::Wearer)
        .map(|e| {
            let w = if e.kind == AttributeKind::Cnn { raw_width } else { e.width };
            (e.name.clone(), w, e.kind == AttributeKind::Cnn)
        })
        .collect();
    let total: usize = blocks.iter().map(|b| b.1).sum();
    let domain_protos = prototypes(&mut root.split(1), NUM_DOMAINS, total);
    let relation_protos = prototypes(&mut root.split(2), NUM_RELATIONS, total);
    let frame_root = root.split(4);
    let fit_days = cfg.days_per_user.div_ceil(2).max(1);

    labels
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let mut rng = frame_root.split(k as u64);
            let d = domain_of(l.relation);
            let mut offset = 0;
            let mut out = Vec::with_capacity(blocks.len());
            for (name, w, is_cnn) in &blocks {
                let mut m = Matrix::zeros(l.len, *w);
                for t in 0..l.len {
                    for j in 0..*w {
                        let c = offset + j;
                        let v = cfg.domain_signal * domain_protos[d.index()][c]
                            + cfg.relation_signal * relation_protos[l.relation.index()][c]
                            + cfg.noise * rng.standard_normal();
                        m.set(t, j, v);
                    }
                }
                offset += w;
                out.push(AttributeBlock::new(name.clone(), m, *is_cnn)?);
            }
            Ok(RawRecord {
                id: l.id.clone(),
                user: format!("user{}", l.user),
                day: format!("day{}", l.day),
                relation: l.relation,
                wearer: wearer_of(l.user),
                fit: l.day < fit_days,
                blocks: out,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_labels() {
        let cfg = SynthConfig {
            sequences_per_relation: 3,
            ..SynthConfig::separable(1)
        };
        let d = synth_dataset(&cfg, &LayoutManifest::standard()).unwrap();
        assert_eq!(d.len(), 27);
        assert_eq!(d.width(), 459);
        for s in &d.sequences {
            assert!((2..=20).contains(&s.len()));
            assert_eq!(s.domain, domain_of(s.relation));
        }
        let again = synth_dataset(&cfg, &LayoutManifest::standard()).unwrap();
        assert_eq!(d.to_bytes().unwrap(), again.to_bytes().unwrap());
    }

    #[test]
    fn wearer_columns_are_one_hot() {
        let m = LayoutManifest::standard();
        let d = synth_dataset(&SynthConfig::default(), &m).unwrap();
        let age = m.range_of("wearer-age").unwrap();
        for s in &d.sequences {
            for row in s.frames.iter_rows() {
                assert_eq!(row[age.clone()].iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn raw_corpus_widths() {
        let m = LayoutManifest::standard();
        let cfg = SynthConfig {
            sequences_per_relation: 1,
            ..Default::default()
        };
        let raw = synth_raw_corpus(&cfg, &m, 64).unwrap();
        assert_eq!(raw.len(), 9);
        for r in &raw {
            assert_eq!(r.blocks.len(), 10);
            assert_eq!(r.blocks[0].values.cols(), 64);
            assert_eq!(r.blocks[9].values.cols(), 2);
        }
        assert!(raw.iter().any(|r| r.fit));
    }
}
