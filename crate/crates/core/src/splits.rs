//! Grouped random sub-sampling splits.
//!
//! Sequences recorded by the same user on the same day never straddle a
//! split. Candidate splits are drawn at random over those day groups and
//! ranked by the KL divergence between the relation distributions of the
//! two sides. The best candidate becomes the held-out test split; the
//! procedure is then repeated inside the remaining pool to pick `K`
//! cross-validation splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{label_hash, Provenance, SocialSequence};
use crate::error::{Error, Result};
use crate::numerics::{kl_divergence, Rng};
use crate::taxonomy::NUM_RELATIONS;

pub const KL_EPS: f64 = 1e-8;
/// Allowed distance between achieved and requested ratio.
pub const RATIO_TOLERANCE: f64 = 0.05;

const OUTER_STREAM: u64 = 1;
const INNER_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub user: String,
    pub day: String,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.user, self.day)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayGroup {
    pub key: GroupKey,
    pub members: Vec<String>,
    pub counts: [usize; NUM_RELATIONS],
}

impl DayGroup {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Partitions sequences by exact (user, day). Groups come out sorted by key,
/// members in input order.
pub fn group_by_user_day(sequences: &[SocialSequence]) -> Result<Vec<DayGroup>> {
    let mut groups: BTreeMap<GroupKey, DayGroup> = BTreeMap::new();
    for s in sequences {
        if s.user.is_empty() || s.day.is_empty() {
            return Err(Error::InvalidInput(format!("sequence {} has no user/day provenance", s.id)));
        }
        let key = GroupKey {
            user: s.user.clone(),
            day: s.day.clone(),
        };
        let g = groups.entry(key.clone()).or_insert_with(|| DayGroup {
            key,
            members: Vec::new(),
            counts: [0; NUM_RELATIONS],
        });
        g.members.push(s.id.clone());
        g.counts[s.relation.index()] += 1;
    }
    Ok(groups.into_values().collect())
}

/// A two-sided assignment of day groups. `train` is the large side.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub held_out: Vec<usize>,
    pub train_size: usize,
    pub held_out_size: usize,
    pub train_distribution: [f64; NUM_RELATIONS],
    pub held_out_distribution: [f64; NUM_RELATIONS],
    pub kl_score: f64,
    pub target_ratio: f64,
    pub ratio: f64,
    pub ratio_feasible: bool,
}

fn distribution(counts: &[usize; NUM_RELATIONS]) -> [f64; NUM_RELATIONS] {
    let total: usize = counts.iter().sum();
    let mut out = [0.0; NUM_RELATIONS];
    if total > 0 {
        for (o, c) in out.iter_mut().zip(counts) {
            *o = *c as f64 / total as f64;
        }
    }
    out
}

impl SplitPlan {
    /// `in_train[g]` places group `g` on the train side.
    pub fn from_assignment(groups: &[DayGroup], in_train: &[bool], target_ratio: f64) -> Result<Self> {
        if in_train.len() != groups.len() {
            return Err(Error::Shape(format!(
                "{} assignments for {} groups",
                in_train.len(),
                groups.len()
            )));
        }
        let mut train = Vec::new();
        let mut held_out = Vec::new();
        let mut train_counts = [0; NUM_RELATIONS];
        let mut held_counts = [0; NUM_RELATIONS];
        for (i, (g, &t)) in groups.iter().zip(in_train).enumerate() {
            let (side, counts) = if t {
                (&mut train, &mut train_counts)
            } else {
                (&mut held_out, &mut held_counts)
            };
            side.push(i);
            counts.iter_mut().zip(&g.counts).for_each(|(a, b)| *a += b);
        }
        if train.is_empty() || held_out.is_empty() {
            return Err(Error::InvalidInput("split has an empty side".into()));
        }
        let train_size: usize = train.iter().map(|&i| groups[i].size()).sum();
        let held_out_size: usize = held_out.iter().map(|&i| groups[i].size()).sum();
        let ratio = train_size as f64 / (train_size + held_out_size) as f64;
        let mut plan = SplitPlan {
            train,
            held_out,
            train_size,
            held_out_size,
            train_distribution: distribution(&train_counts),
            held_out_distribution: distribution(&held_counts),
            kl_score: 0.0,
            target_ratio,
            ratio,
            ratio_feasible: (ratio - target_ratio).abs() <= RATIO_TOLERANCE + 1e-12,
        };
        plan.kl_score = score_split(&plan)?;
        Ok(plan)
    }

    pub fn assignment(&self, n_groups: usize) -> Vec<bool> {
        let mut out = vec![false; n_groups];
        self.train.iter().for_each(|&i| out[i] = true);
        out
    }
}

/// KL(train ‖ held-out) over the relation distributions.
pub fn score_split(plan: &SplitPlan) -> Result<f64> {
    if plan.train_size == 0 || plan.held_out_size == 0 {
        return Err(Error::InvalidInput("cannot score a split with an empty side".into()));
    }
    kl_divergence(&plan.train_distribution, &plan.held_out_distribution, KL_EPS)
}

/// Shuffles the groups and fills the train side greedily: a group joins it
/// while the side stays within half a group of the target size.
pub fn propose_split(groups: &[DayGroup], ratio: f64, rng: &mut Rng) -> Result<SplitPlan> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 day groups to split, got {}",
            groups.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let total: usize = groups.iter().map(DayGroup::size).sum();
    let target = ratio * total as f64;
    let mut order: Vec<usize> = (0..groups.len()).collect();
    rng.shuffle(&mut order);
    let mut in_train = vec![false; groups.len()];
    let mut filled = 0usize;
    for &g in &order {
        let size = groups[g].size();
        if filled as f64 + size as f64 / 2.0 <= target {
            in_train[g] = true;
            filled += size;
        }
    }
    if !in_train.iter().any(|&t| t) {
        in_train[order[0]] = true;
    }
    if in_train.iter().all(|&t| t) {
        in_train[*order.last().expect("at least two groups")] = false;
    }
    SplitPlan::from_assignment(groups, &in_train, ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Candidate splits drawn per stage.
    pub candidates: usize,
    /// Cross-validation splits kept from the inner stage.
    pub folds: usize,
    pub ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            candidates: 1000,
            folds: 3,
            ratio: 0.8,
        }
    }
}

/// One selected split, stored by group key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySplit {
    pub train: Vec<GroupKey>,
    pub held_out: Vec<GroupKey>,
    pub train_size: usize,
    pub held_out_size: usize,
    pub ratio: f64,
    pub ratio_feasible: bool,
    pub kl_score: f64,
    pub train_distribution: Vec<f64>,
    pub held_out_distribution: Vec<f64>,
    /// Position of the winning candidate in its stage's stream.
    pub candidate_index: usize,
}

impl DaySplit {
    fn from_plan(groups: &[DayGroup], plan: &SplitPlan, candidate_index: usize) -> Self {
        let keys = |idx: &[usize]| idx.iter().map(|&i| groups[i].key.clone()).collect();
        DaySplit {
            train: keys(&plan.train),
            held_out: keys(&plan.held_out),
            train_size: plan.train_size,
            held_out_size: plan.held_out_size,
            ratio: plan.ratio,
            ratio_feasible: plan.ratio_feasible,
            kl_score: plan.kl_score,
            train_distribution: plan.train_distribution.to_vec(),
            held_out_distribution: plan.held_out_distribution.to_vec(),
            candidate_index,
        }
    }

    pub fn in_train(&self, key: &GroupKey) -> bool {
        self.train.contains(key)
    }

    pub fn in_held_out(&self, key: &GroupKey) -> bool {
        self.held_out.contains(key)
    }

    /// Sequences on the (train, held-out) sides. Sequences from groups on
    /// neither side are dropped.
    pub fn partition<'a>(&self, sequences: &'a [SocialSequence]) -> (Vec<&'a SocialSequence>, Vec<&'a SocialSequence>) {
        let train: HashSet<&GroupKey> = self.train.iter().collect();
        let held: HashSet<&GroupKey> = self.held_out.iter().collect();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for s in sequences {
            let key = GroupKey {
                user: s.user.clone(),
                day: s.day.clone(),
            };
            if train.contains(&key) {
                a.push(s);
            } else if held.contains(&key) {
                b.push(s);
            }
        }
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSuite {
    pub provenance: Provenance,
    pub dataset_label_hash: String,
    pub config: SplitConfig,
    /// Train side is the train+validation pool, held-out side the test set.
    pub outer: DaySplit,
    pub inner: Vec<DaySplit>,
}

impl SplitSuite {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("split suite", e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn check_dataset(&self, sequences: &[SocialSequence]) -> Result<()> {
        let hash = label_hash(sequences);
        if hash != self.dataset_label_hash {
            return Err(Error::format(
                "split suite",
                format!(
                    "built for dataset labels {}, got {}",
                    self.dataset_label_hash, hash
                ),
            ));
        }
        Ok(())
    }
}

/// Candidate stream for one stage. When every assignment fits in the
/// budget, all `2^G - 2` of them are scored instead of sampling.
fn candidates(groups: &[DayGroup], cfg: &SplitConfig, rng: &Rng) -> Result<Vec<SplitPlan>> {
    let g = groups.len();
    if g < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 day groups to split, got {g}"
        )));
    }
    let exhaustive = g < 63 && (1u64 << g) - 2 <= cfg.candidates as u64;
    if exhaustive {
        (1..(1u64 << g) - 1)
            .map(|mask| {
                let in_train: Vec<bool> = (0..g).map(|i| mask >> i & 1 == 1).collect();
                SplitPlan::from_assignment(groups, &in_train, cfg.ratio)
            })
            .collect()
    } else {
        (0..cfg.candidates)
            .map(|i| propose_split(groups, cfg.ratio, &mut rng.split(i as u64)))
            .collect()
    }
}

/// Candidates sorted best first: ratio-feasible before infeasible, then by
/// KL score, then by stream position. Duplicate assignments are dropped.
fn ranked(plans: Vec<SplitPlan>, n_groups: usize) -> Vec<(usize, SplitPlan)> {
    let mut indexed: Vec<(usize, SplitPlan)> = plans.into_iter().enumerate().collect();
    indexed.sort_by(|(ia, a), (ib, b)| {
        (!a.ratio_feasible)
            .cmp(&!b.ratio_feasible)
            .then(a.kl_score.total_cmp(&b.kl_score))
            .then(ia.cmp(ib))
    });
    let mut seen = HashSet::new();
    indexed.retain(|(_, p)| seen.insert(p.assignment(n_groups)));
    indexed
}

pub fn select_splits(sequences: &[SocialSequence], cfg: &SplitConfig, seed: u64) -> Result<SplitSuite> {
    if cfg.candidates == 0 || cfg.folds == 0 {
        return Err(Error::InvalidInput("split candidates and folds must be >= 1".into()));
    }
    let root = Rng::new(seed);
    let groups = group_by_user_day(sequences)?;
    let outer_ranked = ranked(candidates(&groups, cfg, &root.split(OUTER_STREAM))?, groups.len());
    let (outer_index, outer_plan) = outer_ranked.into_iter().next().expect("at least one candidate");
    let outer = DaySplit::from_plan(&groups, &outer_plan, outer_index);

    let pool: Vec<DayGroup> = outer_plan.train.iter().map(|&i| groups[i].clone()).collect();
    if pool.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "train+validation pool has {} day group(s); cannot split it again",
            pool.len()
        )));
    }
    let inner_ranked = ranked(candidates(&pool, cfg, &root.split(INNER_STREAM))?, pool.len());
    if inner_ranked.len() < cfg.folds {
        return Err(Error::InvalidInput(format!(
            "only {} distinct inner splits available, {} requested",
            inner_ranked.len(),
            cfg.folds
        )));
    }
    let inner = inner_ranked
        .iter()
        .take(cfg.folds)
        .map(|(i, p)| DaySplit::from_plan(&pool, p, *i))
        .collect();
    Ok(SplitSuite {
        provenance: Provenance::new("", seed),
        dataset_label_hash: label_hash(sequences),
        config: *cfg,
        outer,
        inner,
    })
}
