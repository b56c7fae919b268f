//! The two-level label space: five social domains, each owning one or
//! more of nine relations.
//!
//! Index order is the canonical listing order and is used for every
//! probability vector, confusion matrix and serialized label.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NUM_DOMAINS: usize = 5;
pub const NUM_RELATIONS: usize = 9;

/// Version tag written into dataset headers.
pub const TAXONOMY_VERSION: &str = "domains-5x9";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Attachment,
    Reciprocity,
    Mating,
    CoalitionalGroup,
    HierarchicalGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    FatherChild,
    MotherChild,
    Friends,
    Classmates,
    Lovers,
    Colleagues,
    PresenterAudience,
    LeaderSubordinate,
    CustomerStaff,
}

/// The single table the hierarchy is compiled from.
const RELATION_TABLE: [(Relation, Domain, &str); NUM_RELATIONS] = [
    (Relation::FatherChild, Domain::Attachment, "father-child"),
    (Relation::MotherChild, Domain::Attachment, "mother-child"),
    (Relation::Friends, Domain::Reciprocity, "friends"),
    (Relation::Classmates, Domain::Reciprocity, "classmates"),
    (Relation::Lovers, Domain::Mating, "lovers"),
    (Relation::Colleagues, Domain::CoalitionalGroup, "colleagues"),
    (Relation::PresenterAudience, Domain::HierarchicalGroup, "presenter-audience"),
    (Relation::LeaderSubordinate, Domain::HierarchicalGroup, "leader-subordinate"),
    (Relation::CustomerStaff, Domain::HierarchicalGroup, "customer-staff"),
];

const DOMAIN_TABLE: [(Domain, &str); NUM_DOMAINS] = [
    (Domain::Attachment, "attachment"),
    (Domain::Reciprocity, "reciprocity"),
    (Domain::Mating, "mating"),
    (Domain::CoalitionalGroup, "coalitional-group"),
    (Domain::HierarchicalGroup, "hierarchical-group"),
];

impl Domain {
    pub const ALL: [Domain; NUM_DOMAINS] = [
        Domain::Attachment,
        Domain::Reciprocity,
        Domain::Mating,
        Domain::CoalitionalGroup,
        Domain::HierarchicalGroup,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Domain> {
        Domain::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        DOMAIN_TABLE[self.index()].1
    }

    /// Relations nested under this domain, in canonical order.
    pub fn relations(self) -> impl Iterator<Item = Relation> {
        RELATION_TABLE
            .iter()
            .filter(move |(_, d, _)| *d == self)
            .map(|(r, _, _)| *r)
    }
}

impl Relation {
    pub const ALL: [Relation; NUM_RELATIONS] = [
        Relation::FatherChild,
        Relation::MotherChild,
        Relation::Friends,
        Relation::Classmates,
        Relation::Lovers,
        Relation::Colleagues,
        Relation::PresenterAudience,
        Relation::LeaderSubordinate,
        Relation::CustomerStaff,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Relation> {
        Relation::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        RELATION_TABLE[self.index()].2
    }

    pub fn domain(self) -> Domain {
        domain_of(self)
    }
}

/// The unique parent domain of a relation.
pub fn domain_of(relation: Relation) -> Domain {
    RELATION_TABLE[relation.index()].1
}

/// Aggregates relation probability mass into domain probability mass.
///
/// The input must be a probability vector over the nine relations (entries
/// nonnegative, sum within 1e-6 of one).
pub fn infer_domain_distribution(relation_probs: &[f64]) -> Result<[f64; NUM_DOMAINS]> {
    if relation_probs.len() != NUM_RELATIONS {
        return Err(Error::Shape(format!(
            "relation distribution has {} entries, expected {NUM_RELATIONS}",
            relation_probs.len()
        )));
    }
    if let Some((i, p)) = relation_probs
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(Error::InvalidInput(format!(
            "relation probability {i} is {p}; entries must be finite and nonnegative"
        )));
    }
    let total: f64 = relation_probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "relation probabilities sum to {total}, expected 1"
        )));
    }
    let mut out = [0.0; NUM_DOMAINS];
    for (relation, p) in Relation::ALL.iter().zip(relation_probs) {
        out[domain_of(*relation).index()] += p;
    }
    Ok(out)
}

/// Queryable view of the hierarchy: forward map and its inverse partition.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    parent: [Domain; NUM_RELATIONS],
    children: [Vec<Relation>; NUM_DOMAINS],
}

impl Taxonomy {
    pub fn standard() -> Self {
        let parent = Relation::ALL.map(domain_of);
        let children = Domain::ALL.map(|d| d.relations().collect::<Vec<_>>());
        Taxonomy { parent, children }
    }

    pub fn domain_of(&self, relation: Relation) -> Domain {
        self.parent[relation.index()]
    }

    pub fn relations_of(&self, domain: Domain) -> &[Relation] {
        &self.children[domain.index()]
    }

    /// Relation index to domain index, as a plain lookup table.
    pub fn parent_indices(&self) -> [usize; NUM_RELATIONS] {
        self.parent.map(Domain::index)
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::standard()
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DOMAIN_TABLE
            .iter()
            .find(|(_, name)| *name == s)
            .map(|(d, _)| *d)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RELATION_TABLE
            .iter()
            .find(|(_, _, name)| *name == s)
            .map(|(r, _, _)| *r)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

macro_rules! label_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

label_serde!(Domain);
label_serde!(Relation);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn named_relations_map_to_domains() {
        assert_eq!(domain_of(Relation::Lovers), Domain::Mating);
        assert_eq!(domain_of(Relation::FatherChild), Domain::Attachment);
        assert_eq!(domain_of(Relation::CustomerStaff), Domain::HierarchicalGroup);
    }

    #[test]
    fn partition_sizes() {
        let tax = Taxonomy::standard();
        let sizes: Vec<usize> = Domain::ALL.iter().map(|d| tax.relations_of(*d).len()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 1, 3]);
        let mut seen: Vec<Relation> = Domain::ALL
            .iter()
            .flat_map(|d| tax.relations_of(*d).to_vec())
            .collect();
        seen.sort();
        assert_eq!(seen, Relation::ALL.to_vec());
    }

    #[test]
    fn index_bijection_and_names() {
        for (i, r) in Relation::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(Relation::from_index(i), Some(*r));
            assert_eq!(r.name().parse::<Relation>().unwrap(), *r);
        }
        for (i, d) in Domain::ALL.iter().enumerate() {
            assert_eq!(d.index(), i);
            assert_eq!(Domain::from_index(i), Some(*d));
            assert_eq!(d.name().parse::<Domain>().unwrap(), *d);
        }
        assert!(Relation::from_index(9).is_none());
        assert_eq!(Relation::PresenterAudience.name(), "presenter-audience");
        assert!("Friends".parse::<Relation>().is_err());
    }

    #[test]
    fn inferred_distribution_examples() {
        let mut one_hot = [0.0; 9];
        one_hot[Relation::Lovers.index()] = 1.0;
        assert_eq!(infer_domain_distribution(&one_hot).unwrap(), [0.0, 0.0, 1.0, 0.0, 0.0]);

        let uniform = [1.0 / 9.0; 9];
        let got = infer_domain_distribution(&uniform).unwrap();
        let want = [2.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0, 3.0 / 9.0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }

        let mut split = [0.0; 9];
        split[Relation::Friends.index()] = 0.5;
        split[Relation::Classmates.index()] = 0.5;
        assert_eq!(infer_domain_distribution(&split).unwrap(), [0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn inferred_distribution_rejects_bad_input() {
        let mut neg = [1.0 / 9.0; 9];
        neg[0] = -0.1;
        neg[1] += 0.1;
        assert!(infer_domain_distribution(&neg).is_err());
        assert!(infer_domain_distribution(&[0.2; 9]).is_err());
        assert!(infer_domain_distribution(&[0.2; 5]).is_err());
    }

    #[test]
    fn serde_uses_hyphenated_names() {
        let json = serde_json::to_string(&Relation::LeaderSubordinate).unwrap();
        assert_eq!(json, "\"leader-subordinate\"");
        let d: Domain = serde_json::from_str("\"coalitional-group\"").unwrap();
        assert_eq!(d, Domain::CoalitionalGroup);
    }

    fn simplex() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, NUM_RELATIONS).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-9).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn inference_preserves_mass(p in simplex()) {
            let d = infer_domain_distribution(&p).unwrap();
            prop_assert!(d.iter().all(|x| *x >= 0.0));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn majority_block_wins(p in simplex(), dom in 0usize..NUM_DOMAINS) {
            let d = infer_domain_distribution(&p).unwrap();
            if d[dom] > 0.5 {
                let argmax = (0..NUM_DOMAINS).fold(0, |b, i| if d[i] > d[b] { i } else { b });
                prop_assert_eq!(argmax, dom);
            }
        }
    }
}
