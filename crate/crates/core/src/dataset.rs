//! Labelled sequences and the on-disk dataset container.
//!
//! A dataset file is a magic line, one line of JSON header (layout
//! manifest, provenance, per-record metadata) and then every record's
//! frames as little-endian `f64`, row-major, in record order. The JSON
//! lines export carries the same content as text.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{sha256_hex, LayoutManifest};
use crate::numerics::Matrix;
use crate::taxonomy::{domain_of, Domain, Relation, TAXONOMY_VERSION};
use crate::TOOLKIT_VERSION;

const DATASET_MAGIC: &str = "SOCREL-DATASET v1";

/// One user-specific segment: frame vectors plus labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialSequence {
    pub id: String,
    pub user: String,
    pub day: String,
    pub relation: Relation,
    pub domain: Domain,
    /// One row per frame.
    pub frames: Matrix,
    /// Source sequence id for augmented copies.
    pub origin: Option<String>,
}

impl SocialSequence {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn group_key(&self) -> (&str, &str) {
        (&self.user, &self.day)
    }
}

/// What produced an artifact; embedded in every file this crate writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordMeta {
    id: String,
    user: String,
    day: String,
    relation: String,
    domain: String,
    frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    provenance: Provenance,
    taxonomy_version: String,
    feature_width: usize,
    manifest_hash: String,
    manifest: LayoutManifest,
    records: Vec<RecordMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRecord {
    #[serde(flatten)]
    meta: RecordMeta,
    values: Vec<Vec<f64>>,
}

/// A validated collection of sequences sharing one frame layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: LayoutManifest,
    pub sequences: Vec<SocialSequence>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        manifest: LayoutManifest,
        sequences: Vec<SocialSequence>,
        provenance: Provenance,
    ) -> Result<Self> {
        let width = manifest.total_width();
        let mut ids = HashSet::new();
        for s in &sequences {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate sequence id {}", s.id)));
            }
            if s.is_empty() {
                return Err(Error::InvalidInput(format!("sequence {} has no frames", s.id)));
            }
            if s.frames.cols() != width {
                return Err(Error::Width {
                    expected: width,
                    actual: s.frames.cols(),
                    detail: format!("frames of sequence {}", s.id),
                });
            }
            if s.user.is_empty() || s.day.is_empty() {
                return Err(Error::InvalidInput(format!("sequence {} lacks user/day provenance", s.id)));
            }
            check_labels(&s.id, s.relation, s.domain)?;
        }
        Ok(Dataset {
            manifest,
            sequences,
            provenance,
        })
    }

    pub fn width(&self) -> usize {
        self.manifest.total_width()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SocialSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    /// Hash over the identity and labels of the original (non-augmented)
    /// records. Split files are tied to a dataset through it.
    pub fn label_hash(&self) -> String {
        label_hash(&self.sequences)
    }

    fn header(&self) -> Header {
        Header {
            provenance: self.provenance.clone(),
            taxonomy_version: TAXONOMY_VERSION.to_string(),
            feature_width: self.width(),
            manifest_hash: self.manifest.hash(),
            manifest: self.manifest.clone(),
            records: self.sequences.iter().map(meta_of).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC.as_bytes());
        out.push(b'\n');
        serde_json::to_writer(&mut out, &self.header())?;
        out.push(b'\n');
        for s in &self.sequences {
            for v in s.frames.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::format("dataset", m);
        let (magic, rest) = split_line(bytes).ok_or_else(|| bad("missing magic line".into()))?;
        if magic != DATASET_MAGIC.as_bytes() {
            return Err(bad("not a dataset file".into()));
        }
        let (header, mut body) = split_line(rest).ok_or_else(|| bad("missing header".into()))?;
        let header: Header = serde_json::from_slice(header)?;
        let manifest = checked_manifest(&header)?;
        let width = header.feature_width;
        let expected: usize = header.records.iter().map(|r| r.frames * width * 8).sum();
        if body.len() != expected {
            return Err(bad(format!(
                "frame block has {} bytes, header describes {expected}",
                body.len()
            )));
        }
        let mut sequences = Vec::with_capacity(header.records.len());
        for meta in header.records {
            let n = meta.frames * width;
            let values: Vec<f64> = body[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            body = &body[n * 8..];
            let frames = Matrix::from_vec(meta.frames, width, values)
                .map_err(|e| bad(format!("record {}: {e}", meta.id)))?;
            sequences.push(sequence_from(meta, frames)?);
        }
        Dataset::new(manifest, sequences, header.provenance)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    /// JSON lines export: the header first (without per-record metadata),
    /// then one record per line with its frames. Round-trips exactly.
    pub fn write_text(&self, mut out: impl Write) -> Result<()> {
        let mut header = self.header();
        header.records.clear();
        let io = |e| Error::io("<text export>", e);
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(io)?;
        for s in &self.sequences {
            let rec = TextRecord {
                meta: meta_of(s),
                values: s.frames.iter_rows().map(<[f64]>::to_vec).collect(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_text(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let io = |e| Error::io("<text export>", e);
        let first = lines
            .next()
            .ok_or_else(|| Error::format("dataset text", "empty input"))?
            .map_err(io)?;
        let header: Header = serde_json::from_str(&first)?;
        let manifest = checked_manifest(&header)?;
        let mut sequences = Vec::new();
        for line in lines {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TextRecord = serde_json::from_str(&line)?;
            let frames = Matrix::from_rows(&rec.values)?;
            if frames.rows() != rec.meta.frames {
                return Err(Error::format(
                    "dataset text",
                    format!("record {} declares {} frames, has {}", rec.meta.id, rec.meta.frames, frames.rows()),
                ));
            }
            sequences.push(sequence_from(rec.meta, frames)?);
        }
        Dataset::new(manifest, sequences, header.provenance)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|b| *b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

fn checked_manifest(header: &Header) -> Result<LayoutManifest> {
    let manifest = LayoutManifest::new(header.manifest.entries().to_vec())?;
    if manifest.hash() != header.manifest_hash {
        return Err(Error::format("dataset", "layout manifest hash does not match its content"));
    }
    if manifest.total_width() != header.feature_width {
        return Err(Error::Width {
            expected: manifest.total_width(),
            actual: header.feature_width,
            detail: "dataset header feature width".into(),
        });
    }
    if header.taxonomy_version != TAXONOMY_VERSION {
        return Err(Error::format(
            "dataset",
            format!("taxonomy {} is not supported", header.taxonomy_version),
        ));
    }
    Ok(manifest)
}

fn meta_of(s: &SocialSequence) -> RecordMeta {
    RecordMeta {
        id: s.id.clone(),
        user: s.user.clone(),
        day: s.day.clone(),
        relation: s.relation.name().to_string(),
        domain: s.domain.name().to_string(),
        frames: s.len(),
        origin: s.origin.clone(),
    }
}

fn sequence_from(meta: RecordMeta, frames: Matrix) -> Result<SocialSequence> {
    let relation: Relation = meta.relation.parse()?;
    let domain: Domain = meta.domain.parse()?;
    check_labels(&meta.id, relation, domain)?;
    Ok(SocialSequence {
        id: meta.id,
        user: meta.user,
        day: meta.day,
        relation,
        domain,
        frames,
        origin: meta.origin,
    })
}

/// Rejects a record whose domain label is not the parent of its relation.
/// See [`Dataset::label_hash`].
pub fn label_hash(sequences: &[SocialSequence]) -> String {
    let mut text = String::new();
    for s in sequences.iter().filter(|s| s.origin.is_none()) {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", s.id, s.user, s.day, s.relation));
    }
    sha256_hex(text.as_bytes())
}

pub fn check_labels(id: &str, relation: Relation, domain: Domain) -> Result<()> {
    let expected = domain_of(relation);
    if expected != domain {
        return Err(Error::InconsistentLabels {
            id: id.to_string(),
            relation: relation.name().into(),
            expected: expected.name().into(),
            found: domain.name().into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ManifestEntry;
    use crate::features::AttributeKind;

    fn small_manifest() -> LayoutManifest {
        LayoutManifest::new(vec![ManifestEntry {
            name: "proximity".into(),
            width: 3,
            kind: AttributeKind::Signal,
        }])
        .unwrap()
    }

    fn sample() -> Dataset {
        let seqs = vec![
            SocialSequence {
                id: "a".into(),
                user: "u1".into(),
                day: "d1".into(),
                relation: Relation::Lovers,
                domain: Domain::Mating,
                frames: Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0 / 3.0, -2.5e-300, 7.0]]).unwrap(),
                origin: None,
            },
            SocialSequence {
                id: "b".into(),
                user: "u2".into(),
                day: "d1".into(),
                relation: Relation::Colleagues,
                domain: Domain::CoalitionalGroup,
                frames: Matrix::from_rows(&[[9.0, 8.0, 7.0]]).unwrap(),
                origin: Some("a".into()),
            },
        ];
        Dataset::new(small_manifest(), seqs, Provenance::new("cfg", 4)).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let d = sample();
        let bytes = d.to_bytes().unwrap();
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), d);
        assert_eq!(d.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let d = sample();
        let mut buf = Vec::new();
        d.write_text(&mut buf).unwrap();
        let back = Dataset::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_inconsistent_labels() {
        let mut d = sample();
        d.sequences[0].domain = Domain::Attachment;
        let err = Dataset::new(d.manifest, d.sequences, d.provenance).unwrap_err();
        assert!(matches!(err, Error::InconsistentLabels { .. }), "{err}");
    }

    #[test]
    fn rejects_inconsistent_labels_on_load() {
        let d = sample();
        let text = String::from_utf8(d.to_bytes().unwrap()[..].split(|b| *b == b'\n').nth(1).unwrap().to_vec())
            .unwrap()
            .replacen("\"domain\":\"mating\"", "\"domain\":\"attachment\"", 1);
        let mut bytes = format!("{DATASET_MAGIC}\n{text}\n").into_bytes();
        bytes.extend(d.sequences.iter().flat_map(|s| s.frames.as_slice().iter().flat_map(|v| v.to_le_bytes())));
        let err = Dataset::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::InconsistentLabels { ref id, .. } if id == "a"), "{err}");
    }

    #[test]
    fn rejects_bad_width_and_duplicates() {
        let mut d = sample();
        d.sequences[1].frames = Matrix::zeros(1, 2);
        assert!(Dataset::new(d.manifest.clone(), d.sequences.clone(), d.provenance.clone()).is_err());
        let mut d = sample();
        d.sequences[1].id = "a".into();
        assert!(Dataset::new(d.manifest, d.sequences, d.provenance).is_err());
    }

    #[test]
    fn rejects_truncated_file() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(Dataset::from_bytes(&bytes).is_err());
        assert!(Dataset::from_bytes(b"nope\n{}\n").is_err());
    }

    #[test]
    fn label_hash_ignores_augmented_records() {
        let d = sample();
        let mut only_original = d.clone();
        only_original.sequences.truncate(1);
        assert_eq!(d.label_hash(), only_original.label_hash());
    }
}
