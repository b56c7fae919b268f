//! Raw attribute files to a dataset.
//!
//! The labels file is CSV with the header
//! `id,user,day,relation,domain,wearer_age,wearer_gender,fit`; `fit` is 1
//! for records whose day groups the quantizers and PCA models are fitted
//! on. Each record's frames live in `<frames-dir>/<id>.csv`: one row per
//! frame, columns named `<attribute>.<j>` for every non-wearer attribute of
//! the layout manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{check_labels, Dataset, Provenance, SocialSequence};
use crate::error::{Error, Result};
use crate::features::{
    assemble_frame_vectors, compress_attribute, AttributeBlock, AttributeCompressor, AttributeKind, CompressionConfig,
    LayoutManifest, WearerInfo, AGE_CATEGORIES, GENDER_CATEGORIES,
};
use crate::numerics::Matrix;
use crate::synth::RawRecord;
use crate::taxonomy::{Domain, Relation};

#[derive(Debug, Deserialize, Serialize)]
struct LabelRow {
    id: String,
    user: String,
    day: String,
    relation: String,
    domain: String,
    wearer_age: String,
    wearer_gender: String,
    fit: u8,
}

/// Fitted compressors, written next to the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorSet {
    pub provenance: Provenance,
    pub manifest_hash: String,
    pub compressors: Vec<AttributeCompressor>,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path.display().to_string(), e.to_string())
}

fn read_frames(path: &Path, manifest: &LayoutManifest) -> Result<Vec<AttributeBlock>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut columns: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for (c, h) in headers.iter().enumerate() {
        let (name, j) = h
            .rsplit_once('.')
            .and_then(|(n, j)| j.parse::<usize>().ok().map(|j| (n, j)))
            .ok_or_else(|| Error::format(path.display().to_string(), format!("column {h:?} is not <attribute>.<index>")))?;
        columns.entry(name).or_default().push((j, c));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path.display().to_string(), format!("bad number {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(path.display().to_string(), "no frames"));
    }
    let mut blocks = Vec::new();
    for e in manifest.entries() {
        if e.kind == AttributeKind::Wearer {
            continue;
        }
        let mut cols = columns.remove(e.name.as_str()).unwrap_or_default();
        cols.sort_unstable();
        if cols.iter().enumerate().any(|(k, (j, _))| k != *j) {
            return Err(Error::format(
                path.display().to_string(),
                format!("attribute {} columns are not numbered 0..n", e.name),
            ));
        }
        let data: Vec<f64> = rows.iter().flat_map(|r| cols.iter().map(move |(_, c)| r[*c])).collect();
        let values = Matrix::from_vec(rows.len(), cols.len(), data)?;
        blocks.push(AttributeBlock::new(e.name.clone(), values, e.kind == AttributeKind::Cnn)?);
    }
    if let Some(extra) = columns.keys().next() {
        return Err(Error::format(
            path.display().to_string(),
            format!("attribute {extra} is not in the layout manifest"),
        ));
    }
    Ok(blocks)
}

/// Reads the labels file and every frames file.
pub fn read_raw(labels: &Path, frames_dir: &Path, manifest: &LayoutManifest) -> Result<Vec<RawRecord>> {
    let mut reader = csv::Reader::from_path(labels).map_err(|e| csv_error(labels, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| csv_error(labels, e))?;
        let relation: Relation = row.relation.parse()?;
        let domain: Domain = row.domain.parse()?;
        check_labels(&row.id, relation, domain)?;
        let blocks = read_frames(&frames_dir.join(format!("{}.csv", row.id)), manifest)?;
        out.push(RawRecord {
            wearer: WearerInfo::new(&row.wearer_age, &row.wearer_gender)?,
            id: row.id,
            user: row.user,
            day: row.day,
            relation,
            fit: row.fit != 0,
            blocks,
        });
    }
    Ok(out)
}

/// Writes records in the layout [`read_raw`] expects.
pub fn write_raw(records: &[RawRecord], labels: &Path, frames_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(frames_dir).map_err(|e| Error::io(frames_dir, e))?;
    let mut w = csv::Writer::from_path(labels).map_err(|e| csv_error(labels, e))?;
    for r in records {
        w.serialize(LabelRow {
            id: r.id.clone(),
            user: r.user.clone(),
            day: r.day.clone(),
            relation: r.relation.to_string(),
            domain: crate::taxonomy::domain_of(r.relation).to_string(),
            wearer_age: AGE_CATEGORIES[r.wearer.age].to_string(),
            wearer_gender: GENDER_CATEGORIES[r.wearer.gender].to_string(),
            fit: r.fit as u8,
        })
        .map_err(|e| csv_error(labels, e))?;

        let path = frames_dir.join(format!("{}.csv", r.id));
        let mut f = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let header: Vec<String> = r
            .blocks
            .iter()
            .flat_map(|b| (0..b.values.cols()).map(move |j| format!("{}.{j}", b.name)))
            .collect();
        f.write_record(&header).map_err(|e| csv_error(&path, e))?;
        let frames = r.blocks.first().map_or(0, |b| b.frames());
        for t in 0..frames {
            let row: Vec<String> = r
                .blocks
                .iter()
                .flat_map(|b| b.values.row(t).iter().map(|v| format!("{v:?}")))
                .collect();
            f.write_record(&row).map_err(|e| csv_error(&path, e))?;
        }
        f.flush().map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(labels, e))?;
    Ok(())
}

/// Quantize, compress (fitted on `fit` records only) and assemble.
pub fn ingest(
    records: &[RawRecord],
    manifest: &LayoutManifest,
    cfg: &CompressionConfig,
    provenance: Provenance,
) -> Result<(Dataset, CompressorSet)> {
    manifest.validate_standard_width()?;
    let fit: Vec<&RawRecord> = records.iter().filter(|r| r.fit).collect();
    if fit.is_empty() {
        return Err(Error::InvalidInput("no records are marked for fitting the compression".into()));
    }
    let mut compressors = Vec::new();
    for e in manifest.entries().iter().filter(|e| e.kind == AttributeKind::Cnn) {
        let parts: Vec<&Matrix> = fit
            .iter()
            .filter_map(|r| r.blocks.iter().find(|b| b.name == e.name).map(|b| &b.values))
            .collect();
        let stacked = Matrix::vstack(parts)?;
        compressors.push(AttributeCompressor::fit(&e.name, &stacked, cfg)?);
    }

    let mut sequences = Vec::with_capacity(records.len());
    for r in records {
        let blocks = r
            .blocks
            .iter()
            .map(|b| {
                let fitted = compressors.iter().find(|c| c.name == b.name);
                Ok(compress_attribute(b, cfg, fitted)?.block)
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = assemble_frame_vectors(manifest, &blocks, &r.wearer).map_err(|e| match e {
            Error::Width { expected, actual, detail } => Error::Width {
                expected,
                actual,
                detail: format!("record {}: {detail}", r.id),
            },
            e => e,
        })?;
        sequences.push(SocialSequence {
            id: r.id.clone(),
            user: r.user.clone(),
            day: r.day.clone(),
            relation: r.relation,
            domain: crate::taxonomy::domain_of(r.relation),
            frames,
            origin: None,
        });
    }
    let dataset = Dataset::new(manifest.clone(), sequences, provenance.clone())?;
    let set = CompressorSet {
        provenance,
        manifest_hash: manifest.hash(),
        compressors,
    };
    Ok((dataset, set))
}
