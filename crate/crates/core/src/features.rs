//! Per-frame representation: quantization and per-attribute PCA of CNN
//! embeddings, assembly of the fixed-width frame vector, and augmentation
//! by Gaussian noise along the principal axes of the training frames.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SocialSequence;
use crate::error::{Error, Result};
use crate::numerics::{pca_fit, Matrix, PcaModel, Rng};

/// Width of an assembled frame vector.
pub const FEATURE_WIDTH: usize = 459;

/// Wearer age categories, one-hot encoded in this order.
pub const AGE_CATEGORIES: [&str; 5] = ["infant", "child", "young-adult", "middle-aged", "senior"];
/// Wearer gender categories, one-hot encoded in this order.
pub const GENDER_CATEGORIES: [&str; 2] = ["female", "male"];

pub const WEARER_AGE_FIELD: &str = "wearer-age";
pub const WEARER_GENDER_FIELD: &str = "wearer-gender";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    /// CNN embedding; quantized and PCA-compressed.
    Cnn,
    /// Low-dimensional signal passed through unchanged.
    Signal,
    /// Camera-wearer one-hot field.
    Wearer,
}

impl AttributeKind {
    fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Cnn => "cnn",
            AttributeKind::Signal => "signal",
            AttributeKind::Wearer => "wearer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub width: usize,
    pub kind: AttributeKind,
}

/// Ordered layout of the frame vector: which index range holds which
/// attribute or wearer field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutManifest {
    entries: Vec<ManifestEntry>,
}

impl LayoutManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("layout manifest is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.width == 0 {
                return Err(Error::InvalidInput(format!("manifest entry {} has zero width", e.name)));
            }
            if entries[..i].iter().any(|p| p.name == e.name) {
                return Err(Error::InvalidInput(format!("manifest entry {} appears twice", e.name)));
            }
            let expected = match e.name.as_str() {
                WEARER_AGE_FIELD => Some(AGE_CATEGORIES.len()),
                WEARER_GENDER_FIELD => Some(GENDER_CATEGORIES.len()),
                _ => None,
            };
            match (e.kind, expected) {
                (AttributeKind::Wearer, Some(w)) if w != e.width => {
                    return Err(Error::Width {
                        expected: w,
                        actual: e.width,
                        detail: format!("wearer field {}", e.name),
                    })
                }
                (AttributeKind::Wearer, None) => {
                    return Err(Error::InvalidInput(format!("unknown wearer field {}", e.name)))
                }
                (k, Some(_)) if k != AttributeKind::Wearer => {
                    return Err(Error::InvalidInput(format!("{} must have kind wearer", e.name)))
                }
                _ => {}
            }
        }
        Ok(LayoutManifest { entries })
    }

    /// The 459-wide layout: nine CNN attributes compressed to 50 components
    /// each, a two-value proximity signal and the wearer one-hots.
    pub fn standard() -> Self {
        let cnn = [
            "activities",
            "age-face",
            "age-body",
            "clothing",
            "facial-expression",
            "gender-face",
            "gender-body",
            "head-appearance",
            "head-orientation",
        ];
        let mut entries: Vec<ManifestEntry> = cnn
            .iter()
            .map(|n| ManifestEntry {
                name: n.to_string(),
                width: 50,
                kind: AttributeKind::Cnn,
            })
            .collect();
        entries.push(ManifestEntry {
            name: "proximity".into(),
            width: 2,
            kind: AttributeKind::Signal,
        });
        entries.push(ManifestEntry {
            name: WEARER_AGE_FIELD.into(),
            width: AGE_CATEGORIES.len(),
            kind: AttributeKind::Wearer,
        });
        entries.push(ManifestEntry {
            name: WEARER_GENDER_FIELD.into(),
            width: GENDER_CATEGORIES.len(),
            kind: AttributeKind::Wearer,
        });
        LayoutManifest { entries }
    }

    /// Parses the text form: one `name width kind` record per line, `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::format("layout manifest", format!("line {}: {msg}", lineno + 1));
            if fields.len() != 3 {
                return Err(bad("expected `name width kind`"));
            }
            let width = fields[1].parse::<usize>().map_err(|_| bad("width is not a count"))?;
            let kind = match fields[2] {
                "cnn" => AttributeKind::Cnn,
                "signal" => AttributeKind::Signal,
                "wearer" => AttributeKind::Wearer,
                other => return Err(bad(&format!("unknown kind {other:?}"))),
            };
            entries.push(ManifestEntry {
                name: fields[0].to_string(),
                width,
                kind,
            });
        }
        LayoutManifest::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# name width kind\n");
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {}", e.name, e.width, e.kind.as_str());
        }
        out
    }

    /// Content hash of the canonical text form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn total_width(&self) -> usize {
        self.entries.iter().map(|e| e.width).sum()
    }

    /// Index range of every entry, in layout order.
    pub fn ranges(&self) -> Vec<(&str, Range<usize>)> {
        let mut start = 0;
        self.entries
            .iter()
            .map(|e| {
                let r = start..start + e.width;
                start += e.width;
                (e.name.as_str(), r)
            })
            .collect()
    }

    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        self.ranges().into_iter().find(|(n, _)| *n == name).map(|(_, r)| r)
    }

    /// The slice of a frame vector holding one attribute.
    pub fn slice<'a>(&self, frame: &'a [f64], name: &str) -> Option<&'a [f64]> {
        self.range_of(name).map(|r| &frame[r])
    }

    /// Fails unless the layout is exactly [`FEATURE_WIDTH`] wide and
    /// carries both wearer fields.
    pub fn validate_standard_width(&self) -> Result<()> {
        let total = self.total_width();
        if total != FEATURE_WIDTH {
            return Err(Error::Width {
                expected: FEATURE_WIDTH,
                actual: total,
                detail: self.width_report(),
            });
        }
        for field in [WEARER_AGE_FIELD, WEARER_GENDER_FIELD] {
            if self.entry(field).is_none() {
                return Err(Error::InvalidInput(format!("layout manifest lacks {field}")));
            }
        }
        Ok(())
    }

    pub fn width_report(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}={}", e.name, e.width))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Restricts the layout to the named entries (kept in layout order)
    /// and returns the frame-vector columns they occupy.
    pub fn subset(&self, names: &[&str]) -> Result<(LayoutManifest, Vec<usize>)> {
        for n in names {
            if self.entry(n).is_none() {
                return Err(Error::InvalidInput(format!("layout has no attribute {n}")));
            }
        }
        let mut entries = Vec::new();
        let mut columns = Vec::new();
        for ((name, range), e) in self.ranges().into_iter().zip(&self.entries) {
            if names.contains(&name) {
                entries.push(e.clone());
                columns.extend(range);
            }
        }
        Ok((LayoutManifest { entries }, columns))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Raw per-frame features of one semantic attribute for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeBlock {
    pub name: String,
    pub values: Matrix,
    pub is_cnn: bool,
}

impl AttributeBlock {
    pub fn new(name: impl Into<String>, values: Matrix, is_cnn: bool) -> Result<Self> {
        let name = name.into();
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::InvalidInput(format!(
                "attribute block {name} is {}x{}; needs at least one frame and one column",
                values.rows(),
                values.cols()
            )));
        }
        Ok(AttributeBlock { name, values, is_cnn })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    /// Quantization levels per dimension.
    pub levels: usize,
    /// Principal components kept per CNN attribute.
    pub components: usize,
    /// Explained-variance level reported against; never enforced.
    pub variance_target: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            levels: 32,
            components: 50,
            variance_target: 0.90,
        }
    }
}

/// Per-dimension min-max uniform quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub levels: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Quantizer {
    pub fn fit(values: &Matrix, levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 quantization levels, got {levels}")));
        }
        let mut min = vec![f64::INFINITY; values.cols()];
        let mut max = vec![f64::NEG_INFINITY; values.cols()];
        for row in values.iter_rows() {
            for ((lo, hi), v) in min.iter_mut().zip(max.iter_mut()).zip(row) {
                *lo = lo.min(*v);
                *hi = hi.max(*v);
            }
        }
        Ok(Quantizer { levels, min, max })
    }

    /// Scales each dimension to `[0, 1]` with the fitted range (clamping
    /// out-of-range values) and snaps it to the nearest level `i / (Q-1)`.
    /// Dimensions with a degenerate range map to level 0.
    pub fn apply(&self, values: &Matrix) -> Result<Matrix> {
        if values.cols() != self.min.len() {
            return Err(Error::Shape(format!(
                "quantizer fitted on {} columns, got {}",
                self.min.len(),
                values.cols()
            )));
        }
        let steps = (self.levels - 1) as f64;
        let mut out = values.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                let span = self.max[c] - self.min[c];
                *v = if span > 0.0 {
                    let unit = ((*v - self.min[c]) / span).clamp(0.0, 1.0);
                    (unit * steps).round() / steps
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

/// Quantizes a block against its own per-dimension range.
pub fn quantize(block: &AttributeBlock, levels: usize) -> Result<AttributeBlock> {
    let q = Quantizer::fit(&block.values, levels)?;
    Ok(AttributeBlock {
        name: block.name.clone(),
        values: q.apply(&block.values)?,
        is_cnn: block.is_cnn,
    })
}

/// Fitted quantize-then-project pipeline for one CNN attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeCompressor {
    pub name: String,
    pub quantizer: Quantizer,
    pub pca: PcaModel,
}

impl AttributeCompressor {
    /// Fits on training frames only.
    pub fn fit(name: &str, train_values: &Matrix, cfg: &CompressionConfig) -> Result<Self> {
        let (frames, dim) = train_values.shape();
        if cfg.components > frames.min(dim) {
            return Err(Error::InvalidInput(format!(
                "attribute {name}: cannot keep {} components from {frames} training frames of width {dim}",
                cfg.components
            )));
        }
        let quantizer = Quantizer::fit(train_values, cfg.levels)?;
        let pca = pca_fit(&quantizer.apply(train_values)?, cfg.components)?;
        Ok(AttributeCompressor {
            name: name.to_string(),
            quantizer,
            pca,
        })
    }

    pub fn apply(&self, values: &Matrix) -> Result<Matrix> {
        self.pca.transform(&self.quantizer.apply(values)?)
    }

    pub fn explained_variance(&self) -> f64 {
        self.pca.explained_variance()
    }
}

/// Output of [`compress_attribute`]: the compressed block plus the fitted
/// compressor (absent for pass-through signal blocks).
#[derive(Debug, Clone)]
pub struct CompressedAttribute {
    pub block: AttributeBlock,
    pub compressor: Option<AttributeCompressor>,
}

/// Compresses a CNN block with `fitted` when given, otherwise fits a new
/// compressor on the block itself. Non-CNN blocks pass through unchanged.
pub fn compress_attribute(
    block: &AttributeBlock,
    cfg: &CompressionConfig,
    fitted: Option<&AttributeCompressor>,
) -> Result<CompressedAttribute> {
    if !block.is_cnn {
        return Ok(CompressedAttribute {
            block: block.clone(),
            compressor: None,
        });
    }
    let compressor = match fitted {
        Some(c) => {
            if c.quantizer.min.len() != block.values.cols() {
                return Err(Error::Shape(format!(
                    "attribute {}: compressor fitted on width {}, block has width {}",
                    block.name,
                    c.quantizer.min.len(),
                    block.values.cols()
                )));
            }
            c.clone()
        }
        None => AttributeCompressor::fit(&block.name, &block.values, cfg)?,
    };
    let values = compressor.apply(&block.values)?;
    Ok(CompressedAttribute {
        block: AttributeBlock {
            name: block.name.clone(),
            values,
            is_cnn: true,
        },
        compressor: Some(compressor),
    })
}

/// Camera-wearer ground truth, as category indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WearerInfo {
    pub age: usize,
    pub gender: usize,
}

impl WearerInfo {
    pub fn new(age: &str, gender: &str) -> Result<Self> {
        let age = AGE_CATEGORIES
            .iter()
            .position(|a| *a == age)
            .ok_or_else(|| Error::UnknownLabel(age.to_string()))?;
        let gender = GENDER_CATEGORIES
            .iter()
            .position(|g| *g == gender)
            .ok_or_else(|| Error::UnknownLabel(gender.to_string()))?;
        Ok(WearerInfo { age, gender })
    }

    fn one_hot(&self, field: &str) -> Vec<f64> {
        let (n, active) = match field {
            WEARER_AGE_FIELD => (AGE_CATEGORIES.len(), self.age),
            _ => (GENDER_CATEGORIES.len(), self.gender),
        };
        let mut v = vec![0.0; n];
        v[active] = 1.0;
        v
    }
}

/// Concatenates compressed blocks and wearer one-hots per frame, in
/// manifest order. Rows of the result are the frame vectors.
pub fn assemble_frame_vectors(
    manifest: &LayoutManifest,
    blocks: &[AttributeBlock],
    wearer: &WearerInfo,
) -> Result<Matrix> {
    let frames = blocks.first().map_or(1, |b| b.frames());
    if let Some(b) = blocks.iter().find(|b| b.frames() != frames) {
        return Err(Error::Shape(format!(
            "attribute {} has {} frames, expected {frames}",
            b.name,
            b.frames()
        )));
    }
    for b in blocks {
        if manifest.entry(&b.name).is_none() {
            return Err(Error::InvalidInput(format!("attribute {} is not in the layout manifest", b.name)));
        }
    }

    let mut parts: Vec<Matrix> = Vec::with_capacity(manifest.entries().len());
    let mut widths = Vec::new();
    let mut mismatch = false;
    for e in manifest.entries() {
        let part = if e.kind == AttributeKind::Wearer {
            let v = wearer.one_hot(&e.name);
            let mut m = Matrix::zeros(frames, v.len());
            for r in 0..frames {
                m.row_mut(r).copy_from_slice(&v);
            }
            m
        } else {
            match blocks.iter().find(|b| b.name == e.name) {
                Some(b) => b.values.clone(),
                None => Matrix::zeros(frames, 0),
            }
        };
        mismatch |= part.cols() != e.width;
        widths.push(format!("{}={}/{}", e.name, part.cols(), e.width));
        parts.push(part);
    }
    let actual: usize = parts.iter().map(|p| p.cols()).sum();
    let expected = manifest.total_width();
    if mismatch || actual != expected {
        let gap = expected as i64 - actual as i64;
        let gap = match gap {
            g if g > 0 => format!("deficit of {g}"),
            g if g < 0 => format!("excess of {}", -g),
            _ => "per-block mismatch".to_string(),
        };
        return Err(Error::Width {
            expected,
            actual,
            detail: format!("{gap}; blocks (actual/expected): {}", widths.join(", ")),
        });
    }
    Matrix::hstack(&parts.iter().collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Standard deviation of the per-component Gaussian draw.
    pub sigma: f64,
    /// New samples per original sequence.
    pub multiplier: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            sigma: 0.01,
            multiplier: 1,
            seed: 0,
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Generates `multiplier` noisy copies of every sequence.
///
/// A PCA basis is fitted on all frames of `sequences`; each frame `x` of a
/// copy becomes `x + Σ_j λ_j g_j v_j` with `g_j ~ N(0, σ²)` drawn per
/// (copy, frame, component). Labels and provenance are copied and
/// `origin` names the source sequence. Only the new copies are returned.
pub fn augment(sequences: &[SocialSequence], cfg: &AugmentConfig) -> Result<Vec<SocialSequence>> {
    if !cfg.sigma.is_finite() || cfg.sigma < 0.0 {
        return Err(Error::InvalidInput(format!("augmentation sigma must be >= 0, got {}", cfg.sigma)));
    }
    if cfg.multiplier == 0 || sequences.is_empty() {
        return Ok(Vec::new());
    }
    let stacked = Matrix::vstack(sequences.iter().map(|s| &s.frames))?;
    if stacked.rows() < 2 {
        return Err(Error::InvalidInput(
            "augmentation needs at least 2 frames across the training sequences".into(),
        ));
    }
    let pca = pca_fit(&stacked, stacked.rows().min(stacked.cols()))?;
    let active: Vec<usize> = (0..pca.n_components()).filter(|j| pca.eigenvalues[*j] > 0.0).collect();
    let base = Rng::new(cfg.seed);

    let mut out = Vec::with_capacity(sequences.len() * cfg.multiplier);
    for seq in sequences {
        let seq_rng = base.split(fnv1a(&seq.id));
        for copy in 0..cfg.multiplier {
            let mut rng = seq_rng.split(copy as u64);
            let mut frames = seq.frames.clone();
            for r in 0..frames.rows() {
                let row = frames.row_mut(r);
                for &j in &active {
                    let g = cfg.sigma * rng.standard_normal();
                    let scale = pca.eigenvalues[j] * g;
                    for (x, v) in row.iter_mut().zip(pca.components.row(j)) {
                        *x += scale * v;
                    }
                }
            }
            out.push(SocialSequence {
                id: format!("{}+aug{}", seq.id, copy + 1),
                frames,
                origin: Some(seq.origin.clone().unwrap_or_else(|| seq.id.clone())),
                ..seq.clone()
            });
        }
    }
    Ok(out)
}
