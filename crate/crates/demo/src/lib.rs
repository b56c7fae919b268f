//! Browser bindings for three small pieces of the toolkit: the step-decay
//! learning-rate schedule, relation-to-domain inference, and PCA-axis
//! augmentation of a 2-D point cloud.
//!
//! The plain functions return `Result<_, String>` so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers convert errors to JS exceptions.

use socrel::dataset::SocialSequence;
use socrel::features::{augment, AugmentConfig};
use socrel::numerics::{pca_fit, Matrix, Rng};
use socrel::taxonomy::{infer_domain_distribution, Domain, Relation};
use socrel::training::{lr_schedule, TrainConfig};
use wasm_bindgen::prelude::*;

pub fn schedule_curve(alpha0: f64, decay_period: usize, decay_factor: f64, iterations: usize) -> Result<Vec<f64>, String> {
    let cfg = TrainConfig {
        alpha0,
        decay_period,
        decay_factor,
        iterations,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok((0..iterations).map(|i| lr_schedule(i, &cfg)).collect())
}

/// Normalizes non-negative relation scores and sums them per domain.
pub fn domains_from_relations(scores: &[f64]) -> Result<Vec<f64>, String> {
    if scores.len() != Relation::ALL.len() {
        return Err(format!("expected {} relation scores, got {}", Relation::ALL.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err("scores must be finite and non-negative".into());
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err("at least one score must be positive".into());
    }
    let probs: Vec<f64> = scores.iter().map(|s| s / total).collect();
    let domains = infer_domain_distribution(&probs).map_err(|e| e.to_string())?;
    Ok(domains.to_vec())
}

/// Original and augmented points of a stretched, rotated Gaussian cloud.
pub struct Scatter {
    /// `[x0, y0, x1, y1, ...]`
    pub original: Vec<f64>,
    pub augmented: Vec<f64>,
    /// Principal axes scaled by their eigenvalues, `[ax, ay, bx, by]`.
    pub axes: Vec<f64>,
}

pub fn augmentation_scatter(points: usize, sigma: f64, copies: usize, seed: u64) -> Result<Scatter, String> {
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    let mut rng = Rng::new(seed);
    let (c, s) = (0.5f64.cos(), 0.5f64.sin());
    let mut data = Vec::with_capacity(2 * points);
    for _ in 0..points {
        let u = 2.0 * rng.standard_normal();
        let v = 0.6 * rng.standard_normal();
        data.extend([c * u - s * v, s * u + c * v]);
    }
    let frames = Matrix::from_vec(points, 2, data.clone()).map_err(|e| e.to_string())?;
    let relation = Relation::Friends;
    let seq = SocialSequence {
        id: "cloud".into(),
        user: "demo".into(),
        day: "0".into(),
        relation,
        domain: relation.domain(),
        frames,
        origin: None,
    };
    let cfg = AugmentConfig {
        sigma,
        multiplier: copies,
        seed,
    };
    let extra = augment(std::slice::from_ref(&seq), &cfg).map_err(|e| e.to_string())?;
    let pca = pca_fit(&seq.frames, 2).map_err(|e| e.to_string())?;
    let mut axes = Vec::with_capacity(4);
    for j in 0..2 {
        axes.extend(pca.components.row(j).iter().map(|v| v * pca.eigenvalues[j]));
    }
    Ok(Scatter {
        original: data,
        augmented: extra.iter().flat_map(|s| s.frames.as_slice().to_vec()).collect(),
        axes,
    })
}

#[wasm_bindgen(js_name = scheduleCurve)]
pub fn schedule_curve_js(alpha0: f64, decay_period: usize, decay_factor: f64, iterations: usize) -> Result<Vec<f64>, JsError> {
    schedule_curve(alpha0, decay_period, decay_factor, iterations).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = domainsFromRelations)]
pub fn domains_from_relations_js(scores: Vec<f64>) -> Result<Vec<f64>, JsError> {
    domains_from_relations(&scores).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = relationNames)]
pub fn relation_names() -> Vec<String> {
    Relation::ALL.iter().map(|r| r.name().to_string()).collect()
}

#[wasm_bindgen(js_name = domainNames)]
pub fn domain_names() -> Vec<String> {
    Domain::ALL.iter().map(|d| d.name().to_string()).collect()
}

/// Index of each relation's domain.
#[wasm_bindgen(js_name = relationParents)]
pub fn relation_parents() -> Vec<usize> {
    Relation::ALL.iter().map(|r| r.domain().index()).collect()
}

/// Flat `[n_original, n_augmented, original..., augmented..., axes...]`.
#[wasm_bindgen(js_name = augmentationScatter)]
pub fn augmentation_scatter_js(points: usize, sigma: f64, copies: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let s = augmentation_scatter(points, sigma, copies, seed).map_err(|e| JsError::new(&e))?;
    let mut out = vec![(s.original.len() / 2) as f64, (s.augmented.len() / 2) as f64];
    out.extend(s.original);
    out.extend(s.augmented);
    out.extend(s.axes);
    Ok(out)
}
