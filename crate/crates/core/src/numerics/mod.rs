//! Shared math: a plain row-major matrix, a splittable seeded RNG,
//! activations, KL divergence and PCA.

mod matrix;
mod pca;
mod rng;

pub use matrix::Matrix;
pub use pca::{pca_fit, pca_inverse, pca_transform, PcaModel};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Numerically stable softmax. Rejects non-finite logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("logit {i} is not finite")));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax without input validation, for hot paths that already guarantee
/// finite values.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// KL(p ‖ q) after adding `eps` to every entry of both distributions and
/// renormalizing. Always finite.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("smoothing eps must be positive, got {eps}")));
    }
    for (name, dist) in [("p", p), ("q", q)] {
        if let Some(i) = dist.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(format!("{name}[{i}] is negative or not finite")));
        }
        let s: f64 = dist.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("{name} sums to {s}, expected 1")));
        }
    }
    let n = p.len() as f64;
    let ps: f64 = p.iter().sum::<f64>() + n * eps;
    let qs: f64 = q.iter().sum::<f64>() + n * eps;
    let kl = p
        .iter()
        .zip(q)
        .map(|(pi, qi)| {
            let a = (pi + eps) / ps;
            let b = (qi + eps) / qs;
            a * (a / b).ln()
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}
