use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{NUM_DOMAINS, NUM_RELATIONS};

const LOG_FLOOR: f64 = 1e-12;

/// Per-class loss weights for each task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub domain: Vec<f64>,
    pub relation: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights {
            domain: vec![1.0; NUM_DOMAINS],
            relation: vec![1.0; NUM_RELATIONS],
        }
    }

    /// Inverse-frequency weights from label counts.
    pub fn from_counts(domain_counts: &[usize], relation_counts: &[usize]) -> Self {
        ClassWeights {
            domain: class_weights(domain_counts),
            relation: class_weights(relation_counts),
        }
    }
}

/// `w_c = N / (C · max(n_c, 1))`: unit weights under balance, zero-count
/// classes get `N / C`.
pub fn class_weights(label_counts: &[usize]) -> Vec<f64> {
    let total: usize = label_counts.iter().sum();
    let classes = label_counts.len() as f64;
    if total == 0 {
        return vec![1.0; label_counts.len()];
    }
    label_counts
        .iter()
        .map(|n| total as f64 / (classes * (*n).max(1) as f64))
        .collect()
}

/// `-w[label] · ln(p[label] + 1e-12)`.
pub fn weighted_cross_entropy(probs: &[f64], label: usize, weights: &[f64]) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    if weights.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} class weights for {} classes",
            weights.len(),
            probs.len()
        )));
    }
    Ok(-weights[label] * (probs[label] + LOG_FLOOR).ln())
}

/// Gradient of `scale · weighted_cross_entropy(softmax(z))` w.r.t. the
/// logits `z`, given `p = softmax(z)`.
pub(crate) fn logit_gradient(probs: &[f64], label: usize, weights: &[f64], scale: f64) -> Result<Vec<f64>> {
    if label >= probs.len() || weights.len() != probs.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} / {} weights do not fit {} classes",
            weights.len(),
            probs.len()
        )));
    }
    let py = probs[label];
    let coeff = scale * weights[label] * py / (py + LOG_FLOOR);
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, p)| coeff * (p - if j == label { 1.0 } else { 0.0 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights(&[10, 10]), vec![1.0, 1.0]);
        let w = class_weights(&[30, 10]);
        assert!((w[0] - 40.0 / 60.0).abs() < 1e-15);
        assert!((w[1] - 2.0).abs() < 1e-15);
        let z = class_weights(&[4, 0]);
        assert_eq!(z, vec![0.5, 2.0]);
        assert!(z.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let p = [0.0, 1.0, 0.0];
        assert!(weighted_cross_entropy(&p, 1, &[1.0; 3]).unwrap().abs() < 1e-11);
        let u = [0.2; 5];
        let l = weighted_cross_entropy(&u, 3, &[1.0; 5]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-10);
        let mut w = [1.0; 5];
        w[3] = 2.0;
        let l2 = weighted_cross_entropy(&u, 3, &w).unwrap();
        assert!((l2 - 2.0 * l).abs() < 1e-15);
        assert!(weighted_cross_entropy(&u, 5, &[1.0; 5]).is_err());
    }
}
