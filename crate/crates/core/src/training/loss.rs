//! Per-edge binary cross-entropy.

use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

pub(crate) fn clamp_prob(r: f64) -> f64 {
    r.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Probability the model assigns to `label`.
fn label_prob(r: f64, label: u8) -> f64 {
    if label == 1 {
        r
    } else {
        1.0 - r
    }
}

pub(crate) fn is_clamped(r: f64, label: u8) -> bool {
    let q = label_prob(r, label);
    clamp_prob(q) != q
}

/// `-(y ln r + (1 - y) ln(1 - r))` for one edge, with the probability of the
/// observed label clamped.
pub(crate) fn edge_term(r: f64, label: u8) -> f64 {
    -clamp_prob(label_prob(r, label)).ln()
}

/// Derivative of the unclamped term with respect to the pre-sigmoid logit.
/// This equals the derivative of [`edge_term`] wherever the clamp is
/// inactive; inside the clamp it keeps saturated edges trainable instead of
/// returning zero.
pub(crate) fn edge_term_grad(r: f64, label: u8) -> f64 {
    r - f64::from(label)
}

/// Mean per-edge binary cross-entropy.
pub fn edge_bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    let total: f64 = probs.iter().zip(labels).map(|(&r, &y)| edge_term(r, y)).sum();
    Ok(total / probs.len() as f64)
}
