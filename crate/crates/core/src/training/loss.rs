use alloc::vec::Vec;

use crate::encoding::argmax;
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `softmax(scores) - one_hot(label)`.
    pub d_scores: Vec<f64>,
}

/// Softmax cross-entropy of spike-count scores against a class label.
pub fn cross_entropy_loss(scores: &[f64], label: usize) -> Result<LossOutput> {
    if label >= scores.len() {
        return Err(shape_err(alloc::format!("label < {}", scores.len()), label));
    }
    let top = argmax(scores);
    let max = scores[top];
    let rest: f64 = scores.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, &s)| libm::exp(s - max)).sum();
    // log-sum-exp minus the label score, kept accurate when the label dominates
    let loss = (max - scores[label]) + libm::log1p(rest);
    let norm = 1.0 + rest;
    let d_scores = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| libm::exp(s - max) / norm - (i == label) as u8 as f64)
        .collect();
    Ok(LossOutput { loss, d_scores })
}
