//! Multitask objective: cross-entropy on class logits plus mean squared error
//! on normalized time, combined with nonnegative weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_class: f64,
    pub l_time: f64,
    pub l_total: f64,
}

/// Per-sample cross-entropy `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Mean cross-entropy over a batch of logit rows.
pub fn classification_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} logit rows but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let mut sum = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        sum += cross_entropy(row, y)?;
    }
    Ok(sum / logits.len() as f64)
}

/// `(1/B) * sum((t_hat - t)^2)`.
pub fn time_loss(t_hat: &[f64], t: &[f64]) -> Result<f64> {
    if t_hat.len() != t.len() {
        return Err(Error::Input(format!(
            "{} predictions but {} targets",
            t_hat.len(),
            t.len()
        )));
    }
    if t.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    Ok(t_hat.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64)
}

/// `alpha * l_class + beta * l_time`.
pub fn total_loss(l_class: f64, l_time: f64, alpha: f64, beta: f64) -> Result<LossBreakdown> {
    if !(alpha >= 0.0) || !(beta >= 0.0) {
        return Err(Error::Config(format!(
            "loss weights must be nonnegative, got alpha = {alpha}, beta = {beta}"
        )));
    }
    if l_class < 0.0 || l_time < 0.0 {
        return Err(Error::Input("loss components must be nonnegative".into()));
    }
    Ok(LossBreakdown {
        l_class,
        l_time,
        l_total: alpha * l_class + beta * l_time,
    })
}
