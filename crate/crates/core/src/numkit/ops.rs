//! Softmax and cross-entropy primitives.

use alloc::format;

use crate::error::{Error, Result};
use crate::numkit::Tensor;

const TARGET_SUM_TOL: f64 = 1e-5;

/// In-place, max-shifted softmax of one row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log(softmax(row))`, written into `out`.
pub fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

/// Softmax over the last dimension.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if !logits.is_finite() {
        return Err(Error::NonFiniteLogits);
    }
    let k = logits.last_dim();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        softmax_row(row);
    }
    Ok(out)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean over the batch of `-sum_j target_j * log softmax(logits)_j`.
pub fn cross_entropy(logits: &Tensor, soft_targets: &Tensor) -> Result<f64> {
    if logits.shape().len() != 2 || logits.shape() != soft_targets.shape() {
        return Err(Error::Shape(format!(
            "cross_entropy expects matching [b, k] shapes, got {:?} and {:?}",
            logits.shape(),
            soft_targets.shape()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::NonFiniteLogits);
    }
    let k = logits.last_dim();
    for (row, t) in soft_targets.data().chunks(k).enumerate() {
        let sum: f64 = t.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > TARGET_SUM_TOL || t.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidTargets { row, sum });
        }
    }
    Ok(cross_entropy_unchecked(logits.data(), soft_targets.data(), k))
}

/// Cross-entropy over flat `[b * k]` buffers without validation.
pub(crate) fn cross_entropy_unchecked(logits: &[f64], targets: &[f64], k: usize) -> f64 {
    let b = logits.len() / k;
    let mut scratch = alloc::vec![0.0; k];
    let mut total = 0.0;
    for (z, y) in logits.chunks(k).zip(targets.chunks(k)) {
        log_softmax_row(z, &mut scratch);
        total -= y.iter().zip(&scratch).map(|(a, b)| a * b).sum::<f64>();
    }
    total / b as f64
}
