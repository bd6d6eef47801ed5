//! ZCA whitening fitted on a training split.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numkit::LabeledDataset;

pub const DEFAULT_ZCA_EPSILON: f64 = 1e-6;

/// `x -> W (x - mean)` with `W = E diag(1/sqrt(lambda + eps)) E^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub matrix: Vec<f64>,
    pub epsilon: f64,
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * d..(i + 1) * d];
            *o = row.iter().zip(&centered).map(|(w, c)| w * c).sum();
        }
    }

    pub fn apply(&self, dataset: &LabeledDataset) -> Result<LabeledDataset> {
        if dataset.pixel_dim() != self.dim() {
            return Err(Error::Shape(format!(
                "whitening fitted for {} pixels, dataset has {}",
                self.dim(),
                dataset.pixel_dim()
            )));
        }
        let mut out = dataset.clone();
        let d = self.dim();
        for i in 0..dataset.len() {
            let src = dataset.images.row(i);
            let dst = &mut out.images.data_mut()[i * d..(i + 1) * d];
            self.apply_row(src, dst);
        }
        Ok(out)
    }
}

/// Fits ZCA whitening on `dataset` and returns the whitened copy with the transform.
pub fn zca_whiten(dataset: &LabeledDataset, epsilon: f64) -> Result<(LabeledDataset, WhiteningTransform)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Dataset(format!("ZCA needs at least 2 samples, got {n}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("ZCA epsilon must be positive, got {epsilon}")));
    }
    if !dataset.images.is_finite() {
        return Err(Error::NonFinite("ZCA input"));
    }
    let d = dataset.pixel_dim();
    let x = DMatrix::from_row_slice(n, d, dataset.images.data());
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut centered = x;
    for (j, m) in mean.iter().enumerate() {
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / n as f64;
    let trace = cov.trace();
    let max_abs = cov.amax();
    let eig = SymmetricEigen::try_new(cov, 1e-14, 100_000).ok_or_else(|| {
        Error::Eigen(format!(
            "no convergence for {d}x{d} covariance (trace {trace:e}, max |c| {max_abs:e})"
        ))
    })?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen(format!("non-finite eigenvalues (trace {trace:e})")));
    }
    let scale: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| 1.0 / libm::sqrt(l.max(0.0) + epsilon))
        .collect();
    let mut scaled = eig.eigenvectors.clone();
    for (j, s) in scale.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    let w = scaled * eig.eigenvectors.transpose();
    let mut matrix = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            // Symmetrize so the stored transform is exactly symmetric.
            matrix.push(0.5 * (w[(i, j)] + w[(j, i)]));
        }
    }
    let transform = WhiteningTransform { mean, matrix, epsilon };
    let whitened = transform.apply(dataset)?;
    Ok((whitened, transform))
}
