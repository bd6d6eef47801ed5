use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Per-channel standardization constants, `x' = (x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn denormalize(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `[n, channels, height, width]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
    /// Standardization already applied to `images`, if any.
    pub normalization: Option<ChannelStats>,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self { images, labels, num_classes, name: name.into(), normalization: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.shape().len() != 4 {
            return Err(Error::Dataset(format!(
                "images must be [n, c, h, w], got {:?}",
                self.images.shape()
            )));
        }
        if self.images.rows() != self.labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                self.images.rows(),
                self.labels.len()
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Dataset("num_classes must be positive".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Dataset(format!("label {bad} >= num_classes {}", self.num_classes)));
        }
        if !self.images.is_finite() {
            return Err(Error::NonFinite("dataset images"));
        }
        Ok(())
    }

    /// Additional checks for datasets that seed a distillation run.
    pub fn validate_source(&self) -> Result<()> {
        self.validate()?;
        let counts = self.class_counts();
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Dataset(format!("class {c} has no samples")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(channels, height, width)`.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn pixel_dim(&self) -> usize {
        self.images.row_len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices grouped by class, each group in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Per-channel mean and population standard deviation of the pixels.
    pub fn channel_stats(&self) -> ChannelStats {
        let (c, h, w) = self.sample_shape();
        let plane = h * w;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for img in self.images.data().chunks(c * plane) {
            for ch in 0..c {
                for &v in &img[ch * plane..(ch + 1) * plane] {
                    mean[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (self.len() * plane) as f64;
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= count;
                let var = (s / count - *m * *m).max(0.0);
                let sd = libm::sqrt(var);
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        ChannelStats { mean, std }
    }

    /// Applies per-channel standardization and records the constants.
    pub fn standardized(&self, stats: &ChannelStats) -> Result<LabeledDataset> {
        let (c, h, w) = self.sample_shape();
        if stats.mean.len() != c || stats.std.len() != c {
            return Err(Error::Shape(format!("{} channel stats for {c} channels", stats.mean.len())));
        }
        let plane = h * w;
        let mut out = self.clone();
        for img in out.images.data_mut().chunks_mut(c * plane) {
            for ch in 0..c {
                for v in &mut img[ch * plane..(ch + 1) * plane] {
                    *v = (*v - stats.mean[ch]) / stats.std[ch];
                }
            }
        }
        out.normalization = Some(stats.clone());
        Ok(out)
    }
}
