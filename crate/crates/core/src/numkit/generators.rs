//! Seeded synthetic image datasets.
//!
//! Both generators emit pixels in `[0, 1]` and return a train split and a test
//! split drawn from the same underlying distribution.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numkit::{LabeledDataset, Rng, Tensor};

/// Gaussian blobs rendered as images.
///
/// Every class owns a dominant prototype pattern (the easy mode) plus a few
/// rare sub-modes that blend the prototype with another class's prototype and
/// a private pattern (the hard, long-tail modes).
#[derive(Debug, Clone, PartialEq)]
pub struct BlobsSpec {
    pub num_classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Pixel noise around each mode center.
    pub noise: f64,
    /// Probability that a sample comes from one of the hard sub-modes.
    pub hard_fraction: f64,
    pub hard_modes: usize,
    /// Weight of the foreign class prototype inside a hard sub-mode.
    pub confusion: f64,
    pub seed: u64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            channels: 1,
            height: 8,
            width: 8,
            train_per_class: 100,
            test_per_class: 100,
            noise: 0.6,
            hard_fraction: 0.3,
            hard_modes: 3,
            confusion: 0.7,
            seed: 0,
        }
    }
}

fn smooth_pattern(rng: &mut Rng, c: usize, h: usize, w: usize) -> Vec<f64> {
    // Sum of a few random Gaussian bumps per channel, then unit RMS.
    let mut out = alloc::vec![0.0; c * h * w];
    for ch in 0..c {
        for _ in 0..3 {
            let cy = rng.uniform() * h as f64;
            let cx = rng.uniform() * w as f64;
            let width = 1.0 + rng.uniform() * (h.max(w) as f64 / 3.0);
            let amp = rng.normal();
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let d2 = dy * dy + dx * dx;
                    out[ch * h * w + y * w + x] += amp * libm::exp(-d2 / (2.0 * width * width));
                }
            }
        }
    }
    let rms = libm::sqrt(out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64).max(1e-12);
    for v in &mut out {
        *v /= rms;
    }
    out
}

fn to_pixel(v: f64) -> f64 {
    (0.5 + 0.18 * v).clamp(0.0, 1.0)
}

impl BlobsSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("invalid blobs geometry {self:?}")));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("blobs splits need at least one sample per class".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) || (self.hard_fraction > 0.0 && self.hard_modes == 0) {
            return Err(Error::Config("hard_fraction must be in [0,1] with hard_modes > 0".into()));
        }
        Ok(())
    }

    /// Returns `(train, test)`.
    pub fn generate(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        self.validate()?;
        let (k, c, h, w) = (self.num_classes, self.channels, self.height, self.width);
        let root = Rng::new(self.seed);
        let mut proto_rng = root.split("prototypes");
        let prototypes: Vec<Vec<f64>> = (0..k).map(|_| smooth_pattern(&mut proto_rng, c, h, w)).collect();
        let mut hard: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
        for class in 0..k {
            let mut modes = Vec::with_capacity(self.hard_modes);
            for _ in 0..self.hard_modes {
                let mut other = proto_rng.below(k - 1);
                if other >= class {
                    other += 1;
                }
                let private = smooth_pattern(&mut proto_rng, c, h, w);
                let a = self.confusion;
                let mode = prototypes[class]
                    .iter()
                    .zip(&prototypes[other])
                    .zip(&private)
                    .map(|((p, q), r)| (1.0 - a) * p + a * q + 0.8 * r)
                    .collect();
                modes.push(mode);
            }
            hard.push(modes);
        }
        let split = |tag: &str, per_class: usize| -> Result<LabeledDataset> {
            let mut rng = root.split(tag);
            let n = per_class * k;
            let d = c * h * w;
            let mut data = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let class = i % k;
                let center = if rng.uniform() < self.hard_fraction {
                    &hard[class][rng.below(self.hard_modes)]
                } else {
                    &prototypes[class]
                };
                for &m in center {
                    data.push(to_pixel(m + self.noise * rng.normal()));
                }
                labels.push(class);
            }
            let images = Tensor::new(alloc::vec![n, c, h, w], data)?;
            LabeledDataset::new(images, labels, k, format!("blobs-{tag}"))
        };
        Ok((split("train", self.train_per_class)?, split("test", self.test_per_class)?))
    }
}

/// Two interleaved half-moons lifted to images by a fixed random linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct MoonsSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for MoonsSpec {
    fn default() -> Self {
        Self { channels: 1, height: 8, width: 8, train_per_class: 100, test_per_class: 100, noise: 0.1, seed: 0 }
    }
}

impl MoonsSpec {
    pub fn generate(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("moons splits need at least one sample per class".into()));
        }
        let (c, h, w) = (self.channels, self.height, self.width);
        let d = c * h * w;
        let root = Rng::new(self.seed);
        let mut lift_rng = root.split("lift");
        let u = smooth_pattern(&mut lift_rng, c, h, w);
        let v = smooth_pattern(&mut lift_rng, c, h, w);
        let split = |tag: &str, per_class: usize| -> Result<LabeledDataset> {
            let mut rng = root.split(tag);
            let n = 2 * per_class;
            let mut data = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let class = i % 2;
                let angle = rng.uniform() * core::f64::consts::PI;
                let (mut x, mut y) = if class == 0 {
                    (libm::cos(angle), libm::sin(angle))
                } else {
                    (1.0 - libm::cos(angle), 0.5 - libm::sin(angle))
                };
                x += self.noise * rng.normal() - 0.5;
                y += self.noise * rng.normal() - 0.25;
                for j in 0..d {
                    data.push(to_pixel(1.5 * (x * u[j] + y * v[j]) + 0.05 * rng.normal()));
                }
                labels.push(class);
            }
            let images = Tensor::new(alloc::vec![n, c, h, w], data)?;
            LabeledDataset::new(images, labels, 2, format!("moons-{tag}"))
        };
        Ok((split("train", self.train_per_class)?, split("test", self.test_per_class)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_shapes_and_determinism() {
        let spec = BlobsSpec { train_per_class: 5, test_per_class: 3, ..Default::default() };
        let (tr, te) = spec.generate().unwrap();
        assert_eq!(tr.images.shape(), &[50, 1, 8, 8]);
        assert_eq!(te.len(), 30);
        assert_eq!(tr.class_counts(), alloc::vec![5; 10]);
        assert!(tr.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (tr2, _) = spec.generate().unwrap();
        assert_eq!(tr, tr2);
        let (tr3, _) = BlobsSpec { seed: 1, ..spec }.generate().unwrap();
        assert_ne!(tr.images, tr3.images);
    }

    #[test]
    fn moons_two_classes() {
        let (tr, te) = MoonsSpec { train_per_class: 4, test_per_class: 2, ..Default::default() }.generate().unwrap();
        assert_eq!(tr.num_classes, 2);
        assert_eq!(tr.len(), 8);
        assert_eq!(te.len(), 4);
        assert!(tr.validate_source().is_ok());
    }
}
