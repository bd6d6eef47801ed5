use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ClassDeficit, Error, Result};
use crate::models::{forward, ArchSpec};
use crate::numkit::{argmax, softmax, softmax_row, ChannelStats, LabeledDataset, ParamVector, Precision, Rng, Tensor};

/// Logit placed on the target class of a one-hot row; every other entry is 0.
pub const ONE_HOT_MARGIN: f64 = 100.0;

/// Lower bound applied to the inner learning rate after every update.
pub const MIN_ALPHA: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    SoftLearned,
    SoftFixed,
    OneHot,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::SoftLearned => "soft-learned",
            LabelMode::SoftFixed => "soft-fixed",
            LabelMode::OneHot => "one-hot",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "soft-learned" => Ok(LabelMode::SoftLearned),
            "soft-fixed" => Ok(LabelMode::SoftFixed),
            "one-hot" => Ok(LabelMode::OneHot),
            _ => Err(Error::Config(format!("unknown label mode {s:?}"))),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            LabelMode::SoftLearned => 0,
            LabelMode::SoftFixed => 1,
            LabelMode::OneHot => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(LabelMode::SoftLearned),
            1 => Ok(LabelMode::SoftFixed),
            2 => Ok(LabelMode::OneHot),
            _ => Err(Error::Config(format!("unknown label mode code {code}"))),
        }
    }

    pub fn learns_labels(self) -> bool {
        self == LabelMode::SoftLearned
    }
}

/// Where a synthetic set came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    /// Row `i` of the synthetic set was initialized from this source index.
    pub source_indices: Vec<usize>,
    /// e.g. `expert0@10`, or `none` for sets not labeled by a model.
    pub labeling_checkpoint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    /// `[ipc * k, c, h, w]`, class-major: rows `c*ipc .. (c+1)*ipc` belong to class `c`.
    pub images: Tensor,
    /// `[ipc * k, k]`.
    pub logits: Tensor,
    pub alpha: f64,
    pub targets: Vec<usize>,
    pub label_mode: LabelMode,
    pub provenance: Provenance,
    /// Standardization constants of the source data, for export.
    pub normalization: Option<ChannelStats>,
}

fn one_hot_logits(targets: &[usize], k: usize) -> Tensor {
    let mut data = vec![0.0; targets.len() * k];
    for (row, &t) in targets.iter().enumerate() {
        data[row * k + t] = ONE_HOT_MARGIN;
    }
    Tensor::from_rows(targets.len(), k, data).expect("shape")
}

impl SyntheticSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.row_len()
    }

    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Rows per class when the set is class-balanced.
    pub fn ipc(&self) -> usize {
        self.len() / self.num_classes()
    }

    pub fn soft_labels(&self) -> Result<Tensor> {
        softmax(&self.logits)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.targets.len();
        let shape = self.images.shape();
        if shape.len() != 4 || shape[0] != n {
            return Err(Error::Shape(format!("synthetic images {shape:?} for {n} rows")));
        }
        let k = self.logits.row_len();
        if self.logits.shape() != [n, k] {
            return Err(Error::Shape(format!("synthetic logits {:?} for {n} rows", self.logits.shape())));
        }
        if let Some(&bad) = self.targets.iter().find(|&&t| t >= k) {
            return Err(Error::Dataset(format!("target class {bad} with {k} classes")));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("inner learning rate {} must be > 0", self.alpha)));
        }
        if !self.images.is_finite() {
            return Err(Error::NonFinite("synthetic images"));
        }
        if !self.logits.is_finite() {
            return Err(Error::NonFiniteLogits);
        }
        Ok(())
    }

    /// Wraps dataset rows as a one-hot synthetic set, e.g. for baselines.
    pub fn from_dataset(dataset: &LabeledDataset, indices: &[usize], alpha: f64, seed: u64) -> Result<Self> {
        let images = dataset.images.select_rows(indices);
        let targets: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
        let set = Self {
            images,
            logits: one_hot_logits(&targets, dataset.num_classes),
            alpha,
            targets,
            label_mode: LabelMode::OneHot,
            provenance: Provenance {
                seed,
                source_indices: indices.to_vec(),
                labeling_checkpoint: "none".into(),
            },
            normalization: dataset.normalization.clone(),
        };
        set.validate()?;
        Ok(set)
    }
}

/// Indices of samples the labeling model classifies correctly.
pub fn build_correct_subset(dataset: &LabeledDataset, arch: &ArchSpec, labeling: &ParamVector) -> Result<Vec<usize>> {
    let mut keep = Vec::new();
    let chunk = 512;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + chunk).min(dataset.len());
        let idx: Vec<usize> = (start..end).collect();
        let logits = forward(arch, labeling, &dataset.images.select_rows(&idx))?;
        for (i, row) in idx.iter().zip(logits.data().chunks(arch.num_classes())) {
            if argmax(row) == dataset.labels[*i] {
                keep.push(*i);
            }
        }
        start = end;
    }
    let mut present = vec![false; dataset.num_classes];
    for &i in &keep {
        present[dataset.labels[i]] = true;
    }
    if let Some(class) = present.iter().position(|p| !p) {
        return Err(Error::ClassExhausted { class });
    }
    Ok(keep)
}

/// Draws `ipc` filtered samples per class and labels them with the raw
/// logits of the labeling model.
#[allow(clippy::too_many_arguments)]
pub fn init_synthetic(
    dataset: &LabeledDataset,
    subset: &[usize],
    ipc: usize,
    arch: &ArchSpec,
    labeling: &ParamVector,
    labeling_id: &str,
    label_mode: LabelMode,
    alpha: f64,
    precision: Precision,
    rng: &mut Rng,
) -> Result<SyntheticSet> {
    if ipc == 0 {
        return Err(Error::Config("ipc must be >= 1".into()));
    }
    let k = dataset.num_classes;
    let mut by_class = vec![Vec::new(); k];
    for &i in subset {
        by_class[dataset.labels[i]].push(i);
    }
    let deficits: Vec<ClassDeficit> = by_class
        .iter()
        .enumerate()
        .filter(|(_, v)| v.len() < ipc)
        .map(|(class, v)| ClassDeficit { class, available: v.len(), required: ipc })
        .collect();
    if !deficits.is_empty() {
        return Err(Error::InsufficientSamples(deficits));
    }
    let mut chosen = Vec::with_capacity(ipc * k);
    for members in &by_class {
        let mut pick: Vec<usize> = rng.choose_indices(members.len(), ipc).into_iter().map(|j| members[j]).collect();
        pick.sort_unstable();
        chosen.extend(pick);
    }
    let mut images = dataset.images.select_rows(&chosen);
    precision.store(images.data_mut());
    let targets: Vec<usize> = chosen.iter().map(|&i| dataset.labels[i]).collect();
    let logits = match label_mode {
        LabelMode::OneHot => one_hot_logits(&targets, k),
        _ => {
            let mut l = forward(arch, labeling, &images)?;
            precision.store(l.data_mut());
            l
        }
    };
    let set = SyntheticSet {
        images,
        logits,
        alpha,
        targets,
        label_mode,
        provenance: Provenance { seed: rng.seed(), source_indices: chosen, labeling_checkpoint: labeling_id.into() },
        normalization: dataset.normalization.clone(),
    };
    set.validate()?;
    Ok(set)
}

/// Mean over rows of the population standard deviation of `softmax(row)`.
pub fn label_std_stat(set: &SyntheticSet) -> f64 {
    let k = set.num_classes();
    let mut p = vec![0.0; k];
    let mut total = 0.0;
    for row in set.logits.data().chunks(k) {
        p.copy_from_slice(row);
        softmax_row(&mut p);
        let mean = 1.0 / k as f64;
        let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
        total += libm::sqrt(var);
    }
    total / set.len() as f64
}
