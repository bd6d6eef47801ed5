//! Expert training runs and their checkpoint trajectories.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::network::loss_grad_flat;
use crate::models::{accuracy, dataset_loss, init_network, ArchSpec};
use crate::numkit::{LabeledDataset, ParamVector, Precision, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Whether the training data was ZCA-whitened. Recorded in the digest;
    /// the caller applies the transform.
    pub whitening: bool,
    pub precision: Precision,
    /// Checkpoints recorded per epoch; 1 keeps epoch granularity.
    pub checkpoints_per_epoch: usize,
}

impl Default for ExpertTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 100,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            whitening: false,
            precision: Precision::F32,
            checkpoints_per_epoch: 1,
        }
    }
}

impl ExpertTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("expert epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("expert learning rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 || self.checkpoints_per_epoch == 0 {
            return Err(Error::Config("batch size and checkpoints per epoch must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be >= 0".into()));
        }
        Ok(())
    }

    /// Canonical text of every setting except the seed.
    pub fn canonical(&self) -> String {
        format!(
            "optimizer=sgd-momentum\nepochs={}\nbatch_size={}\nlearning_rate={:e}\nmomentum={:e}\nweight_decay={:e}\nwhitening={}\nprecision={}\ncheckpoints_per_epoch={}\nloss=one-hot-ce\n",
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.momentum,
            self.weight_decay,
            self.whitening,
            self.precision.as_str(),
            self.checkpoints_per_epoch
        )
    }

    pub fn digest(&self, arch: &ArchSpec) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(arch.arch_id().as_bytes());
        h.update(b"\n");
        h.update(self.canonical().as_bytes());
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrajectory {
    pub arch_id: String,
    pub seed: u64,
    pub checkpoints: Vec<ParamVector>,
    pub config_digest: [u8; 32],
    /// Training-set loss and accuracy at each checkpoint. Not persisted in
    /// trajectory files, so loaded trajectories carry an empty log.
    pub metrics: Vec<CheckpointMetrics>,
    pub held_out: bool,
}

impl ExpertTrajectory {
    /// Number of checkpoint intervals, `n`.
    pub fn horizon(&self) -> usize {
        self.checkpoints.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.checkpoints[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.len() < 2 {
            return Err(Error::Config(format!("trajectory has {} checkpoints", self.checkpoints.len())));
        }
        let first = &self.checkpoints[0];
        if first.arch_id() != self.arch_id {
            return Err(Error::Layout(format!("checkpoint arch {} in {} trajectory", first.arch_id(), self.arch_id)));
        }
        for c in &self.checkpoints[1..] {
            c.check_layout(first)?;
        }
        Ok(())
    }
}

/// Returns `(theta_t, theta_{t+span})`.
pub fn sample_segment(traj: &ExpertTrajectory, t: usize, span: usize) -> Result<(&ParamVector, &ParamVector)> {
    let horizon = traj.horizon();
    match t.checked_add(span) {
        Some(end) if end <= horizon => Ok((&traj.checkpoints[t], &traj.checkpoints[end])),
        _ => Err(Error::SegmentOutOfRange { t, span, horizon }),
    }
}

/// Trains one expert with one-hot cross-entropy and momentum SGD, recording
/// a checkpoint every `1 / checkpoints_per_epoch` of an epoch.
pub fn train_expert(dataset: &LabeledDataset, arch: &ArchSpec, cfg: &ExpertTrainConfig) -> Result<ExpertTrajectory> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("expert training on an empty dataset".into()));
    }
    if dataset.pixel_dim() != arch.input_size() || dataset.num_classes != arch.num_classes() {
        return Err(Error::Shape(format!(
            "dataset {:?} with {} classes for {}",
            dataset.sample_shape(),
            dataset.num_classes,
            arch.arch_id()
        )));
    }
    let n = dataset.len();
    let d = arch.input_size();
    let k = arch.num_classes();
    let mut params = init_network(arch, &mut Rng::new(cfg.seed));
    cfg.precision.store(&mut params.values);
    let mut velocity = vec![0.0; params.len()];
    let mut shuffle = Rng::new(cfg.seed).split("shuffle");

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let per_ckpt = cfg.checkpoints_per_epoch;
    // Batch counts of the sub-epoch pieces, as even as possible.
    let piece_end = |j: usize| (j + 1) * steps_per_epoch / per_ckpt;

    let metrics_of = |p: &ParamVector, epoch: usize| -> Result<CheckpointMetrics> {
        let loss = dataset_loss(arch, p, dataset).map_err(|_| Error::ExpertDiverged { epoch })?;
        if !loss.is_finite() {
            return Err(Error::ExpertDiverged { epoch });
        }
        Ok(CheckpointMetrics { loss, accuracy: accuracy(arch, p, dataset)? })
    };

    let mut checkpoints = vec![params.clone()];
    let mut metrics = vec![metrics_of(&params, 0)?];
    let mut order: Vec<usize> = (0..n).collect();
    let mut x = Vec::with_capacity(cfg.batch_size * d);
    let mut y = Vec::with_capacity(cfg.batch_size * k);
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut step = 0;
        for piece in 0..per_ckpt {
            while step < piece_end(piece) {
                let rows = &order[step * cfg.batch_size..((step + 1) * cfg.batch_size).min(n)];
                x.clear();
                y.clear();
                for &r in rows {
                    x.extend_from_slice(dataset.images.row(r));
                    let mut onehot = vec![0.0; k];
                    onehot[dataset.labels[r]] = 1.0;
                    y.extend_from_slice(&onehot);
                }
                let (loss, grad) = loss_grad_flat(arch, &params.values, &x, &y, rows.len());
                if !loss.is_finite() {
                    return Err(Error::ExpertDiverged { epoch });
                }
                for ((p, v), g) in params.values.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
                    *p -= cfg.learning_rate * *v;
                }
                cfg.precision.store(&mut params.values);
                cfg.precision.store(&mut velocity);
                if params.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::ExpertDiverged { epoch });
                }
                step += 1;
            }
            checkpoints.push(params.clone());
            metrics.push(metrics_of(&params, epoch)?);
        }
    }
    Ok(ExpertTrajectory {
        arch_id: arch.arch_id().into(),
        seed: cfg.seed,
        checkpoints,
        config_digest: cfg.digest(arch),
        metrics,
        held_out: false,
    })
}

/// A set of expert trajectories, one of which is reserved for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBuffer {
    pub trajectories: Vec<ExpertTrajectory>,
}

impl ExpertBuffer {
    /// Marks `held_out` (default: the last index) as reserved.
    pub fn new(mut trajectories: Vec<ExpertTrajectory>, held_out: Option<usize>) -> Result<Self> {
        if trajectories.len() < 2 {
            return Err(Error::Config(format!("expert buffer needs >= 2 trajectories, got {}", trajectories.len())));
        }
        let h = held_out.unwrap_or(trajectories.len() - 1);
        if h >= trajectories.len() {
            return Err(Error::Config(format!("held-out index {h} out of range")));
        }
        for (i, t) in trajectories.iter_mut().enumerate() {
            t.validate()?;
            t.held_out = i == h;
        }
        let buffer = Self { trajectories };
        buffer.validate()?;
        Ok(buffer)
    }

    /// Accepts trajectories whose held-out flags are already set.
    pub fn from_flagged(trajectories: Vec<ExpertTrajectory>) -> Result<Self> {
        let buffer = Self { trajectories };
        buffer.validate()?;
        Ok(buffer)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.trajectories.first().ok_or_else(|| Error::Config("empty expert buffer".into()))?;
        for t in &self.trajectories {
            t.validate()?;
            if t.arch_id != first.arch_id || t.checkpoints.len() != first.checkpoints.len() {
                return Err(Error::Layout(format!(
                    "mixed trajectories: {} x{} vs {} x{}",
                    t.arch_id,
                    t.checkpoints.len(),
                    first.arch_id,
                    first.checkpoints.len()
                )));
            }
        }
        let held = self.trajectories.iter().filter(|t| t.held_out).count();
        if held != 1 {
            return Err(Error::Config(format!("expected exactly one held-out trajectory, found {held}")));
        }
        if self.trajectories.len() < 2 {
            return Err(Error::Config("expert buffer needs a trajectory besides the held-out one".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].horizon()
    }

    pub fn arch_id(&self) -> &str {
        &self.trajectories[0].arch_id
    }

    pub fn held_out_index(&self) -> usize {
        self.trajectories.iter().position(|t| t.held_out).expect("validated")
    }

    pub fn held_out(&self) -> &ExpertTrajectory {
        &self.trajectories[self.held_out_index()]
    }

    /// Indices of trajectories available for distillation.
    pub fn training_indices(&self) -> Vec<usize> {
        (0..self.trajectories.len()).filter(|&i| !self.trajectories[i].held_out).collect()
    }
}

/// Trains `count` experts with seeds `base_seed..base_seed + count`, the
/// last held out.
pub fn generate_expert_buffer(
    dataset: &LabeledDataset,
    arch: &ArchSpec,
    cfg: &ExpertTrainConfig,
    count: usize,
    base_seed: u64,
) -> Result<ExpertBuffer> {
    if count < 2 {
        return Err(Error::Config(format!("expert count must be >= 2, got {count}")));
    }
    let trajectories = (0..count as u64)
        .map(|i| train_expert(dataset, arch, &ExpertTrainConfig { seed: base_seed + i, ..cfg.clone() }))
        .collect::<Result<Vec<_>>>()?;
    ExpertBuffer::new(trajectories, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{prepare_splits, BlobsSpec};

    fn toy() -> LabeledDataset {
        let spec = BlobsSpec { train_per_class: 30, test_per_class: 1, ..BlobsSpec::default() };
        let (train, test) = spec.generate().unwrap();
        prepare_splits(&train, &test, None).unwrap().train
    }

    fn arch() -> ArchSpec {
        ArchSpec::new("mlp-16", (1, 8, 8), 10).unwrap()
    }

    #[test]
    fn one_epoch_gives_two_checkpoints() {
        let cfg = ExpertTrainConfig { epochs: 1, ..Default::default() };
        let traj = train_expert(&toy(), &arch(), &cfg).unwrap();
        assert_eq!(traj.checkpoints.len(), 2);
        let mut init = init_network(&arch(), &mut Rng::new(0));
        Precision::F32.store(&mut init.values);
        assert_eq!(traj.checkpoints[0], init);
        assert_eq!(traj.metrics.len(), 2);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let ds = toy();
        let cfg = ExpertTrainConfig { epochs: 6, ..Default::default() };
        let a = train_expert(&ds, &arch(), &cfg).unwrap();
        let b = train_expert(&ds, &arch(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.metrics[6].loss < a.metrics[0].loss);
    }

    #[test]
    fn sub_epoch_checkpoints() {
        let cfg = ExpertTrainConfig { epochs: 2, checkpoints_per_epoch: 3, ..Default::default() };
        let traj = train_expert(&toy(), &arch(), &cfg).unwrap();
        assert_eq!(traj.horizon(), 6);
        assert_ne!(traj.checkpoints[1], traj.checkpoints[2]);
    }

    #[test]
    fn segment_bounds() {
        let cfg = ExpertTrainConfig { epochs: 3, ..Default::default() };
        let traj = train_expert(&toy(), &arch(), &cfg).unwrap();
        let (a, b) = sample_segment(&traj, 0, 3).unwrap();
        assert!(core::ptr::eq(a, &traj.checkpoints[0]) && core::ptr::eq(b, &traj.checkpoints[3]));
        let (a, b) = sample_segment(&traj, 1, 0).unwrap();
        assert_eq!(a, b);
        assert!(sample_segment(&traj, 1, 2).is_ok());
        assert!(matches!(sample_segment(&traj, 2, 2), Err(Error::SegmentOutOfRange { t: 2, span: 2, horizon: 3 })));
    }

    #[test]
    fn buffer_holds_out_last() {
        let cfg = ExpertTrainConfig { epochs: 1, ..Default::default() };
        let buf = generate_expert_buffer(&toy(), &arch(), &cfg, 2, 7).unwrap();
        assert_eq!(buf.held_out_index(), 1);
        assert_eq!(buf.training_indices(), vec![0]);
        assert_eq!(buf.trajectories[0].seed, 7);
        assert_ne!(buf.trajectories[0].checkpoints[0], buf.trajectories[1].checkpoints[0]);
        assert!(generate_expert_buffer(&toy(), &arch(), &cfg, 1, 0).is_err());
    }

    #[test]
    fn divergence_names_epoch() {
        let cfg = ExpertTrainConfig { epochs: 3, learning_rate: 1e200, momentum: 0.0, ..Default::default() };
        assert!(matches!(train_expert(&toy(), &arch(), &cfg), Err(Error::ExpertDiverged { epoch: 1 })));
    }

    #[test]
    fn digest_tracks_settings_not_seed() {
        let a = ExpertTrainConfig::default();
        let b = ExpertTrainConfig { seed: 9, ..a.clone() };
        let c = ExpertTrainConfig { momentum: 0.5, ..a.clone() };
        assert_eq!(a.digest(&arch()), b.digest(&arch()));
        assert_ne!(a.digest(&arch()), c.digest(&arch()));
    }
}
