//! Student evaluation, baselines and diagnostics.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::distill::{distill, segment_loss, DistillConfig, MatchWindow, SyntheticSet};
use crate::error::{ClassDeficit, Error, Result};
use crate::experts::{sample_segment, ExpertBuffer, ExpertTrajectory};
use crate::models::network::{loss_grad_flat, forward_pass};
use crate::models::{accuracy, init_network, ArchSpec, BatchPlan, UnrollInput};
use crate::numkit::{cross_entropy_unchecked, LabeledDataset, ParamVector, Rng};

/// Student learning rate for sets without a learned one; matches the
/// effective step of the default expert optimizer, 0.01 / (1 - 0.9).
pub const DEFAULT_BASELINE_LR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub epochs: usize,
    pub trials: usize,
    pub batch_size: usize,
    /// Replaces the set's learned learning rate.
    pub lr_override: Option<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { epochs: 300, trials: 5, batch_size: 256, lr_override: None, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.trials == 0 || self.batch_size == 0 {
            return Err(Error::Config("eval epochs, trials and batch size must be >= 1".into()));
        }
        if let Some(lr) = self.lr_override {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("eval learning rate {lr} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        format!(
            "student=plain-sgd\nepochs={}\ntrials={}\nbatch_size={}\nlr={}\nseed={}\n",
            self.epochs,
            self.trials,
            self.batch_size,
            self.lr_override.map_or("learned-alpha".to_string(), |v| format!("{v:e}")),
            self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportTag {
    Datm,
    RandomSubset,
    FullData,
}

impl ReportTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportTag::Datm => "datm",
            ReportTag::RandomSubset => "random-subset",
            ReportTag::FullData => "full-data",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub arch_id: String,
    pub trial: usize,
    pub acc: f64,
    /// The student diverged and the best earlier checkpoint was scored.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tag: ReportTag,
    pub rows: Vec<TrialResult>,
    pub learning_rate: f64,
    pub digest: [u8; 32],
}

impl EvalReport {
    pub fn accuracies(&self, arch_id: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.arch_id == arch_id).map(|r| r.acc).collect()
    }

    /// Mean and sample standard deviation of one architecture's trials.
    pub fn summary(&self, arch_id: &str) -> (f64, f64) {
        mean_std(&self.accuracies(arch_id))
    }
}

/// Mean and sample (n - 1) standard deviation; the deviation is 0 for fewer
/// than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

/// Plain SGD on soft targets. Returns the final parameters, or the
/// lowest-loss epoch checkpoint if training diverges.
pub fn train_student(
    arch: &ArchSpec,
    images: &[f64],
    targets: &[f64],
    lr: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> (ParamVector, bool) {
    let d = arch.input_size();
    let k = arch.num_classes();
    let n = targets.len() / k;
    let mut params = init_network(arch, rng);
    let mut best = (f64::INFINITY, params.clone());
    let mut order: Vec<usize> = (0..n).collect();
    let mut x = Vec::with_capacity(batch_size.min(n) * d);
    let mut y = Vec::with_capacity(batch_size.min(n) * k);
    for _ in 0..epochs {
        if n > batch_size {
            rng.shuffle(&mut order);
        }
        for rows in order.chunks(batch_size) {
            x.clear();
            y.clear();
            for &r in rows {
                x.extend_from_slice(&images[r * d..(r + 1) * d]);
                y.extend_from_slice(&targets[r * k..(r + 1) * k]);
            }
            let (_, grad) = loss_grad_flat(arch, &params.values, &x, &y, rows.len());
            for (p, g) in params.values.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            if params.values.iter().any(|v| !v.is_finite() || v.abs() > crate::models::DIVERGENCE_LIMIT) {
                return (best.1, true);
            }
        }
        let logits = forward_pass(arch, &params.values, images, n).pop().expect("logits");
        let loss = cross_entropy_unchecked(&logits, targets, k);
        if !loss.is_finite() {
            return (best.1, true);
        }
        if loss < best.0 {
            best = (loss, params.clone());
        }
    }
    (params, false)
}

fn check_archs(archs: &[ArchSpec], sample: (usize, usize, usize), k: usize) -> Result<()> {
    if archs.is_empty() {
        return Err(Error::Config("no evaluation architectures".into()));
    }
    for a in archs {
        if a.input_shape() != sample || a.num_classes() != k {
            return Err(Error::Shape(format!("{} cannot take {sample:?} inputs with {k} classes", a.arch_id())));
        }
    }
    Ok(())
}

fn report_digest(tag: ReportTag, cfg: &EvalConfig, lr: f64, archs: &[ArchSpec], extra: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag.as_str().as_bytes());
    h.update(cfg.canonical().as_bytes());
    h.update(format!("lr_used={lr:e}\n").as_bytes());
    for a in archs {
        h.update(a.arch_id().as_bytes());
        h.update(b"\n");
    }
    h.update(extra.as_bytes());
    h.finalize().into()
}

/// Trains fresh students on the synthetic set and scores them on `test`.
pub fn evaluate(synset: &SyntheticSet, archs: &[ArchSpec], test: &LabeledDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    synset.validate()?;
    if test.is_empty() {
        return Err(Error::Dataset("empty test split".into()));
    }
    check_archs(archs, synset.sample_shape(), synset.num_classes())?;
    let soft = synset.soft_labels()?;
    let lr = cfg.lr_override.unwrap_or(synset.alpha);
    let mut rows = Vec::new();
    for arch in archs {
        for trial in 0..cfg.trials {
            rows.push(evaluate_trial(arch, synset.images.data(), soft.data(), test, cfg, lr, trial)?);
        }
    }
    Ok(EvalReport { tag: ReportTag::Datm, rows, learning_rate: lr, digest: report_digest(ReportTag::Datm, cfg, lr, archs, "") })
}

/// One student of [`evaluate`], usable on its own to parallelize trials.
pub fn evaluate_trial(
    arch: &ArchSpec,
    images: &[f64],
    targets: &[f64],
    test: &LabeledDataset,
    cfg: &EvalConfig,
    lr: f64,
    trial: usize,
) -> Result<TrialResult> {
    let mut rng = Rng::new(cfg.seed).split(arch.arch_id()).split_index(trial as u64);
    let (params, diverged) = train_student(arch, images, targets, lr, cfg.epochs, cfg.batch_size, &mut rng);
    Ok(TrialResult { arch_id: arch.arch_id().into(), trial, acc: accuracy(arch, &params, test)?, diverged })
}

/// `ipc` uniformly drawn indices per class, sorted within each class.
pub fn random_subset_indices(dataset: &LabeledDataset, ipc: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let groups = dataset.class_indices();
    let deficits: Vec<ClassDeficit> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.len() < ipc)
        .map(|(class, g)| ClassDeficit { class, available: g.len(), required: ipc })
        .collect();
    if !deficits.is_empty() {
        return Err(Error::InsufficientSamples(deficits));
    }
    let mut out = Vec::with_capacity(ipc * groups.len());
    for g in &groups {
        let mut pick: Vec<usize> = rng.choose_indices(g.len(), ipc).into_iter().map(|j| g[j]).collect();
        pick.sort_unstable();
        out.extend(pick);
    }
    Ok(out)
}

fn one_hot(dataset: &LabeledDataset, indices: &[usize]) -> Vec<f64> {
    let k = dataset.num_classes;
    let mut y = vec![0.0; indices.len() * k];
    for (row, &i) in indices.iter().enumerate() {
        y[row * k + dataset.labels[i]] = 1.0;
    }
    y
}

/// Students trained on a fresh random `ipc`-per-class subset per trial.
pub fn random_subset_baseline(
    dataset: &LabeledDataset,
    ipc: usize,
    archs: &[ArchSpec],
    test: &LabeledDataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_archs(archs, dataset.sample_shape(), dataset.num_classes)?;
    let lr = cfg.lr_override.unwrap_or(DEFAULT_BASELINE_LR);
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        let idx = random_subset_indices(dataset, ipc, &mut Rng::new(cfg.seed).split("subset").split_index(trial as u64))?;
        let images = dataset.images.select_rows(&idx);
        let y = one_hot(dataset, &idx);
        for arch in archs {
            rows.push(evaluate_trial(arch, images.data(), &y, test, cfg, lr, trial)?);
        }
    }
    rows.sort_by(|a, b| (archs.iter().position(|x| x.arch_id() == a.arch_id), a.trial).cmp(&(archs.iter().position(|x| x.arch_id() == b.arch_id), b.trial)));
    let extra = format!("ipc={ipc}\n");
    Ok(EvalReport { tag: ReportTag::RandomSubset, rows, learning_rate: lr, digest: report_digest(ReportTag::RandomSubset, cfg, lr, archs, &extra) })
}

/// Students trained on the whole training split with one-hot labels.
pub fn full_data_baseline(dataset: &LabeledDataset, archs: &[ArchSpec], test: &LabeledDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_archs(archs, dataset.sample_shape(), dataset.num_classes)?;
    let lr = cfg.lr_override.unwrap_or(DEFAULT_BASELINE_LR);
    // Class-major order, so a random subset of the full class size is this exact set.
    let idx: Vec<usize> = dataset.class_indices().concat();
    let images = dataset.images.select_rows(&idx);
    let y = one_hot(dataset, &idx);
    let mut rows = Vec::new();
    for arch in archs {
        for trial in 0..cfg.trials {
            rows.push(evaluate_trial(arch, images.data(), &y, test, cfg, lr, trial)?);
        }
    }
    Ok(EvalReport { tag: ReportTag::FullData, rows, learning_rate: lr, digest: report_digest(ReportTag::FullData, cfg, lr, archs, "") })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Grid points left out because the segment was degenerate or the unroll diverged.
    pub skipped: Vec<usize>,
}

/// Matching loss of the synthetic set against held-out segments starting at
/// each grid epoch. Inner batches are drawn from `seed` per grid point.
#[allow(clippy::too_many_arguments)]
pub fn heldout_matching_curve(
    arch: &ArchSpec,
    synset: &SyntheticSet,
    heldout: &ExpertTrajectory,
    span: usize,
    steps: usize,
    grid: &[usize],
    batch_syn: usize,
    seed: u64,
) -> Result<DiagnosticCurve> {
    let soft_input = UnrollInput { images: &synset.images, logits: &synset.logits, alpha: synset.alpha };
    let mut curve = DiagnosticCurve { x: Vec::new(), y: Vec::new(), skipped: Vec::new() };
    for &t in grid {
        let (start, target) = sample_segment(heldout, t, span)?;
        let plan = BatchPlan::sample(synset.len(), batch_syn, steps, &mut Rng::new(seed).split("heldout").split_index(t as u64));
        match segment_loss(arch, soft_input, start, target, &plan) {
            Ok(loss) => {
                curve.x.push(t as f64);
                curve.y.push(loss);
            }
            Err(Error::DegenerateSegment { .. } | Error::DivergentUnroll { .. }) => curve.skipped.push(t),
            Err(e) => return Err(e),
        }
    }
    Ok(curve)
}

/// Mean label std after each logged iteration.
pub fn label_std_curve(log: &[crate::distill::LogRow]) -> DiagnosticCurve {
    DiagnosticCurve {
        x: log.iter().map(|r| r.iter as f64).collect(),
        y: log.iter().map(|r| r.label_std).collect(),
        skipped: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowPreset {
    Early,
    Late,
    All,
}

impl WindowPreset {
    pub const ALL: [WindowPreset; 3] = [WindowPreset::Early, WindowPreset::Late, WindowPreset::All];

    pub fn as_str(self) -> &'static str {
        match self {
            WindowPreset::Early => "early",
            WindowPreset::Late => "late",
            WindowPreset::All => "all",
        }
    }

    /// Fixed window (no ramp). Upper bounds are capped at `n - M` so every
    /// segment fits: early `[0, n/2]`, late `[n/2, n-M]`, all `[0, n-M]`.
    pub fn window(self, horizon: usize, span: usize, steps: usize) -> Result<MatchWindow> {
        if span == 0 || span > horizon {
            return Err(Error::HorizonTooShort { horizon, reason: format!("span {span}") });
        }
        let max_start = horizon - span;
        let half = (horizon / 2).min(max_start);
        let (lo, hi) = match self {
            WindowPreset::Early => (0, half),
            WindowPreset::Late => (half, max_start),
            WindowPreset::All => (0, max_start),
        };
        Ok(MatchWindow::fixed(lo, hi, span, steps))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub ipc: usize,
    pub preset: WindowPreset,
    /// Mean over seeds of each seed's mean trial accuracy.
    pub mean_acc: f64,
    /// Sample standard deviation of the per-seed means.
    pub std_acc: f64,
    pub iterations: usize,
    pub per_seed: Vec<f64>,
    pub error: Option<String>,
}

/// Distills with `preset` at `ipc` once per seed and evaluates each result.
#[allow(clippy::too_many_arguments)]
pub fn sweep_cell(
    train: &LabeledDataset,
    test: &LabeledDataset,
    buffer: &ExpertBuffer,
    arch: &ArchSpec,
    ipc: usize,
    preset: WindowPreset,
    base: &DistillConfig,
    eval_cfg: &EvalConfig,
    seeds: &[u64],
) -> SweepCell {
    let run = || -> Result<Vec<f64>> {
        let window = preset.window(buffer.horizon(), base.window.span, base.window.steps)?;
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let cfg = DistillConfig { ipc, window, seed, ..base.clone() };
            let (synset, _) = distill(train, buffer, arch, &cfg)?;
            let report = evaluate(&synset, core::slice::from_ref(arch), test, &EvalConfig { seed, ..eval_cfg.clone() })?;
            per_seed.push(report.summary(arch.arch_id()).0);
        }
        Ok(per_seed)
    };
    match run() {
        Ok(per_seed) => {
            let (mean_acc, std_acc) = mean_std(&per_seed);
            SweepCell { ipc, preset, mean_acc, std_acc, iterations: base.iterations, per_seed, error: None }
        }
        Err(e) => SweepCell {
            ipc,
            preset,
            mean_acc: f64::NAN,
            std_acc: f64::NAN,
            iterations: base.iterations,
            per_seed: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Every `(ipc, preset)` cell, in ipc-major order.
#[allow(clippy::too_many_arguments)]
pub fn observation_sweep(
    train: &LabeledDataset,
    test: &LabeledDataset,
    buffer: &ExpertBuffer,
    arch: &ArchSpec,
    ipcs: &[usize],
    presets: &[WindowPreset],
    base: &DistillConfig,
    eval_cfg: &EvalConfig,
    seeds: &[u64],
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &ipc in ipcs {
        for &preset in presets {
            cells.push(sweep_cell(train, test, buffer, arch, ipc, preset, base, eval_cfg, seeds));
        }
    }
    cells
}
