use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use sha2::{Digest, Sha256};

use crate::distill::matching::segment_objective;
use crate::distill::synset::{build_correct_subset, init_synthetic, label_std_stat, LabelMode, SyntheticSet, MIN_ALPHA};
use crate::distill::window::{advance_window, sample_start_epoch, MatchWindow};
use crate::error::{Error, Result};
use crate::experts::{sample_segment, ExpertBuffer};
use crate::models::{ArchSpec, BatchPlan, UnrollInput};
use crate::numkit::{LabeledDataset, Precision, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub iterations: usize,
    pub window: MatchWindow,
    pub ipc: usize,
    pub lr_images: f64,
    pub lr_logits: f64,
    pub lr_alpha: f64,
    pub momentum_images: f64,
    pub momentum_logits: f64,
    pub momentum_alpha: f64,
    /// Synthetic rows per inner step; the full set when it is at least this small.
    pub batch_syn: usize,
    pub alpha_init: f64,
    pub seed: u64,
    pub label_mode: LabelMode,
    /// Trajectory that labels the initial set; defaults to the first one not held out.
    pub label_expert: Option<usize>,
    /// Checkpoint of that trajectory; defaults to the window's upper bound.
    pub label_epoch: Option<usize>,
    pub precision: Precision,
    pub max_failures: usize,
    pub log_every: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            window: MatchWindow::ramped(0, 0, 10, 250, 2, 20),
            ipc: 10,
            lr_images: 10.0,
            lr_logits: 10.0,
            lr_alpha: 1e-6,
            momentum_images: 0.5,
            momentum_logits: 0.9,
            momentum_alpha: 0.5,
            batch_syn: 256,
            alpha_init: 0.03,
            seed: 0,
            label_mode: LabelMode::SoftLearned,
            label_expert: None,
            label_epoch: None,
            precision: Precision::F32,
            max_failures: 50,
            log_every: 100,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.ipc == 0 || self.batch_syn == 0 || self.max_failures == 0 || self.log_every == 0 {
            return Err(Error::Config("iterations, ipc, batch_syn, max_failures and log_every must be >= 1".into()));
        }
        for (name, v) in [("lr_images", self.lr_images), ("lr_logits", self.lr_logits), ("lr_alpha", self.lr_alpha)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(self.alpha_init > 0.0) || !self.alpha_init.is_finite() {
            return Err(Error::Config(format!("alpha_init = {} must be > 0", self.alpha_init)));
        }
        for (name, m) in [
            ("momentum_images", self.momentum_images),
            ("momentum_logits", self.momentum_logits),
            ("momentum_alpha", self.momentum_alpha),
        ] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config(format!("{name} = {m} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        let w = &self.window;
        format!(
            "iterations={}\nwindow={},{},{},ramp={},span={},steps={}\nipc={}\nlr={:e},{:e},{:e}\nmomentum={:e},{:e},{:e}\nbatch_syn={}\nalpha_init={:e}\nseed={}\nlabel_mode={}\nlabel_source={:?}@{:?}\nprecision={}\nmax_failures={}\nramp_law=linear-floor\n",
            self.iterations,
            w.t_lower,
            w.t_init,
            w.t_upper,
            w.ramp_iters,
            w.span,
            w.steps,
            self.ipc,
            self.lr_images,
            self.lr_logits,
            self.lr_alpha,
            self.momentum_images,
            self.momentum_logits,
            self.momentum_alpha,
            self.batch_syn,
            self.alpha_init,
            self.seed,
            self.label_mode.as_str(),
            self.label_expert,
            self.label_epoch,
            self.precision.as_str(),
            self.max_failures
        )
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

/// One row per iteration; skipped iterations carry a NaN loss and zero
/// gradient norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub expert: usize,
    pub t: usize,
    pub t_float: usize,
    pub loss: f64,
    pub alpha: f64,
    pub gnorm_img: f64,
    pub gnorm_logit: f64,
    pub gnorm_alpha: f64,
    /// Wall time of the iteration; filled in by the caller, 0 when unmeasured.
    pub ms: f64,
    /// Mean label std after the update.
    pub label_std: f64,
}

impl LogRow {
    pub fn skipped(&self) -> bool {
        self.loss.is_nan()
    }
}

/// Everything that evolves during distillation. The per-iteration RNG is
/// derived from the seed and iteration index, so this state is sufficient to
/// resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillState {
    pub synset: SyntheticSet,
    pub vel_images: Vec<f64>,
    pub vel_logits: Vec<f64>,
    pub vel_alpha: f64,
    pub window: MatchWindow,
    pub iter: usize,
    pub failures: usize,
    pub log: Vec<LogRow>,
}

fn labeling_source(buffer: &ExpertBuffer, cfg: &DistillConfig) -> Result<(usize, usize)> {
    let expert = cfg.label_expert.unwrap_or(buffer.training_indices()[0]);
    if expert >= buffer.trajectories.len() || buffer.trajectories[expert].held_out {
        return Err(Error::Config(format!("labeling trajectory {expert} is missing or held out")));
    }
    let epoch = cfg.label_epoch.unwrap_or(cfg.window.t_upper);
    if epoch > buffer.horizon() {
        return Err(Error::Config(format!("labeling epoch {epoch} beyond horizon {}", buffer.horizon())));
    }
    Ok((expert, epoch))
}

fn check_setup(dataset: &LabeledDataset, buffer: &ExpertBuffer, arch: &ArchSpec, cfg: &DistillConfig) -> Result<()> {
    cfg.validate()?;
    buffer.validate()?;
    dataset.validate_source()?;
    if buffer.arch_id() != arch.arch_id() {
        return Err(Error::Layout(format!("experts are {}, distilling for {}", buffer.arch_id(), arch.arch_id())));
    }
    cfg.window.validate(buffer.horizon())
}

impl DistillState {
    /// Mislabel filter, then `ipc` rows per class labeled by the labeling checkpoint.
    pub fn initialize(dataset: &LabeledDataset, buffer: &ExpertBuffer, arch: &ArchSpec, cfg: &DistillConfig) -> Result<Self> {
        check_setup(dataset, buffer, arch, cfg)?;
        let (expert, epoch) = labeling_source(buffer, cfg)?;
        let labeling = &buffer.trajectories[expert].checkpoints[epoch];
        let subset = build_correct_subset(dataset, arch, labeling)?;
        let mut rng = Rng::new(cfg.seed).split("init");
        let synset = init_synthetic(
            dataset,
            &subset,
            cfg.ipc,
            arch,
            labeling,
            &format!("expert{expert}@{epoch}"),
            cfg.label_mode,
            cfg.alpha_init,
            cfg.precision,
            &mut rng,
        )?;
        Ok(Self {
            vel_images: vec![0.0; synset.images.len()],
            vel_logits: vec![0.0; synset.logits.len()],
            vel_alpha: 0.0,
            synset,
            window: advance_window(&cfg.window, 0),
            iter: 0,
            failures: 0,
            log: Vec::new(),
        })
    }

    /// One outer iteration. Divergent unrolls and degenerate segments skip
    /// the update; `max_failures` consecutive skips abort the run, leaving
    /// the last good synthetic set in place.
    pub fn step(&mut self, buffer: &ExpertBuffer, arch: &ArchSpec, cfg: &DistillConfig) -> Result<()> {
        let iter = self.iter;
        self.window = advance_window(&cfg.window, iter);
        let mut rng = Rng::new(cfg.seed).split("distill").split_index(iter as u64);
        let pool = buffer.training_indices();
        let expert = pool[rng.below(pool.len())];
        let t = sample_start_epoch(&self.window, &mut rng);
        let plan = BatchPlan::sample(self.synset.len(), cfg.batch_syn, self.window.steps, &mut rng);
        let (start, target) = sample_segment(&buffer.trajectories[expert], t, self.window.span)?;
        let input = UnrollInput { images: &self.synset.images, logits: &self.synset.logits, alpha: self.synset.alpha };
        let mut row = LogRow {
            iter,
            expert,
            t,
            t_float: self.window.t_float,
            loss: f64::NAN,
            alpha: self.synset.alpha,
            gnorm_img: 0.0,
            gnorm_logit: 0.0,
            gnorm_alpha: 0.0,
            ms: 0.0,
            label_std: 0.0,
        };
        match segment_objective(arch, input, start, target, &plan) {
            Ok((loss, g)) => {
                self.failures = 0;
                let p = cfg.precision;
                let syn = &mut self.synset;
                momentum_update(syn.images.data_mut(), &mut self.vel_images, g.d_images.data(), cfg.lr_images, cfg.momentum_images);
                p.store(syn.images.data_mut());
                p.store(&mut self.vel_images);
                if syn.label_mode.learns_labels() {
                    momentum_update(syn.logits.data_mut(), &mut self.vel_logits, g.d_logits.data(), cfg.lr_logits, cfg.momentum_logits);
                    p.store(syn.logits.data_mut());
                    p.store(&mut self.vel_logits);
                }
                self.vel_alpha = cfg.momentum_alpha * self.vel_alpha + g.d_alpha;
                syn.alpha = (syn.alpha - cfg.lr_alpha * self.vel_alpha).max(MIN_ALPHA);
                row.loss = loss;
                row.alpha = syn.alpha;
                row.gnorm_img = g.d_images.norm_l2();
                row.gnorm_logit = g.d_logits.norm_l2();
                row.gnorm_alpha = g.d_alpha.abs();
            }
            Err(e @ (Error::DivergentUnroll { .. } | Error::DegenerateSegment { .. })) => {
                self.failures += 1;
                if self.failures >= cfg.max_failures {
                    row.label_std = label_std_stat(&self.synset);
                    self.log.push(row);
                    self.iter += 1;
                    return Err(Error::TooManyFailures { failures: self.failures, last: e.to_string() });
                }
            }
            Err(e) => return Err(e),
        }
        row.label_std = label_std_stat(&self.synset);
        self.log.push(row);
        self.iter += 1;
        Ok(())
    }

    /// Steps until `cfg.iterations`, calling `observer` after every
    /// iteration. Returns `false` if the observer stopped the run early.
    pub fn run(
        &mut self,
        buffer: &ExpertBuffer,
        arch: &ArchSpec,
        cfg: &DistillConfig,
        observer: &mut dyn FnMut(&DistillState) -> ControlFlow<()>,
    ) -> Result<bool> {
        while self.iter < cfg.iterations {
            self.step(buffer, arch, cfg)?;
            if observer(self).is_break() {
                return Ok(self.iter >= cfg.iterations);
            }
        }
        Ok(true)
    }
}

fn momentum_update(x: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, mu: f64) {
    for ((xi, vi), gi) in x.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = mu * *vi + gi;
        *xi -= lr * *vi;
    }
}

/// Initializes and runs a full distillation.
pub fn distill(
    dataset: &LabeledDataset,
    buffer: &ExpertBuffer,
    arch: &ArchSpec,
    cfg: &DistillConfig,
) -> Result<(SyntheticSet, Vec<LogRow>)> {
    let mut state = DistillState::initialize(dataset, buffer, arch, cfg)?;
    state.run(buffer, arch, cfg, &mut |_| ControlFlow::Continue(()))?;
    Ok((state.synset, state.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::fixture::{toy, Toy};
    use crate::distill::segment_loss;
    use crate::numkit::{ParamVector, Tensor};

    fn small_cfg() -> DistillConfig {
        DistillConfig {
            iterations: 6,
            window: MatchWindow::ramped(0, 1, 5, 3, 2, 3),
            ipc: 2,
            lr_images: 1.0,
            lr_logits: 1.0,
            lr_alpha: 1e-4,
            alpha_init: 0.05,
            precision: Precision::F64,
            ..DistillConfig::default()
        }
    }

    fn run_to(toy: &Toy, cfg: &DistillConfig) -> DistillState {
        let mut state = DistillState::initialize(&toy.train, &toy.buffer, &toy.arch, cfg).unwrap();
        state.run(&toy.buffer, &toy.arch, cfg, &mut |_| ControlFlow::Continue(())).unwrap();
        state
    }

    #[test]
    fn zero_learning_rates_freeze_the_set() {
        let toy = toy();
        let cfg = DistillConfig { lr_images: 0.0, lr_logits: 0.0, lr_alpha: 0.0, precision: Precision::F32, ..small_cfg() };
        let start = DistillState::initialize(&toy.train, &toy.buffer, &toy.arch, &cfg).unwrap();
        let end = run_to(&toy, &cfg);
        assert_eq!(end.synset, start.synset);
        assert_eq!(end.iter, 6);
        assert_eq!(end.log.len(), 6);
    }

    #[test]
    fn fixed_label_modes_keep_logits() {
        let toy = toy();
        for mode in [LabelMode::SoftFixed, LabelMode::OneHot] {
            let cfg = DistillConfig { label_mode: mode, ..small_cfg() };
            let start = DistillState::initialize(&toy.train, &toy.buffer, &toy.arch, &cfg).unwrap();
            let end = run_to(&toy, &cfg);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&end.synset.logits), bits(&start.synset.logits), "{}", mode.as_str());
            assert_ne!(end.synset.images, start.synset.images);
        }
    }

    #[test]
    fn first_update_is_scaled_finite_difference_gradient() {
        let toy = toy();
        assert!(toy.arch.param_count() <= 300);
        let cfg = DistillConfig { iterations: 1, ..small_cfg() };
        let start = DistillState::initialize(&toy.train, &toy.buffer, &toy.arch, &cfg).unwrap();
        let end = run_to(&toy, &cfg);

        let window = advance_window(&cfg.window, 0);
        let mut rng = Rng::new(cfg.seed).split("distill").split_index(0);
        let pool = toy.buffer.training_indices();
        let expert = pool[rng.below(pool.len())];
        let t = sample_start_epoch(&window, &mut rng);
        let plan = BatchPlan::sample(start.synset.len(), cfg.batch_syn, window.steps, &mut rng);
        let (a, b): (&ParamVector, &ParamVector) = sample_segment(&toy.buffer.trajectories[expert], t, window.span).unwrap();
        assert_eq!((end.log[0].expert, end.log[0].t), (expert, t));

        let syn = &start.synset;
        let loss_at = |images: &Tensor, logits: &Tensor, alpha: f64| {
            segment_loss(&toy.arch, UnrollInput { images, logits, alpha }, a, b, &plan).unwrap()
        };
        let h = 1e-5;
        let check = |fd: f64, applied: f64, lr: f64, what: &str| {
            let g = -applied / lr;
            let rel = (g - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "{what}: update {g} vs fd {fd}");
        };
        let pixel = 7;
        let (mut up, mut down) = (syn.images.clone(), syn.images.clone());
        up.data_mut()[pixel] += h;
        down.data_mut()[pixel] -= h;
        let fd = (loss_at(&up, &syn.logits, syn.alpha) - loss_at(&down, &syn.logits, syn.alpha)) / (2.0 * h);
        check(fd, end.synset.images.data()[pixel] - syn.images.data()[pixel], cfg.lr_images, "pixel");

        let logit = 4;
        let (mut up, mut down) = (syn.logits.clone(), syn.logits.clone());
        up.data_mut()[logit] += h;
        down.data_mut()[logit] -= h;
        let fd = (loss_at(&syn.images, &up, syn.alpha) - loss_at(&syn.images, &down, syn.alpha)) / (2.0 * h);
        check(fd, end.synset.logits.data()[logit] - syn.logits.data()[logit], cfg.lr_logits, "logit");

        let ha = 1e-7;
        let fd = (loss_at(&syn.images, &syn.logits, syn.alpha + ha) - loss_at(&syn.images, &syn.logits, syn.alpha - ha)) / (2.0 * ha);
        check(fd, end.synset.alpha - syn.alpha, cfg.lr_alpha, "alpha");
    }

    #[test]
    fn runs_are_deterministic_and_resumable() {
        let toy = toy();
        let cfg = small_cfg();
        let full = run_to(&toy, &cfg);
        assert_eq!(full, run_to(&toy, &cfg));

        let mut part = DistillState::initialize(&toy.train, &toy.buffer, &toy.arch, &cfg).unwrap();
        let mut stop = |s: &DistillState| if s.iter == 3 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) };
        assert!(!part.run(&toy.buffer, &toy.arch, &cfg, &mut stop).unwrap());
        let mut resumed = part.clone();
        assert!(resumed.run(&toy.buffer, &toy.arch, &cfg, &mut |_| ControlFlow::Continue(())).unwrap());
        assert_eq!(resumed, full);
    }

    #[test]
    fn log_respects_window_and_held_out() {
        let toy = toy();
        let cfg = DistillConfig { iterations: 40, ..small_cfg() };
        let state = run_to(&toy, &cfg);
        let held = toy.buffer.held_out_index();
        let mut prev = 0;
        for row in &state.log {
            let w = &cfg.window;
            assert!(w.t_lower <= row.t && row.t <= row.t_float && row.t_float <= w.t_upper);
            assert!(row.t + w.span <= toy.buffer.horizon());
            assert!(row.t_float >= prev);
            if row.iter >= w.ramp_iters {
                assert_eq!(row.t_float, w.t_upper);
            }
            prev = row.t_float;
            assert_ne!(row.expert, held);
            assert!(row.alpha > 0.0);
        }
    }

    #[test]
    fn persistent_divergence_aborts_with_the_set_intact() {
        let toy = toy();
        let cfg = DistillConfig { alpha_init: 1e300, max_failures: 3, ..small_cfg() };
        let start = DistillState::initialize(&toy.train, &toy.buffer, &toy.arch, &cfg).unwrap();
        let mut state = start.clone();
        let err = state.run(&toy.buffer, &toy.arch, &cfg, &mut |_| ControlFlow::Continue(())).unwrap_err();
        assert!(matches!(err, Error::TooManyFailures { failures: 3, .. }));
        assert_eq!(state.synset, start.synset);
        assert!(state.log.iter().all(LogRow::skipped));
    }

    #[test]
    fn held_out_labeling_is_rejected() {
        let toy = toy();
        let cfg = DistillConfig { label_expert: Some(toy.buffer.held_out_index()), ..small_cfg() };
        assert!(matches!(DistillState::initialize(&toy.train, &toy.buffer, &toy.arch, &cfg), Err(Error::Config(_))));
        let bad = DistillConfig { lr_images: -1.0, ..small_cfg() };
        assert!(bad.validate().is_err());
        assert_ne!(small_cfg().digest(), DistillConfig { seed: 1, ..small_cfg() }.digest());
    }

    #[test]
    fn blobs_loss_trends_down() {
        use crate::experts::{train_expert, ExpertTrainConfig};
        use crate::numkit::{prepare_splits, BlobsSpec};
        let (train, test) = BlobsSpec::default().generate().unwrap();
        let train = prepare_splits(&train, &test, None).unwrap().train;
        let arch = ArchSpec::parse("mlp-64:1x8x8:10").unwrap();
        let trajs: Vec<_> = (0..3)
            .map(|seed| train_expert(&train, &arch, &ExpertTrainConfig { epochs: 20, seed, ..ExpertTrainConfig::default() }).unwrap())
            .collect();
        let buffer = ExpertBuffer::new(trajs, None).unwrap();
        let cfg = DistillConfig { ipc: 10, iterations: 500, window: MatchWindow::fixed(0, 10, 2, 20), ..DistillConfig::default() };
        let (_, log) = distill(&train, &buffer, &arch, &cfg).unwrap();
        let mean = |rows: &[LogRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
        let (first, last) = (mean(&log[..50]), mean(&log[450..]));
        assert!(last < first, "first {first} last {last}");
    }
}
