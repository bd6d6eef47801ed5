use alloc::format;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use crate::distill::run::{DistillConfig, DistillState, LogRow};
use crate::distill::window::MatchWindow;
use crate::error::{Error, Result};
use crate::eval::heldout_matching_curve;
use crate::experts::ExpertBuffer;
use crate::models::ArchSpec;
use crate::numkit::LabeledDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub probe_iters: usize,
    pub initial_width: usize,
    /// Epochs moved per ladder step.
    pub step: usize,
    /// Relative increase of a held-out loss that counts as "increased".
    pub eps_tune: f64,
    /// Spacing of held-out segment starts.
    pub grid_stride: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { probe_iters: 50, initial_width: 10, step: 1, eps_tune: 0.01, grid_stride: 1 }
    }
}

/// Held-out losses after one probe distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub t_lower: usize,
    pub t_upper: usize,
    pub early: f64,
    pub late: f64,
    pub log: Vec<LogRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub window: MatchWindow,
    /// Held-out losses of the untouched initial set.
    pub baseline_early: f64,
    pub baseline_late: f64,
    pub probes: Vec<Probe>,
}

struct Tuner<'a> {
    dataset: &'a LabeledDataset,
    buffer: &'a ExpertBuffer,
    arch: &'a ArchSpec,
    base: DistillConfig,
    tune: &'a TuneConfig,
    grid: Vec<usize>,
    mid: usize,
}

impl Tuner<'_> {
    fn config(&self, lo: usize, hi: usize) -> DistillConfig {
        let w = &self.base.window;
        DistillConfig { iterations: self.tune.probe_iters, window: MatchWindow::fixed(lo, hi, w.span, w.steps), ..self.base.clone() }
    }

    fn split_means(&self, state: &DistillState) -> Result<(f64, f64)> {
        let w = &self.base.window;
        let curve = heldout_matching_curve(
            self.arch,
            &state.synset,
            self.buffer.held_out(),
            w.span,
            w.steps,
            &self.grid,
            self.base.batch_syn,
            self.base.seed,
        )?;
        let (mut es, mut en, mut ls, mut ln) = (0.0, 0, 0.0, 0);
        for (x, y) in curve.x.iter().zip(&curve.y) {
            if *x <= self.mid as f64 {
                es += y;
                en += 1;
            } else {
                ls += y;
                ln += 1;
            }
        }
        if en == 0 || ln == 0 {
            return Err(Error::HorizonTooShort {
                horizon: self.buffer.horizon(),
                reason: "held-out curve lacks early or late points".into(),
            });
        }
        Ok((es / en as f64, ls / ln as f64))
    }

    fn baseline(&self) -> Result<(f64, f64)> {
        let cfg = self.config(0, self.tune.initial_width.min(self.grid[self.grid.len() - 1]));
        let state = DistillState::initialize(self.dataset, self.buffer, self.arch, &cfg)?;
        self.split_means(&state)
    }

    fn probe(&self, lo: usize, hi: usize) -> Result<Probe> {
        let cfg = self.config(lo, hi);
        let mut state = DistillState::initialize(self.dataset, self.buffer, self.arch, &cfg)?;
        state.run(self.buffer, self.arch, &cfg, &mut |_| ControlFlow::Continue(()))?;
        let (early, late) = self.split_means(&state)?;
        Ok(Probe { t_lower: lo, t_upper: hi, early, late, log: state.log })
    }
}

/// Smallest logged start epoch whose matching loss exceeded 1, clamped to
/// `lo..=hi`; `lo` when every segment was matched.
pub fn first_unmatched_start(log: &[LogRow], lo: usize, hi: usize) -> usize {
    log.iter().filter(|r| r.loss > 1.0).map(|r| r.t).min().map_or(lo, |t| t.clamp(lo, hi))
}

/// Searches a matching window by probing short distillations and watching
/// the matching loss on the held-out trajectory.
///
/// The lower and upper bounds move up together while a probe raises the
/// held-out loss on late segments above that of the untouched set; the upper
/// bound then grows while each wider probe keeps the early-segment loss
/// within tolerance of the last accepted probe. The floating bound starts at the
/// smallest start epoch whose matching loss exceeded 1 in the last accepted
/// probe. Early segments start at or below the midpoint of `0..=n-M`.
pub fn auto_tune_window(
    dataset: &LabeledDataset,
    buffer: &ExpertBuffer,
    arch: &ArchSpec,
    base: &DistillConfig,
    tune: &TuneConfig,
) -> Result<TuneOutcome> {
    if tune.step == 0 || tune.grid_stride == 0 || tune.probe_iters == 0 || tune.initial_width == 0 {
        return Err(Error::Config("tune step, grid stride, probe iterations and width must be >= 1".into()));
    }
    buffer.validate()?;
    let horizon = buffer.horizon();
    let span = base.window.span;
    if span == 0 || span + 1 > horizon {
        return Err(Error::HorizonTooShort { horizon, reason: format!("span {span} leaves no room for a window") });
    }
    let max_start = horizon - span;
    let mut grid: Vec<usize> = (0..=max_start).step_by(tune.grid_stride).collect();
    if *grid.last().expect("nonempty") != max_start {
        grid.push(max_start);
    }
    let width = tune.initial_width.min(max_start);
    let mut base = base.clone();
    base.label_epoch = Some(base.label_epoch.unwrap_or(width));
    let tuner = Tuner { dataset, buffer, arch, base, tune, grid, mid: max_start / 2 };
    let (b_early, b_late) = tuner.baseline()?;
    let raised = |now: f64, before: f64| now > before * (1.0 + tune.eps_tune);

    let mut probes = Vec::new();
    let (mut lo, mut hi) = (0, width);
    let mut accepted = tuner.probe(lo, hi)?;
    probes.push(accepted.clone());
    while raised(accepted.late, b_late) && hi + tune.step <= max_start {
        lo += tune.step;
        hi += tune.step;
        accepted = tuner.probe(lo, hi)?;
        probes.push(accepted.clone());
    }
    while hi + tune.step <= max_start {
        let p = tuner.probe(lo, hi + tune.step)?;
        probes.push(p.clone());
        if raised(p.early, accepted.early) {
            break;
        }
        hi += tune.step;
        accepted = p;
    }
    let t_init = first_unmatched_start(&accepted.log, lo, hi);
    let window = MatchWindow::ramped(lo, t_init, hi, tuner.base.window.ramp_iters, span, tuner.base.window.steps);
    window.validate(horizon)?;
    Ok(TuneOutcome { window, baseline_early: b_early, baseline_late: b_late, probes })
}
