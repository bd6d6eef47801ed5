//! Run configuration: a TOML document with defaults for every key.
//!
//! Unknown keys are rejected at every level. Command-line overrides of the
//! form `--section.key value` are applied to the parsed document before it
//! is deserialized, so they go through the same checks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use datm_core::distill::{DistillConfig, LabelMode, MatchWindow, TuneConfig};
use datm_core::eval::{EvalConfig, WindowPreset};
use datm_core::experts::ExpertTrainConfig;
use datm_core::numkit::Precision;

use crate::error::CliError;

pub const RESOLVED_NAME: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Sequential execution and zeroed timings, for byte-identical reruns.
    pub strict: bool,
    pub dataset: DatasetSection,
    pub arch: ArchSection,
    pub experts: ExpertsSection,
    pub distill: DistillSection,
    pub tune: TuneSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            strict: false,
            dataset: DatasetSection::default(),
            arch: ArchSection::default(),
            experts: ExpertsSection::default(),
            distill: DistillSection::default(),
            tune: TuneSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// `blobs`, `moons`, `dset` or `idx`.
    pub source: String,
    /// DSET files for `dset`.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// IDX files for `idx`.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub num_classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub hard_fraction: f64,
    pub hard_modes: usize,
    pub confusion: f64,
    pub seed: u64,
    pub zca: bool,
    pub zca_epsilon: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let b = datm_core::numkit::BlobsSpec::default();
        Self {
            source: "blobs".into(),
            train_path: None,
            test_path: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            num_classes: b.num_classes,
            channels: b.channels,
            height: b.height,
            width: b.width,
            train_per_class: b.train_per_class,
            test_per_class: b.test_per_class,
            noise: b.noise,
            hard_fraction: b.hard_fraction,
            hard_modes: b.hard_modes,
            confusion: b.confusion,
            seed: b.seed,
            zca: false,
            zca_epsilon: datm_core::numkit::DEFAULT_ZCA_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    /// `linear`, `mlp-W` or `convD-W`; input shape and classes come from the data.
    pub family: String,
}

impl Default for ArchSection {
    fn default() -> Self {
        Self { family: "mlp-64".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertsSection {
    pub count: usize,
    pub base_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub precision: String,
    pub checkpoints_per_epoch: usize,
    /// Held-out index; the last trajectory when absent.
    pub held_out: Option<usize>,
    /// Trajectory directory; `<out_dir>/experts` when absent.
    pub dir: Option<PathBuf>,
}

impl Default for ExpertsSection {
    fn default() -> Self {
        let e = ExpertTrainConfig::default();
        Self {
            count: 11,
            base_seed: 0,
            epochs: e.epochs,
            batch_size: e.batch_size,
            learning_rate: e.learning_rate,
            momentum: e.momentum,
            weight_decay: e.weight_decay,
            precision: e.precision.as_str().into(),
            checkpoints_per_epoch: e.checkpoints_per_epoch,
            held_out: None,
            dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub t_lower: usize,
    pub t_init: usize,
    pub t_upper: usize,
    /// Half the iterations when absent.
    pub ramp_iters: Option<usize>,
    pub span: usize,
    pub steps: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        let w = DistillConfig::default().window;
        Self { t_lower: w.t_lower, t_init: w.t_init, t_upper: w.t_upper, ramp_iters: None, span: w.span, steps: w.steps }
    }
}

impl WindowSection {
    pub fn from_window(w: &MatchWindow) -> Self {
        Self {
            t_lower: w.t_lower,
            t_init: w.t_init,
            t_upper: w.t_upper,
            ramp_iters: Some(w.ramp_iters),
            span: w.span,
            steps: w.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub iterations: usize,
    pub ipc: usize,
    pub lr_images: f64,
    pub lr_logits: f64,
    pub lr_alpha: f64,
    pub momentum_images: f64,
    pub momentum_logits: f64,
    pub momentum_alpha: f64,
    pub batch_syn: usize,
    pub alpha_init: f64,
    pub seed: u64,
    pub label_mode: String,
    pub label_expert: Option<usize>,
    pub label_epoch: Option<usize>,
    pub precision: String,
    pub max_failures: usize,
    pub log_every: usize,
    pub window: WindowSection,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            iterations: d.iterations,
            ipc: d.ipc,
            lr_images: d.lr_images,
            lr_logits: d.lr_logits,
            lr_alpha: d.lr_alpha,
            momentum_images: d.momentum_images,
            momentum_logits: d.momentum_logits,
            momentum_alpha: d.momentum_alpha,
            batch_syn: d.batch_syn,
            alpha_init: d.alpha_init,
            seed: d.seed,
            label_mode: d.label_mode.as_str().into(),
            label_expert: d.label_expert,
            label_epoch: d.label_epoch,
            precision: d.precision.as_str().into(),
            max_failures: d.max_failures,
            log_every: d.log_every,
            window: WindowSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub probe_iters: usize,
    pub initial_width: usize,
    pub step: usize,
    pub eps_tune: f64,
    pub grid_stride: usize,
}

impl Default for TuneSection {
    fn default() -> Self {
        let t = TuneConfig::default();
        Self {
            probe_iters: t.probe_iters,
            initial_width: t.initial_width,
            step: t.step,
            eps_tune: t.eps_tune,
            grid_stride: t.grid_stride,
        }
    }
}

/// `"learned"` or a fixed student learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StudentLr {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub epochs: usize,
    pub trials: usize,
    pub batch_size: usize,
    pub lr: StudentLr,
    pub seed: u64,
    /// Student families; the distillation family when empty.
    pub archs: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            epochs: e.epochs,
            trials: e.trials,
            batch_size: e.batch_size,
            lr: StudentLr::Named("learned".into()),
            seed: e.seed,
            archs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ipcs: Vec<usize>,
    pub presets: Vec<String>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub label_mode: String,
    /// Common student learning rate across presets; `"learned"` keeps each set's own.
    pub eval_lr: StudentLr,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ipcs: vec![1, 10, 50],
            presets: WindowPreset::ALL.iter().map(|p| p.as_str().to_string()).collect(),
            seeds: vec![0, 1, 2],
            iterations: 300,
            label_mode: LabelMode::OneHot.as_str().into(),
            eval_lr: StudentLr::Fixed(0.1),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn precision(s: &str) -> Result<Precision, CliError> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(config_err(format!("precision must be f32 or f64, got {other:?}"))),
    }
}

fn student_lr(lr: &StudentLr, key: &str) -> Result<Option<f64>, CliError> {
    match lr {
        StudentLr::Fixed(v) => Ok(Some(*v)),
        StudentLr::Named(s) if s == "learned" => Ok(None),
        StudentLr::Named(s) => Err(config_err(format!("{key} must be \"learned\" or a number, got {s:?}"))),
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(doc: &mut toml::Table, key: &str, raw: &str) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("malformed override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("nonempty");
    let mut table = doc;
    for p in path {
        let entry = table.entry((*p).to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| config_err(format!("override {key:?}: {p:?} is not a table")))?;
    }
    table.insert((*last).to_string(), parse_value(raw));
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.resolve()
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            CliError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Expands derived defaults and checks every section.
    fn resolve(mut self) -> Result<Self, CliError> {
        if std::env::var("DATM_STRICT").is_ok_and(|v| v == "1") {
            self.strict = true;
        }
        if self.distill.window.ramp_iters.is_none() {
            self.distill.window.ramp_iters = Some(self.distill.iterations / 2);
        }
        if self.experts.held_out.is_none() {
            self.experts.held_out = Some(self.experts.count.saturating_sub(1));
        }
        if self.experts.dir.is_none() {
            self.experts.dir = Some(self.out_dir.join("experts"));
        }
        if !["blobs", "moons", "dset", "idx"].contains(&self.dataset.source.as_str()) {
            return Err(config_err(format!("dataset.source {:?} is not blobs, moons, dset or idx", self.dataset.source)));
        }
        if self.experts.count < 2 {
            return Err(config_err(format!("experts.count must be >= 2, got {}", self.experts.count)));
        }
        self.expert_config(0, false)?.validate()?;
        self.distill_config()?.validate()?;
        self.eval_config()?.validate()?;
        self.sweep_presets()?;
        LabelMode::parse(&self.sweep.label_mode)?;
        student_lr(&self.sweep.eval_lr, "sweep.eval_lr")?;
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn experts_dir(&self) -> PathBuf {
        self.experts.dir.clone().unwrap_or_else(|| self.out_dir.join("experts"))
    }

    pub fn expert_config(&self, seed: u64, whitening: bool) -> Result<ExpertTrainConfig, CliError> {
        let e = &self.experts;
        Ok(ExpertTrainConfig {
            epochs: e.epochs,
            batch_size: e.batch_size,
            learning_rate: e.learning_rate,
            momentum: e.momentum,
            weight_decay: e.weight_decay,
            seed,
            whitening,
            precision: precision(&e.precision)?,
            checkpoints_per_epoch: e.checkpoints_per_epoch,
        })
    }

    pub fn window(&self) -> MatchWindow {
        let w = &self.distill.window;
        MatchWindow::ramped(w.t_lower, w.t_init, w.t_upper, w.ramp_iters.unwrap_or(self.distill.iterations / 2), w.span, w.steps)
    }

    pub fn distill_config(&self) -> Result<DistillConfig, CliError> {
        let d = &self.distill;
        Ok(DistillConfig {
            iterations: d.iterations,
            window: self.window(),
            ipc: d.ipc,
            lr_images: d.lr_images,
            lr_logits: d.lr_logits,
            lr_alpha: d.lr_alpha,
            momentum_images: d.momentum_images,
            momentum_logits: d.momentum_logits,
            momentum_alpha: d.momentum_alpha,
            batch_syn: d.batch_syn,
            alpha_init: d.alpha_init,
            seed: d.seed,
            label_mode: LabelMode::parse(&d.label_mode)?,
            label_expert: d.label_expert,
            label_epoch: d.label_epoch,
            precision: precision(&d.precision)?,
            max_failures: d.max_failures,
            log_every: d.log_every,
        })
    }

    pub fn tune_config(&self) -> TuneConfig {
        let t = &self.tune;
        TuneConfig {
            probe_iters: t.probe_iters,
            initial_width: t.initial_width,
            step: t.step,
            eps_tune: t.eps_tune,
            grid_stride: t.grid_stride,
        }
    }

    pub fn eval_config(&self) -> Result<EvalConfig, CliError> {
        let e = &self.eval;
        Ok(EvalConfig {
            epochs: e.epochs,
            trials: e.trials,
            batch_size: e.batch_size,
            lr_override: student_lr(&e.lr, "eval.lr")?,
            seed: e.seed,
        })
    }

    pub fn sweep_presets(&self) -> Result<Vec<WindowPreset>, CliError> {
        self.sweep
            .presets
            .iter()
            .map(|p| {
                WindowPreset::ALL
                    .into_iter()
                    .find(|w| w.as_str() == p)
                    .ok_or_else(|| config_err(format!("unknown sweep preset {p:?}")))
            })
            .collect()
    }

    /// Distillation settings of one sweep run, before the preset window.
    pub fn sweep_base(&self) -> Result<(DistillConfig, EvalConfig), CliError> {
        let base = DistillConfig {
            iterations: self.sweep.iterations,
            label_mode: LabelMode::parse(&self.sweep.label_mode)?,
            ..self.distill_config()?
        };
        let eval = EvalConfig { lr_override: student_lr(&self.sweep.eval_lr, "sweep.eval_lr")?, ..self.eval_config()? };
        Ok((base, eval))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        crate::formats::write_atomic(&dir.join(RESOLVED_NAME), self.to_toml().as_bytes())?;
        Ok(())
    }
}
