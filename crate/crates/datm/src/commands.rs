//! Subcommand bodies. Each takes a resolved config and writes its artifacts.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use datm_core::distill::{auto_tune_window, DistillState, LabelMode};
use datm_core::eval::{
    evaluate, full_data_baseline, heldout_matching_curve, label_std_curve, random_subset_baseline, sweep_cell, EvalReport,
};
use datm_core::experts::{train_expert, ExpertBuffer};
use datm_core::models::ArchSpec;
use datm_core::numkit::LabeledDataset;

use crate::config::{RunConfig, WindowSection};
use crate::data::{arch_for, prepared};
use crate::error::CliError;
use crate::formats::{dsyn, state, write_atomic};
use crate::manifest;
use crate::{charts, export, reports};

pub const SYNSET_NAME: &str = "synset.dsyn";
pub const RUNLOG_NAME: &str = "runlog.csv";
pub const STATE_NAME: &str = "state.dsta";

/// Runs `f` over `items` in parallel unless `strict`; order is preserved.
fn map_items<T: Sync, R: Send>(items: &[T], strict: bool, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if strict {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn sha(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

pub fn load_synset(path: &Path) -> Result<datm_core::distill::SyntheticSet, CliError> {
    let (_, set) = dsyn::decode(&read(path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(set)
}

pub fn cmd_experts(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let data = prepared(cfg)?;
    let arch = arch_for(&cfg.arch.family, &data.train)?;
    let dir = cfg.experts_dir();
    create_dir(&dir)?;
    cfg.write_resolved(&dir)?;
    let held = cfg.experts.held_out.unwrap_or(cfg.experts.count - 1);
    if held >= cfg.experts.count {
        return Err(CliError::Config(format!("experts.held_out {held} out of range for {} experts", cfg.experts.count)));
    }
    let seeds: Vec<u64> = (0..cfg.experts.count as u64).map(|i| cfg.experts.base_seed + i).collect();
    let whitening = cfg.dataset.zca;
    let results = map_items(&seeds, cfg.strict, |&seed| {
        let ecfg = cfg.expert_config(seed, whitening)?;
        Ok::<_, CliError>(train_expert(&data.train, &arch, &ecfg)?)
    });
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(mut t) => {
                t.held_out = i == held;
                done.push(t);
            }
            Err(e) => failures.push(format!("seed {}: {e}", seeds[i])),
        }
    }
    manifest::write_buffer(&dir, &done)?;
    if !failures.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} of {} experts failed ({}); partial manifest written to {}",
            failures.len(),
            seeds.len(),
            failures.join("; "),
            dir.join(manifest::MANIFEST_NAME).display()
        )));
    }
    eprintln!("wrote {} trajectories to {}", done.len(), dir.display());
    Ok(dir)
}

/// Loads the expert buffer and checks it was trained for this config.
fn load_experts(cfg: &RunConfig, dir: &Path, arch: &ArchSpec) -> Result<ExpertBuffer, CliError> {
    let buffer = manifest::read_buffer(dir)?;
    if buffer.arch_id() != arch.arch_id() {
        return Err(CliError::Config(format!("experts in {} are {}, config asks for {}", dir.display(), buffer.arch_id(), arch.arch_id())));
    }
    for t in &buffer.trajectories {
        let expected = cfg.expert_config(t.seed, cfg.dataset.zca)?.digest(arch);
        if t.config_digest != expected {
            return Err(CliError::Config(format!(
                "expert seed {} in {} was trained with a different expert configuration",
                t.seed,
                dir.display()
            )));
        }
    }
    Ok(buffer)
}

struct Setup {
    train: LabeledDataset,
    test: LabeledDataset,
    arch: ArchSpec,
    buffer: ExpertBuffer,
}

fn setup(cfg: &RunConfig, experts: Option<&Path>) -> Result<Setup, CliError> {
    let data = prepared(cfg)?;
    let arch = arch_for(&cfg.arch.family, &data.train)?;
    let dir = experts.map_or_else(|| cfg.experts_dir(), Path::to_path_buf);
    let buffer = load_experts(cfg, &dir, &arch)?;
    Ok(Setup { train: data.train, test: data.test, arch, buffer })
}

pub fn cmd_tune(cfg: &RunConfig, experts: Option<&Path>, out: Option<&Path>) -> Result<WindowSection, CliError> {
    let s = setup(cfg, experts)?;
    let out = out.map_or_else(|| cfg.out_dir.join("tune"), Path::to_path_buf);
    create_dir(&out)?;
    cfg.write_resolved(&out)?;
    let outcome = auto_tune_window(&s.train, &s.buffer, &s.arch, &cfg.distill_config()?, &cfg.tune_config())?;
    let w = outcome.window;
    let section = WindowSection::from_window(&w);
    write_atomic(&out.join("window.toml"), toml::to_string(&section).expect("window serializes").as_bytes())?;
    let mut text = String::from("t_lower,t_upper,early,late\n");
    for p in &outcome.probes {
        text.push_str(&format!("{},{},{},{}\n", p.t_lower, p.t_upper, p.early, p.late));
    }
    write_atomic(&out.join("probes.csv"), text.as_bytes())?;
    println!("{} {} {}", w.t_lower, w.t_init, w.t_upper);
    Ok(section)
}

pub fn read_window_file(path: &Path) -> Result<WindowSection, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read window file {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Default, Clone)]
pub struct DistillFlags {
    pub experts: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resume: bool,
    /// Simulated interruption after this many iterations.
    pub stop_after: Option<usize>,
}

fn interrupt_flag() -> Arc<AtomicBool> {
    static FLAG: std::sync::OnceLock<Arc<AtomicBool>> = std::sync::OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = Arc::clone(&flag);
        // Fails only if another handler is installed; the run then just isn't interruptible.
        let _ = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst));
        flag
    })
    .clone()
}

pub fn cmd_distill(cfg: &RunConfig, flags: &DistillFlags) -> Result<PathBuf, CliError> {
    let s = setup(cfg, flags.experts.as_deref())?;
    let dcfg = cfg.distill_config()?;
    let digest = dcfg.digest();
    let out = flags.out.clone().unwrap_or_else(|| cfg.out_dir.join("distill"));
    create_dir(&out)?;
    cfg.write_resolved(&out)?;
    let ckpt = out.join(STATE_NAME);
    let mut st = if flags.resume {
        let (stored, st) = state::decode(&read(&ckpt)?).map_err(|e| CliError::Runtime(format!("{}: {e}", ckpt.display())))?;
        if stored != digest {
            return Err(CliError::Config(format!("checkpoint {} belongs to a different distillation config", ckpt.display())));
        }
        eprintln!("resuming at iteration {}", st.iter);
        st
    } else {
        DistillState::initialize(&s.train, &s.buffer, &s.arch, &dcfg)?
    };
    let interrupted = interrupt_flag();
    let save_state = |st: &DistillState| -> Result<(), CliError> { Ok(write_atomic(&ckpt, &state::encode(st, &digest)?)?) };
    let write_outputs = |st: &DistillState| -> Result<(), CliError> {
        write_atomic(&out.join(SYNSET_NAME), &dsyn::encode(&st.synset, s.arch.arch_id())?)?;
        reports::write_with_digest(&out.join(RUNLOG_NAME), &reports::runlog_csv(&st.log)?, &digest)?;
        reports::write_with_digest(&out.join("label_std.csv"), &reports::curve_csv(&label_std_curve(&st.log))?, &digest)?;
        Ok(())
    };
    while st.iter < dcfg.iterations {
        let t0 = Instant::now();
        let stepped = st.step(&s.buffer, &s.arch, &dcfg);
        if let Some(row) = st.log.last_mut() {
            row.ms = if cfg.strict { 0.0 } else { t0.elapsed().as_secs_f64() * 1e3 };
        }
        if let Err(e) = stepped {
            write_outputs(&st)?;
            return Err(e.into());
        }
        let row = st.log.last().expect("step logs a row");
        if st.iter % dcfg.log_every == 0 || st.iter == dcfg.iterations {
            eprintln!("iter {} T {} loss {:.5} alpha {:.5}", row.iter, row.t_float, row.loss, row.alpha);
        }
        if st.iter < dcfg.iterations {
            if st.iter % dcfg.log_every == 0 {
                save_state(&st)?;
            }
            if interrupted.load(Ordering::SeqCst) || flags.stop_after == Some(st.iter) {
                save_state(&st)?;
                return Err(CliError::Interrupted { iter: st.iter, checkpoint: ckpt.display().to_string() });
            }
        }
    }
    write_outputs(&st)?;
    let w = &dcfg.window;
    let horizon = s.buffer.horizon();
    let grid: Vec<usize> = (0..=horizon.saturating_sub(w.span)).collect();
    let curve = heldout_matching_curve(&s.arch, &st.synset, s.buffer.held_out(), w.span, w.steps, &grid, dcfg.batch_syn, dcfg.seed)?;
    reports::write_with_digest(&out.join("heldout_curve.csv"), &reports::curve_csv(&curve)?, &digest)?;
    if ckpt.exists() {
        std::fs::remove_file(&ckpt)?;
    }
    eprintln!("wrote {}", out.join(SYNSET_NAME).display());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Random,
    Full,
}

#[derive(Debug, Default, Clone)]
pub struct EvalFlags {
    pub synset: Option<PathBuf>,
    pub baseline: Option<Baseline>,
    pub ipc: Option<usize>,
    pub out: Option<PathBuf>,
}

fn student_archs(cfg: &RunConfig, ds: &LabeledDataset) -> Result<Vec<ArchSpec>, CliError> {
    let families = if cfg.eval.archs.is_empty() { vec![cfg.arch.family.clone()] } else { cfg.eval.archs.clone() };
    families.iter().map(|f| arch_for(f, ds)).collect()
}

pub fn cmd_eval(cfg: &RunConfig, flags: &EvalFlags) -> Result<Vec<EvalReport>, CliError> {
    if flags.synset.is_none() && flags.baseline.is_none() {
        return Err(CliError::Config("eval needs --synset or --baseline".into()));
    }
    let data = prepared(cfg)?;
    let archs = student_archs(cfg, &data.train)?;
    let ecfg = cfg.eval_config()?;
    let out = flags.out.clone().unwrap_or_else(|| cfg.out_dir.join("eval").join("report.csv"));
    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(out_dir)?;
    cfg.write_resolved(out_dir)?;
    let mut reports_out = Vec::new();
    if let Some(path) = &flags.synset {
        let set = load_synset(path)?;
        reports_out.push(evaluate(&set, &archs, &data.test, &ecfg)?);
    }
    match flags.baseline {
        Some(Baseline::Random) => {
            let ipc = flags.ipc.unwrap_or(cfg.distill.ipc);
            reports_out.push(random_subset_baseline(&data.train, ipc, &archs, &data.test, &ecfg)?);
        }
        Some(Baseline::Full) => reports_out.push(full_data_baseline(&data.train, &archs, &data.test, &ecfg)?),
        None => {}
    }
    let mut h = Sha256::new();
    for r in &reports_out {
        h.update(r.digest);
    }
    reports::write_with_digest(&out, &reports::eval_csv(&reports_out)?, &h.finalize().into())?;
    for r in &reports_out {
        for a in &archs {
            let (m, sd) = r.summary(a.arch_id());
            println!("{} {} {:.4} +- {:.4} (lr {})", r.tag.as_str(), a.arch_id(), m, sd, r.learning_rate);
        }
    }
    Ok(reports_out)
}

pub fn cmd_sweep(cfg: &RunConfig, experts: Option<&Path>, out: Option<&Path>, charts_on: bool) -> Result<Vec<datm_core::eval::SweepCell>, CliError> {
    let s = setup(cfg, experts)?;
    let (base, ecfg) = cfg.sweep_base()?;
    let presets = cfg.sweep_presets()?;
    let out = out.map_or_else(|| cfg.out_dir.join("sweep"), Path::to_path_buf);
    create_dir(&out)?;
    cfg.write_resolved(&out)?;
    let grid: Vec<(usize, _)> = cfg.sweep.ipcs.iter().flat_map(|&i| presets.iter().map(move |&p| (i, p))).collect();
    let cells = map_items(&grid, cfg.strict, |&(ipc, preset)| {
        sweep_cell(&s.train, &s.test, &s.buffer, &s.arch, ipc, preset, &base, &ecfg, &cfg.sweep.seeds)
    });
    let digest = sha(&cfg.to_toml());
    reports::write_with_digest(&out.join("sweep.csv"), &reports::sweep_csv(&cells)?, &digest)?;
    if charts_on {
        for (name, png) in charts::sweep_charts(&cells)? {
            write_atomic(&out.join(name), &png)?;
        }
    }
    for c in &cells {
        match &c.error {
            None => println!("ipc {:>3} {:<5} {:.4} +- {:.4}", c.ipc, c.preset.as_str(), c.mean_acc, c.std_acc),
            Some(e) => println!("ipc {:>3} {:<5} failed: {e}", c.ipc, c.preset.as_str()),
        }
    }
    Ok(cells)
}

pub fn cmd_export(synset: &Path, out: &Path) -> Result<(), CliError> {
    let set = load_synset(synset)?;
    let grid = export::tile(&set)?;
    write_atomic(out, &export::encode(&grid)?)?;
    Ok(())
}

pub fn cmd_convert(images: &Path, labels: &Path, num_classes: Option<usize>, out: &Path) -> Result<(), CliError> {
    let name = out.file_stem().map_or("idx".into(), |s| s.to_string_lossy().into_owned());
    let ds = crate::formats::idx::decode(&read(images)?, &read(labels)?, num_classes, &name)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", images.display())))?;
    write_atomic(out, &crate::formats::dset::encode(&ds)?)?;
    eprintln!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

/// Checks a `--label-mode` value early so it reports as a config error.
pub fn parse_label_mode(s: &str) -> Result<LabelMode, CliError> {
    Ok(LabelMode::parse(s)?)
}
