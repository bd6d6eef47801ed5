//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{self, Baseline, DistillFlags, EvalFlags};
use crate::config::RunConfig;
use crate::error::CliError;

const TOP_LEVEL_KEYS: [&str; 2] = ["out_dir", "strict"];

#[derive(Debug, Parser)]
#[command(
    name = "datm",
    version,
    about = "Dataset distillation by difficulty-aligned trajectory matching",
    after_help = "Any config key can be overridden with `--section.key value`, e.g. `--distill.ipc 10`.\nDATM_STRICT=1 forces sequential, byte-reproducible runs."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineArg {
    Random,
    Full,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the expert trajectories and write them with a manifest.
    Experts { config: PathBuf },
    /// Search a matching window on the held-out trajectory.
    Tune {
        config: PathBuf,
        #[arg(long)]
        experts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distill a synthetic set.
    Distill {
        config: PathBuf,
        #[arg(long)]
        experts: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long, value_name = "MODE")]
        label_mode: Option<String>,
        /// Window written by `tune`.
        #[arg(long)]
        window: Option<PathBuf>,
        /// Checkpoint and exit with status 4 after this many iterations.
        #[arg(long, value_name = "K")]
        stop_after: Option<usize>,
    },
    /// Train students on a synthetic set or a baseline and report test accuracy.
    Eval {
        config: PathBuf,
        #[arg(long)]
        synset: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long)]
        ipc: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Report CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of early, late and full windows across IPCs.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        experts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        charts: bool,
    },
    /// Tile a synthetic set into an image grid (PGM or PNG).
    ExportImages { synset: PathBuf, out: PathBuf },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Debug, Subcommand)]
enum DataCommand {
    /// Convert IDX image and label files to a DSET file.
    Convert {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
    },
}

/// `(key, value)` config overrides in command-line order.
pub type Overrides = Vec<(String, String)>;

/// Splits `--section.key value` and `--section.key=value` pairs out of argv.
pub fn extract_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let key = a.to_str().and_then(|s| s.strip_prefix("--")).map(str::to_string);
        let Some(key) = key else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (key.clone(), None),
        };
        if !(name.contains('.') || TOP_LEVEL_KEYS.contains(&name.as_str())) {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| CliError::Config(format!("override --{name} needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn load(config: &Path, mut overrides: Overrides, extra: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
    for (k, v) in extra {
        if let Some(v) = v {
            overrides.push(((*k).to_string(), v.clone()));
        }
    }
    RunConfig::load(config, &overrides)
}

fn dispatch(cli: Cli, overrides: Overrides) -> Result<(), CliError> {
    match cli.command {
        Command::Experts { config } => {
            commands::cmd_experts(&load(&config, overrides, &[])?)?;
        }
        Command::Tune { config, experts, out } => {
            commands::cmd_tune(&load(&config, overrides, &[])?, experts.as_deref(), out.as_deref())?;
        }
        Command::Distill { config, experts, out, resume, label_mode, window, stop_after } => {
            if let Some(m) = &label_mode {
                commands::parse_label_mode(m)?;
            }
            let label = label_mode.map(|m| format!("{m:?}"));
            let mut cfg = load(&config, overrides, &[("distill.label_mode", label)])?;
            if let Some(path) = window {
                let mut w = commands::read_window_file(&path)?;
                if w.ramp_iters.is_none() {
                    w.ramp_iters = Some(cfg.distill.iterations / 2);
                }
                cfg.distill.window = w;
                cfg.distill_config()?.validate()?;
            }
            commands::cmd_distill(&cfg, &DistillFlags { experts, out, resume, stop_after })?;
        }
        Command::Eval { config, synset, baseline, ipc, trials, out } => {
            let cfg = load(&config, overrides, &[("eval.trials", trials.map(|t| t.to_string()))])?;
            let baseline = baseline.map(|b| match b {
                BaselineArg::Random => Baseline::Random,
                BaselineArg::Full => Baseline::Full,
            });
            commands::cmd_eval(&cfg, &EvalFlags { synset, baseline, ipc, out })?;
        }
        Command::Sweep { config, experts, out, charts } => {
            commands::cmd_sweep(&load(&config, overrides, &[])?, experts.as_deref(), out.as_deref(), charts)?;
        }
        Command::ExportImages { synset, out } => commands::cmd_export(&synset, &out)?,
        Command::Data { command: DataCommand::Convert { images, labels, out, num_classes } } => {
            commands::cmd_convert(&images, &labels, num_classes, &out)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let (rest, overrides) = match extract_overrides(args.into_iter().collect()) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("datm: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli, overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("datm: {e}");
            e.exit_code()
        }
    }
}
