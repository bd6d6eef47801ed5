//! CSV reports. Each report can carry a `.digest` sidecar holding the hex
//! SHA-256 of the configuration that produced it.

use std::path::{Path, PathBuf};

use datm_core::distill::LogRow;
use datm_core::eval::{DiagnosticCurve, EvalReport, SweepCell};

use crate::error::CliError;
use crate::formats::write_atomic;

pub const RUNLOG_HEADER: [&str; 10] = ["iter", "expert", "t", "T", "loss", "alpha", "gnorm_img", "gnorm_logit", "gnorm_alpha", "ms"];

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".digest");
    PathBuf::from(s)
}

pub fn write_with_digest(path: &Path, bytes: &[u8], digest: &[u8; 32]) -> Result<(), CliError> {
    write_atomic(path, bytes)?;
    write_atomic(&sidecar_path(path), format!("{}\n", hex(digest)).as_bytes())?;
    Ok(())
}

pub fn runlog_csv(log: &[LogRow]) -> Result<Vec<u8>, CliError> {
    to_csv(
        &RUNLOG_HEADER,
        log.iter().map(|r| {
            vec![
                r.iter.to_string(),
                r.expert.to_string(),
                r.t.to_string(),
                r.t_float.to_string(),
                r.loss.to_string(),
                r.alpha.to_string(),
                r.gnorm_img.to_string(),
                r.gnorm_logit.to_string(),
                r.gnorm_alpha.to_string(),
                r.ms.to_string(),
            ]
        }),
    )
}

pub fn curve_csv(curve: &DiagnosticCurve) -> Result<Vec<u8>, CliError> {
    to_csv(&["x", "y"], curve.x.iter().zip(&curve.y).map(|(x, y)| vec![x.to_string(), y.to_string()]))
}

pub fn eval_csv(reports: &[EvalReport]) -> Result<Vec<u8>, CliError> {
    to_csv(
        &["tag", "arch", "trial", "acc"],
        reports.iter().flat_map(|rep| {
            rep.rows.iter().map(move |r| vec![rep.tag.as_str().to_string(), r.arch_id.clone(), r.trial.to_string(), r.acc.to_string()])
        }),
    )
}

pub fn sweep_csv(cells: &[SweepCell]) -> Result<Vec<u8>, CliError> {
    to_csv(
        &["ipc", "preset", "mean_acc", "std_acc", "iterations"],
        cells.iter().map(|c| {
            vec![
                c.ipc.to_string(),
                c.preset.as_str().to_string(),
                c.mean_acc.to_string(),
                c.std_acc.to_string(),
                c.iterations.to_string(),
            ]
        }),
    )
}
