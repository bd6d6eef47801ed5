//! Expert manifest: one `file seed held_out` line per trajectory, with file
//! names relative to the manifest's directory.

use std::fmt::Write as _;
use std::path::Path;

use datm_core::experts::{ExpertBuffer, ExpertTrajectory};

use crate::error::CliError;
use crate::formats::{dtrj, write_atomic};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub file: String,
    pub seed: u64,
    pub held_out: bool,
}

pub fn render(entries: &[Entry]) -> String {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{} {} {}", e.file, e.seed, e.held_out).expect("string write");
    }
    s
}

pub fn parse(text: &str) -> Result<Vec<Entry>, CliError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CliError::Runtime(format!("manifest line {}: expected `file seed held_out`, got {line:?}", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(bad());
        }
        out.push(Entry { file: f[0].into(), seed: f[1].parse().map_err(|_| bad())?, held_out: f[2].parse().map_err(|_| bad())? });
    }
    Ok(out)
}

pub fn file_name(index: usize) -> String {
    format!("expert_{index:03}.dtrj")
}

/// Writes each trajectory file, then the manifest listing them.
pub fn write_buffer(dir: &Path, trajectories: &[ExpertTrajectory]) -> Result<Vec<Entry>, CliError> {
    let mut entries = Vec::with_capacity(trajectories.len());
    for (i, t) in trajectories.iter().enumerate() {
        let file = file_name(i);
        write_atomic(&dir.join(&file), &dtrj::encode(t)?)?;
        entries.push(Entry { file, seed: t.seed, held_out: t.held_out });
    }
    write_atomic(&dir.join(MANIFEST_NAME), render(&entries).as_bytes())?;
    Ok(entries)
}

pub fn read_buffer(dir: &Path) -> Result<ExpertBuffer, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Runtime(format!("cannot read expert manifest {}: {e}", path.display())))?;
    let mut trajectories = Vec::new();
    for entry in parse(&text)? {
        let p = dir.join(&entry.file);
        let bytes = std::fs::read(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let mut t = dtrj::decode(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        if t.seed != entry.seed {
            return Err(CliError::Runtime(format!("{}: seed {} but manifest says {}", p.display(), t.seed, entry.seed)));
        }
        t.held_out = entry.held_out;
        trajectories.push(t);
    }
    Ok(ExpertBuffer::from_flagged(trajectories)?)
}
