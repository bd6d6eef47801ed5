//! Binary artifacts. Every file ends with a CRC32 of all preceding bytes.

mod codec;
pub mod dset;
pub mod dsyn;
pub mod dtrj;
pub mod idx;
pub mod state;

use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("checksum mismatch")]
    Checksum,
    #[error("bad magic, expected {expected:?}")]
    Magic { expected: String },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("file truncated")]
    Truncated,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] datm_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes `bytes` next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}
