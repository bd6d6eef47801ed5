//! Expert trajectory file.

use std::sync::Arc;

use datm_core::experts::ExpertTrajectory;
use datm_core::models::ArchSpec;
use datm_core::numkit::ParamVector;

use super::codec::{Decoder, Encoder};
use super::FormatError;

const MAGIC: &[u8; 4] = b"DTRJ";
const VERSION: u32 = 1;

/// Parameters are stored as f32.
pub fn encode(traj: &ExpertTrajectory) -> Result<Vec<u8>, FormatError> {
    traj.validate()?;
    let mut e = Encoder::new(MAGIC, VERSION);
    e.str(&traj.arch_id)?;
    e.len32(traj.param_count())?;
    e.len32(traj.checkpoints.len())?;
    e.u64(traj.seed);
    e.bytes(&traj.config_digest);
    for c in &traj.checkpoints {
        e.f32s(&c.values);
    }
    Ok(e.finish())
}

/// The held-out flag lives in the manifest and is left unset here.
pub fn decode(bytes: &[u8]) -> Result<ExpertTrajectory, FormatError> {
    let mut d = Decoder::open(bytes, MAGIC)?;
    if d.version != VERSION {
        return Err(FormatError::Version(d.version));
    }
    let arch_id = d.str()?;
    let arch = ArchSpec::parse(&arch_id)?;
    let p = d.usize()?;
    if p != arch.param_count() {
        return Err(FormatError::Invalid(format!("{p} parameters stored for {arch_id} ({})", arch.param_count())));
    }
    let count = d.usize()?;
    let seed = d.u64()?;
    let config_digest = d.array32()?;
    let layout = Arc::clone(arch.layout());
    let mut checkpoints = Vec::with_capacity(count);
    for _ in 0..count {
        checkpoints.push(ParamVector::new(Arc::clone(&layout), d.f32s(p)?)?);
    }
    d.finish()?;
    let traj = ExpertTrajectory { arch_id, seed, checkpoints, config_digest, metrics: Vec::new(), held_out: false };
    traj.validate()?;
    Ok(traj)
}
