//! Synthetic set file. Images and logits are f32, alpha is f64.

use datm_core::distill::{LabelMode, Provenance, SyntheticSet};
use datm_core::numkit::{ChannelStats, Tensor};

use super::codec::{Decoder, Encoder};
use super::FormatError;

const MAGIC: &[u8; 4] = b"DSYN";
const VERSION: u32 = 1;

pub(crate) fn put_body(e: &mut Encoder, set: &SyntheticSet, wide: bool) -> Result<(), FormatError> {
    let (c, h, w) = set.sample_shape();
    for v in [set.len(), c, h, w, set.num_classes()] {
        e.len32(v)?;
    }
    if wide {
        e.f64s(set.images.data());
        e.f64s(set.logits.data());
    } else {
        e.f32s(set.images.data());
        e.f32s(set.logits.data());
    }
    e.f64(set.alpha);
    for &t in &set.targets {
        let t = u16::try_from(t).map_err(|_| FormatError::Invalid(format!("class {t} does not fit u16")))?;
        e.u16(t);
    }
    e.u64(set.provenance.seed);
    e.str(&set.provenance.labeling_checkpoint)?;
    e.u8(set.label_mode.code());
    e.len32(set.provenance.source_indices.len())?;
    for &i in &set.provenance.source_indices {
        e.len32(i)?;
    }
    match &set.normalization {
        None => e.u8(0),
        Some(stats) => {
            e.u8(1);
            e.f64s(&stats.mean);
            e.f64s(&stats.std);
        }
    }
    Ok(())
}

pub(crate) fn get_body(d: &mut Decoder<'_>, wide: bool) -> Result<SyntheticSet, FormatError> {
    let (n, c, h, w, k) = (d.usize()?, d.usize()?, d.usize()?, d.usize()?, d.usize()?);
    let (images, logits) = if wide {
        (d.f64s(n * c * h * w)?, d.f64s(n * k)?)
    } else {
        (d.f32s(n * c * h * w)?, d.f32s(n * k)?)
    };
    let alpha = d.f64()?;
    let targets = (0..n).map(|_| d.u16().map(usize::from)).collect::<Result<Vec<_>, _>>()?;
    let seed = d.u64()?;
    let labeling_checkpoint = d.str()?;
    let label_mode = LabelMode::from_code(d.u8()?)?;
    let m = d.usize()?;
    let source_indices = (0..m).map(|_| d.usize()).collect::<Result<Vec<_>, _>>()?;
    let normalization = match d.u8()? {
        0 => None,
        1 => Some(ChannelStats { mean: d.f64s(c)?, std: d.f64s(c)? }),
        f => return Err(FormatError::Invalid(format!("normalization flag {f}"))),
    };
    let set = SyntheticSet {
        images: Tensor::new(vec![n, c, h, w], images)?,
        logits: Tensor::new(vec![n, k], logits)?,
        alpha,
        targets,
        label_mode,
        provenance: Provenance { seed, source_indices, labeling_checkpoint },
        normalization,
    };
    set.validate()?;
    Ok(set)
}

/// `arch_id` names the labeling model.
pub fn encode(set: &SyntheticSet, arch_id: &str) -> Result<Vec<u8>, FormatError> {
    set.validate()?;
    let mut e = Encoder::new(MAGIC, VERSION);
    e.str(arch_id)?;
    put_body(&mut e, set, false)?;
    Ok(e.finish())
}

/// Returns the labeling arch id and the set.
pub fn decode(bytes: &[u8]) -> Result<(String, SyntheticSet), FormatError> {
    let mut d = Decoder::open(bytes, MAGIC)?;
    if d.version != VERSION {
        return Err(FormatError::Version(d.version));
    }
    let arch = d.str()?;
    let set = get_body(&mut d, false)?;
    d.finish()?;
    Ok((arch, set))
}
