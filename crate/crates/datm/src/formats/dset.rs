//! Native dataset file: `DSET`, version, n/c/h/w/k, f32 pixels, u16 labels.

use datm_core::numkit::{LabeledDataset, Tensor};

use super::codec::{Decoder, Encoder};
use super::FormatError;

const MAGIC: &[u8; 4] = b"DSET";
const VERSION: u32 = 1;

pub fn encode(ds: &LabeledDataset) -> Result<Vec<u8>, FormatError> {
    let (c, h, w) = ds.sample_shape();
    if ds.num_classes > usize::from(u16::MAX) + 1 {
        return Err(FormatError::Invalid(format!("{} classes do not fit u16 labels", ds.num_classes)));
    }
    let mut e = Encoder::new(MAGIC, VERSION);
    for v in [ds.len(), c, h, w, ds.num_classes] {
        e.len32(v)?;
    }
    e.f32s(ds.images.data());
    for &l in &ds.labels {
        e.u16(l as u16);
    }
    Ok(e.finish())
}

pub fn decode(bytes: &[u8], name: &str) -> Result<LabeledDataset, FormatError> {
    let mut d = Decoder::open(bytes, MAGIC)?;
    if d.version != VERSION {
        return Err(FormatError::Version(d.version));
    }
    let (n, c, h, w, k) = (d.usize()?, d.usize()?, d.usize()?, d.usize()?, d.usize()?);
    let pixels = d.f32s(n * c * h * w)?;
    let labels = (0..n).map(|_| d.u16().map(usize::from)).collect::<Result<Vec<_>, _>>()?;
    d.finish()?;
    let images = Tensor::new(vec![n, c, h, w], pixels)?;
    Ok(LabeledDataset::new(images, labels, k, name.to_string())?)
}
