//! MNIST-style IDX files: big-endian, `0x00000803` images and `0x00000801` labels.

use datm_core::numkit::{LabeledDataset, Tensor};

use super::FormatError;

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<(Vec<usize>, &[u8]), FormatError> {
    let head = 4 + 4 * dims;
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if bytes.len() < 4 {
        return Err(FormatError::Truncated);
    }
    if be(0) != magic {
        return Err(FormatError::Magic { expected: format!("{magic:#010x}") });
    }
    if bytes.len() < head {
        return Err(FormatError::Truncated);
    }
    let shape: Vec<usize> = (0..dims).map(|i| be(4 + 4 * i) as usize).collect();
    let body = &bytes[head..];
    if body.len() != shape.iter().product::<usize>() {
        return Err(FormatError::Invalid(format!("IDX body has {} bytes for shape {shape:?}", body.len())));
    }
    Ok((shape, body))
}

/// Pixels are scaled to `[0, 1]`; classes are `max(label) + 1` unless given.
pub fn decode(images: &[u8], labels: &[u8], num_classes: Option<usize>, name: &str) -> Result<LabeledDataset, FormatError> {
    let (shape, pixels) = header(images, 0x0803, 3)?;
    let (lshape, lbytes) = header(labels, 0x0801, 1)?;
    if lshape[0] != shape[0] {
        return Err(FormatError::Invalid(format!("{} images but {} labels", shape[0], lshape[0])));
    }
    let labels: Vec<usize> = lbytes.iter().map(|&b| usize::from(b)).collect();
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let images = Tensor::new(vec![shape[0], 1, shape[1], shape[2]], data)?;
    Ok(LabeledDataset::new(images, labels, k, name.to_string())?)
}

#[cfg(test)]
pub(crate) fn encode(images: &[u8], labels: &[u8], n: u32, h: u32, w: u32) -> (Vec<u8>, Vec<u8>) {
    let mut a = Vec::new();
    for v in [0x0803, n, h, w] {
        a.extend_from_slice(&v.to_be_bytes());
    }
    a.extend_from_slice(images);
    let mut b = Vec::new();
    for v in [0x0801, n] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(labels);
    (a, b)
}
