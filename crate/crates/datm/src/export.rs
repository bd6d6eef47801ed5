//! Image grids of a synthetic set: one row per class, one column per image,
//! 1px white separators.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};

use datm_core::distill::SyntheticSet;

use crate::error::CliError;

pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, interleaved channels.
    pub pixels: Vec<u8>,
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn tile(set: &SyntheticSet) -> Result<Grid, CliError> {
    let (c, h, w) = set.sample_shape();
    let k = set.num_classes();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &t) in set.targets.iter().enumerate() {
        rows[t].push(i);
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if cols == 0 {
        return Err(CliError::Runtime("synthetic set is empty".into()));
    }
    let width = cols * w + (cols - 1);
    let height = k * h + (k - 1);
    let mut pixels = vec![255u8; width * height * c];
    let plane = h * w;
    for (class, members) in rows.iter().enumerate() {
        for (col, &i) in members.iter().enumerate() {
            let img = set.images.row(i);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let mut v = img[ch * plane + y * w + x];
                        if let Some(stats) = &set.normalization {
                            v = stats.denormalize(ch, v);
                        }
                        let (gy, gx) = (class * (h + 1) + y, col * (w + 1) + x);
                        pixels[(gy * width + gx) * c + ch] = quantize(v);
                    }
                }
            }
        }
    }
    Ok(Grid { width, height, channels: c, pixels })
}

pub fn pgm(grid: &Grid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend_from_slice(&grid.pixels);
    out
}

/// PGM for one channel, PNG for three.
pub fn encode(grid: &Grid) -> Result<Vec<u8>, CliError> {
    match grid.channels {
        1 => Ok(pgm(grid)),
        3 => {
            let img = RgbImage::from_raw(grid.width as u32, grid.height as u32, grid.pixels.clone())
                .ok_or_else(|| CliError::Runtime("grid buffer size mismatch".into()))?;
            let mut out = Cursor::new(Vec::new());
            img.write_to(&mut out, ImageFormat::Png)?;
            Ok(out.into_inner())
        }
        c => Err(CliError::Runtime(format!("cannot export {c}-channel images"))),
    }
}
