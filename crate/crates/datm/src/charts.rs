//! Minimal native chart rendering: axes, bars with error whiskers, polylines.
//! No text; the accompanying CSV carries the numbers.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use datm_core::eval::SweepCell;

use crate::error::CliError;

const W: u32 = 480;
const H: u32 = 320;
const MARGIN: u32 = 30;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189], [255, 127, 14], [23, 190, 207]];
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

struct Canvas {
    img: RgbImage,
    lo: f64,
    hi: f64,
}

impl Canvas {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        lo = lo.min(0.0);
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
        for k in 0..=4 {
            let y = MARGIN + k * (H - 2 * MARGIN) / 4;
            for x in MARGIN..W - MARGIN {
                img.put_pixel(x, y, GRID);
            }
        }
        for x in MARGIN..W - MARGIN {
            img.put_pixel(x, H - MARGIN, AXIS);
        }
        for y in MARGIN..=H - MARGIN {
            img.put_pixel(MARGIN, y, AXIS);
        }
        Self { img, lo, hi }
    }

    fn y(&self, v: f64) -> i64 {
        let frac = ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        (f64::from(H - MARGIN) - frac * f64::from(H - 2 * MARGIN)).round() as i64
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if (0..i64::from(W)).contains(&x) && (0..i64::from(H)).contains(&y) {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn rect(&mut self, x0: i64, x1: i64, y0: i64, y1: i64, c: Rgb<u8>) {
        for x in x0.min(x1)..=x0.max(x1) {
            for y in y0.min(y1)..=y0.max(y1) {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let n = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for i in 0..=n {
            let x = x0 + (x1 - x0) * i / n;
            let y = y0 + (y1 - y0) * i / n;
            self.rect(x, x + 1, y, y + 1, c);
        }
    }

    fn png(self) -> Result<Vec<u8>, CliError> {
        let mut out = Cursor::new(Vec::new());
        self.img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

fn color(i: usize) -> Rgb<u8> {
    Rgb(PALETTE[i % PALETTE.len()])
}

/// One bar per `(value, std)`, with a whisker of one std.
pub fn bar_chart(bars: &[(f64, f64)]) -> Result<Vec<u8>, CliError> {
    let mut c = Canvas::new(bars.iter().flat_map(|(m, s)| [m + s, m - s, *m]));
    let n = bars.len().max(1) as i64;
    let plot = i64::from(W - 2 * MARGIN);
    let base = c.y(c.lo.max(0.0));
    for (i, &(m, s)) in bars.iter().enumerate() {
        if !m.is_finite() {
            continue;
        }
        let i = i as i64;
        let x0 = i64::from(MARGIN) + plot * i / n + plot / (4 * n);
        let x1 = i64::from(MARGIN) + plot * (i + 1) / n - plot / (4 * n);
        c.rect(x0, x1, c.y(m), base, color(i as usize));
        if s.is_finite() && s > 0.0 {
            let mid = (x0 + x1) / 2;
            let (top, bottom) = (c.y(m + s), c.y(m - s));
            c.rect(mid, mid, top, bottom, AXIS);
            c.rect(mid - 4, mid + 4, top, top, AXIS);
            c.rect(mid - 4, mid + 4, bottom, bottom, AXIS);
        }
    }
    c.png()
}

/// One polyline per series over evenly spaced x positions.
pub fn line_chart(series: &[Vec<f64>]) -> Result<Vec<u8>, CliError> {
    let mut c = Canvas::new(series.iter().flatten().copied());
    let points = series.iter().map(Vec::len).max().unwrap_or(0);
    let plot = i64::from(W - 2 * MARGIN);
    let x = |i: usize| i64::from(MARGIN) + 10 + (plot - 20) * i as i64 / (points.max(2) - 1) as i64;
    for (s, values) in series.iter().enumerate() {
        let mut prev: Option<(i64, i64)> = None;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let p = (x(i), c.y(v));
            if let Some(q) = prev {
                c.line(q, p, color(s));
            }
            c.rect(p.0 - 3, p.0 + 3, p.1 - 3, p.1 + 3, color(s));
            prev = Some(p);
        }
    }
    c.png()
}

/// `(file name, png)` pairs: one bar chart per IPC and one line chart of
/// accuracy against IPC per preset.
pub fn sweep_charts(cells: &[SweepCell]) -> Result<Vec<(String, Vec<u8>)>, CliError> {
    let mut ipcs: Vec<usize> = cells.iter().map(|c| c.ipc).collect();
    ipcs.dedup();
    let mut presets = Vec::new();
    for c in cells {
        if !presets.contains(&c.preset) {
            presets.push(c.preset);
        }
    }
    let mut out = Vec::new();
    for &ipc in &ipcs {
        let bars: Vec<(f64, f64)> = cells.iter().filter(|c| c.ipc == ipc).map(|c| (c.mean_acc, c.std_acc)).collect();
        out.push((format!("sweep_ipc{ipc}.png"), bar_chart(&bars)?));
    }
    let series: Vec<Vec<f64>> = presets
        .iter()
        .map(|&p| ipcs.iter().map(|&i| cells.iter().find(|c| c.ipc == i && c.preset == p).map_or(f64::NAN, |c| c.mean_acc)).collect())
        .collect();
    out.push(("sweep_lines.png".to_string(), line_chart(&series)?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_decode_as_png() {
        for bytes in [bar_chart(&[(0.5, 0.1), (0.7, 0.0), (f64::NAN, 0.0)]).unwrap(), line_chart(&[vec![0.1, 0.4, 0.3], vec![0.2]]).unwrap()] {
            let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).unwrap();
            assert_eq!((img.width(), img.height()), (W, H));
        }
        assert!(bar_chart(&[]).is_ok());
    }
}
