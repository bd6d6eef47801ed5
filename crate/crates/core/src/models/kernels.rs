//! Per-layer batch kernels over flat row-major buffers.
//!
//! Dense and convolution layers are bilinear in (weights, inputs), so every
//! derivative needed up to second order reduces to three primitives:
//! `apply(w, x)`, `back_input(w, dy)` and `back_weight(x, dy)`.

use alloc::vec;

use crate::numkit::linalg::{gemm, MatRef};

pub(crate) fn dense_apply(w: &[f64], x: &[f64], n: usize, inputs: usize, outputs: usize, beta: f64, y: &mut [f64]) {
    gemm(
        1.0,
        MatRef::row_major(x, n, inputs),
        MatRef::transposed(w, outputs, inputs),
        beta,
        y,
    );
}

pub(crate) fn dense_back_input(w: &[f64], dy: &[f64], n: usize, inputs: usize, outputs: usize, beta: f64, dx: &mut [f64]) {
    gemm(
        1.0,
        MatRef::row_major(dy, n, outputs),
        MatRef::row_major(w, outputs, inputs),
        beta,
        dx,
    );
}

pub(crate) fn dense_back_weight(x: &[f64], dy: &[f64], n: usize, inputs: usize, outputs: usize, beta: f64, dw: &mut [f64]) {
    gemm(
        1.0,
        MatRef::transposed(dy, n, outputs),
        MatRef::row_major(x, n, inputs),
        beta,
        dw,
    );
}

#[derive(Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.height * self.width
    }
    fn col_rows(&self) -> usize {
        self.in_c * 9
    }
}

fn im2col(g: ConvGeom, img: &[f64], cols: &mut [f64]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let plane = g.plane();
    for ic in 0..g.in_c {
        let src = &img[ic * plane..(ic + 1) * plane];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = ic * 9 + (ky * 3 + kx) as usize;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for y in 0..h {
                    let sy = y + ky - 1;
                    for x in 0..w {
                        let sx = x + kx - 1;
                        dst[(y * w + x) as usize] = if sy >= 0 && sy < h && sx >= 0 && sx < w {
                            src[(sy * w + sx) as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: ConvGeom, cols: &[f64], img: &mut [f64]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let plane = g.plane();
    for ic in 0..g.in_c {
        let dst = &mut img[ic * plane..(ic + 1) * plane];
        for ky in 0..3isize {
            for kx in 0..3isize {
                let row = ic * 9 + (ky * 3 + kx) as usize;
                let src = &cols[row * plane..(row + 1) * plane];
                for y in 0..h {
                    let sy = y + ky - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x + kx - 1;
                        if sx >= 0 && sx < w {
                            dst[(sy * w + sx) as usize] += src[(y * w + x) as usize];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_apply(g: ConvGeom, k: &[f64], x: &[f64], n: usize, beta: f64, y: &mut [f64]) {
    let (in_sz, out_sz, plane) = (g.in_c * g.plane(), g.out_c * g.plane(), g.plane());
    let mut cols = vec![0.0; g.col_rows() * plane];
    for b in 0..n {
        im2col(g, &x[b * in_sz..(b + 1) * in_sz], &mut cols);
        gemm(
            1.0,
            MatRef::row_major(k, g.out_c, g.col_rows()),
            MatRef::row_major(&cols, g.col_rows(), plane),
            beta,
            &mut y[b * out_sz..(b + 1) * out_sz],
        );
    }
}

pub(crate) fn conv_back_input(g: ConvGeom, k: &[f64], dy: &[f64], n: usize, beta: f64, dx: &mut [f64]) {
    let (in_sz, out_sz, plane) = (g.in_c * g.plane(), g.out_c * g.plane(), g.plane());
    let mut cols = vec![0.0; g.col_rows() * plane];
    for b in 0..n {
        gemm(
            1.0,
            MatRef::transposed(k, g.out_c, g.col_rows()),
            MatRef::row_major(&dy[b * out_sz..(b + 1) * out_sz], g.out_c, plane),
            0.0,
            &mut cols,
        );
        let dst = &mut dx[b * in_sz..(b + 1) * in_sz];
        if beta == 0.0 {
            dst.fill(0.0);
        }
        col2im_add(g, &cols, dst);
    }
}

pub(crate) fn conv_back_weight(g: ConvGeom, x: &[f64], dy: &[f64], n: usize, beta: f64, dk: &mut [f64]) {
    let (in_sz, out_sz, plane) = (g.in_c * g.plane(), g.out_c * g.plane(), g.plane());
    let mut cols = vec![0.0; g.col_rows() * plane];
    if beta == 0.0 {
        dk.fill(0.0);
    }
    for b in 0..n {
        im2col(g, &x[b * in_sz..(b + 1) * in_sz], &mut cols);
        gemm(
            1.0,
            MatRef::row_major(&dy[b * out_sz..(b + 1) * out_sz], g.out_c, plane),
            MatRef::transposed(&cols, g.col_rows(), plane),
            1.0,
            dk,
        );
    }
}

/// Adds `bias[o]` to every element of output channel `o`; `group` is the
/// number of contiguous elements per channel (1 for dense layers).
pub(crate) fn add_bias(bias: &[f64], group: usize, y: &mut [f64]) {
    let stride = bias.len() * group;
    for row in y.chunks_mut(stride) {
        for (o, b) in bias.iter().enumerate() {
            for v in &mut row[o * group..(o + 1) * group] {
                *v += b;
            }
        }
    }
}

pub(crate) fn bias_grad(dy: &[f64], channels: usize, group: usize, db: &mut [f64]) {
    db.fill(0.0);
    for row in dy.chunks(channels * group) {
        for (o, d) in db.iter_mut().enumerate() {
            *d += row[o * group..(o + 1) * group].iter().sum::<f64>();
        }
    }
}

pub(crate) fn pool_forward(channels: usize, height: usize, width: usize, x: &[f64], y: &mut [f64]) {
    let (oh, ow) = (height / 2, width / 2);
    let in_sz = channels * height * width;
    let out_sz = channels * oh * ow;
    for (xi, yi) in x.chunks(in_sz).zip(y.chunks_mut(out_sz)) {
        for c in 0..channels {
            for i in 0..oh {
                for j in 0..ow {
                    let base = c * height * width + 2 * i * width + 2 * j;
                    yi[c * oh * ow + i * ow + j] =
                        0.25 * (xi[base] + xi[base + 1] + xi[base + width] + xi[base + width + 1]);
                }
            }
        }
    }
}

pub(crate) fn pool_adjoint(channels: usize, height: usize, width: usize, dy: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (height / 2, width / 2);
    let in_sz = channels * height * width;
    let out_sz = channels * oh * ow;
    for (dxi, dyi) in dx.chunks_mut(in_sz).zip(dy.chunks(out_sz)) {
        for c in 0..channels {
            for i in 0..oh {
                for j in 0..ow {
                    let g = 0.25 * dyi[c * oh * ow + i * ow + j];
                    let base = c * height * width + 2 * i * width + 2 * j;
                    dxi[base] = g;
                    dxi[base + 1] = g;
                    dxi[base + width] = g;
                    dxi[base + width + 1] = g;
                }
            }
        }
    }
}
