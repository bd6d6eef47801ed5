//! Forward pass, parameter gradients, and the second-order pass used to
//! differentiate through gradient steps.
//!
//! The second-order pass evaluates `s = <grad_theta loss, v>` by pushing a
//! tangent `v` in parameter space through the forward computation, then
//! reverse-differentiates that tangent-augmented computation. One call yields
//! `H v` together with the mixed partials `d s / d images` and
//! `d s / d targets`, which is everything a reverse sweep over an SGD step
//! needs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::models::arch::{ArchSpec, Layer};
use crate::models::kernels::{self, ConvGeom};
use crate::numkit::{argmax, log_softmax_row, softmax_row, LabeledDataset, ParamVector, Rng, Tensor};

/// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
pub fn init_network(arch: &ArchSpec, rng: &mut Rng) -> ParamVector {
    let mut params = ParamVector::zeros(arch.layout().clone());
    for (i, layer) in arch.layers().iter().enumerate() {
        let fan_in = match *layer {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv3x3 { in_c, .. } => in_c * 9,
            _ => continue,
        };
        let (wl, _) = layer.param_shape().expect("parameterized layer");
        let offset = arch.param_offset(i).expect("parameterized layer");
        let std = libm::sqrt(2.0 / fan_in as f64);
        for v in &mut params.values[offset..offset + wl] {
            *v = std * rng.normal();
        }
    }
    params
}

fn layer_params<'a>(arch: &ArchSpec, layer: usize, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
    let (wl, bl) = arch.layers()[layer].param_shape().expect("parameterized layer");
    let off = arch.param_offset(layer).expect("parameterized layer");
    (&params[off..off + wl], &params[off + wl..off + wl + bl])
}

fn layer_params_mut<'a>(arch: &ArchSpec, layer: usize, params: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
    let (wl, bl) = arch.layers()[layer].param_shape().expect("parameterized layer");
    let off = arch.param_offset(layer).expect("parameterized layer");
    params[off..off + wl + bl].split_at_mut(wl)
}

fn conv_geom(layer: &Layer) -> ConvGeom {
    match *layer {
        Layer::Conv3x3 { in_c, out_c, height, width } => ConvGeom { in_c, out_c, height, width },
        _ => unreachable!("not a convolution"),
    }
}

/// `y = op(w, x)` (+ `beta * y`) for a bilinear layer, without bias.
fn bilinear_apply(layer: &Layer, w: &[f64], x: &[f64], n: usize, beta: f64, y: &mut [f64]) {
    match *layer {
        Layer::Dense { inputs, outputs } => kernels::dense_apply(w, x, n, inputs, outputs, beta, y),
        Layer::Conv3x3 { .. } => kernels::conv_apply(conv_geom(layer), w, x, n, beta, y),
        _ => unreachable!(),
    }
}

fn bilinear_back_input(layer: &Layer, w: &[f64], dy: &[f64], n: usize, beta: f64, dx: &mut [f64]) {
    match *layer {
        Layer::Dense { inputs, outputs } => kernels::dense_back_input(w, dy, n, inputs, outputs, beta, dx),
        Layer::Conv3x3 { .. } => kernels::conv_back_input(conv_geom(layer), w, dy, n, beta, dx),
        _ => unreachable!(),
    }
}

fn bilinear_back_weight(layer: &Layer, x: &[f64], dy: &[f64], n: usize, beta: f64, dw: &mut [f64]) {
    match *layer {
        Layer::Dense { inputs, outputs } => kernels::dense_back_weight(x, dy, n, inputs, outputs, beta, dw),
        Layer::Conv3x3 { .. } => kernels::conv_back_weight(conv_geom(layer), x, dy, n, beta, dw),
        _ => unreachable!(),
    }
}

/// Elements per output channel sharing one bias.
fn bias_group(layer: &Layer) -> usize {
    match *layer {
        Layer::Conv3x3 { height, width, .. } => height * width,
        _ => 1,
    }
}

/// Layer-by-layer activations; `acts[0]` is the input, `acts[last]` the logits.
pub(crate) fn forward_pass(arch: &ArchSpec, params: &[f64], input: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(arch.layers().len() + 1);
    acts.push(input.to_vec());
    for (i, layer) in arch.layers().iter().enumerate() {
        let x = acts.last().expect("input pushed");
        let mut y = vec![0.0; n * layer.output_size()];
        match *layer {
            Layer::Dense { .. } | Layer::Conv3x3 { .. } => {
                let (w, b) = layer_params(arch, i, params);
                bilinear_apply(layer, w, x, n, 0.0, &mut y);
                kernels::add_bias(b, bias_group(layer), &mut y);
            }
            Layer::Relu { .. } => {
                for (o, v) in y.iter_mut().zip(x) {
                    *o = if *v > 0.0 { *v } else { 0.0 };
                }
            }
            Layer::AvgPool2 { channels, height, width } => {
                kernels::pool_forward(channels, height, width, x, &mut y)
            }
        }
        acts.push(y);
    }
    acts
}

/// Reverse pass for the plain loss. Returns the parameter gradient and, when
/// requested, the gradient with respect to the input batch.
pub(crate) fn backward_pass(
    arch: &ArchSpec,
    params: &[f64],
    acts: &[Vec<f64>],
    dlogits: Vec<f64>,
    n: usize,
    want_input: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let mut grad = vec![0.0; params.len()];
    let mut dy = dlogits;
    for (i, layer) in arch.layers().iter().enumerate().rev() {
        let x = &acts[i];
        let need_dx = i > 0 || want_input;
        let mut dx = if need_dx { vec![0.0; n * layer.input_size()] } else { Vec::new() };
        match *layer {
            Layer::Dense { .. } | Layer::Conv3x3 { .. } => {
                let (w, _) = layer_params(arch, i, params);
                {
                    let (gw, gb) = layer_params_mut(arch, i, &mut grad);
                    bilinear_back_weight(layer, x, &dy, n, 0.0, gw);
                    kernels::bias_grad(&dy, gb.len(), bias_group(layer), gb);
                }
                if need_dx {
                    bilinear_back_input(layer, w, &dy, n, 0.0, &mut dx);
                }
            }
            Layer::Relu { .. } => {
                for ((d, g), v) in dx.iter_mut().zip(&dy).zip(x) {
                    *d = if *v > 0.0 { *g } else { 0.0 };
                }
            }
            Layer::AvgPool2 { channels, height, width } => {
                kernels::pool_adjoint(channels, height, width, &dy, &mut dx)
            }
        }
        if !need_dx {
            return (grad, None);
        }
        dy = dx;
    }
    (grad, Some(dy))
}

/// Tangents of every activation for a parameter-space direction; the input
/// tangent is zero and represented as `None`.
fn tangent_pass(arch: &ArchSpec, params: &[f64], dir: &[f64], acts: &[Vec<f64>], n: usize) -> Vec<Option<Vec<f64>>> {
    let mut tans: Vec<Option<Vec<f64>>> = Vec::with_capacity(acts.len());
    tans.push(None);
    for (i, layer) in arch.layers().iter().enumerate() {
        let x = &acts[i];
        let xdot = tans[i].as_deref();
        let out = match *layer {
            Layer::Dense { .. } | Layer::Conv3x3 { .. } => {
                let (w, _) = layer_params(arch, i, params);
                let (wdot, bdot) = layer_params(arch, i, dir);
                let mut y = vec![0.0; n * layer.output_size()];
                bilinear_apply(layer, wdot, x, n, 0.0, &mut y);
                if let Some(xd) = xdot {
                    bilinear_apply(layer, w, xd, n, 1.0, &mut y);
                }
                kernels::add_bias(bdot, bias_group(layer), &mut y);
                Some(y)
            }
            Layer::Relu { .. } => xdot.map(|xd| {
                xd.iter().zip(x).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect()
            }),
            Layer::AvgPool2 { channels, height, width } => xdot.map(|xd| {
                let mut y = vec![0.0; n * layer.output_size()];
                kernels::pool_forward(channels, height, width, xd, &mut y);
                y
            }),
        };
        tans.push(out);
    }
    tans
}

/// Mean soft-target cross-entropy and its logit gradient `(p * sum(y) - y) / n`.
pub(crate) fn ce_head(logits: &[f64], targets: &[f64], k: usize, n: usize) -> (f64, Vec<f64>) {
    let mut dz = vec![0.0; logits.len()];
    let mut logp = vec![0.0; k];
    let mut loss = 0.0;
    for ((zrow, yrow), drow) in logits.chunks(k).zip(targets.chunks(k)).zip(dz.chunks_mut(k)) {
        log_softmax_row(zrow, &mut logp);
        let total: f64 = yrow.iter().sum();
        for j in 0..k {
            drow[j] = (libm::exp(logp[j]) * total - yrow[j]) / n as f64;
            loss -= yrow[j] * logp[j];
        }
    }
    (loss / n as f64, dz)
}

/// Output of [`grad_dot_backward`] for one batch.
#[derive(Debug, Clone)]
pub struct SecondOrder {
    /// `s = <grad_theta loss, v>`.
    pub grad_dot: f64,
    /// `d s / d theta = H v`.
    pub hvp: Vec<f64>,
    /// `d s / d images`, same layout as the image batch.
    pub d_images: Vec<f64>,
    /// `d s / d targets`, same layout as the target batch.
    pub d_targets: Vec<f64>,
}

/// Gradient of `s(theta, x, y) = <grad_theta loss(theta, x, y), direction>`
/// with respect to parameters, images and soft targets.
pub fn grad_dot_backward(
    arch: &ArchSpec,
    params: &[f64],
    direction: &[f64],
    images: &[f64],
    targets: &[f64],
    n: usize,
) -> SecondOrder {
    let k = arch.num_classes();
    let acts = forward_pass(arch, params, images, n);
    let tans = tangent_pass(arch, params, direction, &acts, n);
    let logits = acts.last().expect("logits");
    let zdot = tans.last().and_then(|t| t.as_ref()).expect("head is parameterized");

    // Loss head: s = sum_b sum_j (p_bj S_b - y_bj) zdot_bj / n.
    let inv_n = 1.0 / n as f64;
    let mut zbar = vec![0.0; logits.len()];
    let mut zdot_bar = vec![0.0; logits.len()];
    let mut d_targets = vec![0.0; logits.len()];
    let mut s = 0.0;
    let mut p = vec![0.0; k];
    for b in 0..n {
        let r = b * k..(b + 1) * k;
        p.copy_from_slice(&logits[r.clone()]);
        softmax_row(&mut p);
        let y = &targets[r.clone()];
        let zd = &zdot[r.clone()];
        let total: f64 = y.iter().sum();
        let p_dot_zd: f64 = p.iter().zip(zd).map(|(a, b)| a * b).sum();
        for j in 0..k {
            let g = (p[j] * total - y[j]) * inv_n;
            s += g * zd[j];
            zdot_bar[b * k + j] = g;
            zbar[b * k + j] = inv_n * total * p[j] * (zd[j] - p_dot_zd);
            d_targets[b * k + j] = inv_n * (p_dot_zd - zd[j]);
        }
    }

    let mut hvp = vec![0.0; params.len()];
    let mut abar = zbar;
    let mut adot_bar = zdot_bar;
    for (i, layer) in arch.layers().iter().enumerate().rev() {
        let x = &acts[i];
        let xdot = tans[i].as_deref();
        let in_sz = n * layer.input_size();
        let mut xbar = vec![0.0; in_sz];
        // The input tangent is identically zero, so its adjoint is never needed.
        let mut xdot_bar = if xdot.is_some() { vec![0.0; in_sz] } else { Vec::new() };
        match *layer {
            Layer::Dense { .. } | Layer::Conv3x3 { .. } => {
                let (w, _) = layer_params(arch, i, params);
                let (wdot, _) = layer_params(arch, i, direction);
                {
                    let (gw, gb) = layer_params_mut(arch, i, &mut hvp);
                    bilinear_back_weight(layer, x, &abar, n, 0.0, gw);
                    if let Some(xd) = xdot {
                        bilinear_back_weight(layer, xd, &adot_bar, n, 1.0, gw);
                    }
                    kernels::bias_grad(&abar, gb.len(), bias_group(layer), gb);
                }
                bilinear_back_input(layer, w, &abar, n, 0.0, &mut xbar);
                bilinear_back_input(layer, wdot, &adot_bar, n, 1.0, &mut xbar);
                if xdot.is_some() {
                    bilinear_back_input(layer, w, &adot_bar, n, 0.0, &mut xdot_bar);
                }
            }
            Layer::Relu { .. } => {
                for ((d, g), v) in xbar.iter_mut().zip(&abar).zip(x) {
                    *d = if *v > 0.0 { *g } else { 0.0 };
                }
                for ((d, g), v) in xdot_bar.iter_mut().zip(&adot_bar).zip(x) {
                    *d = if *v > 0.0 { *g } else { 0.0 };
                }
            }
            Layer::AvgPool2 { channels, height, width } => {
                kernels::pool_adjoint(channels, height, width, &abar, &mut xbar);
                if xdot.is_some() {
                    kernels::pool_adjoint(channels, height, width, &adot_bar, &mut xdot_bar);
                }
            }
        }
        abar = xbar;
        adot_bar = xdot_bar;
    }
    SecondOrder { grad_dot: s, hvp, d_images: abar, d_targets }
}

fn check_inputs(arch: &ArchSpec, params: &ParamVector, images: &Tensor) -> Result<()> {
    if params.arch_id() != arch.arch_id() || params.len() != arch.param_count() {
        return Err(Error::Layout(format!(
            "parameters for {} used with {}",
            params.arch_id(),
            arch.arch_id()
        )));
    }
    if images.row_len() != arch.input_size() {
        return Err(Error::Shape(format!(
            "{} expects {} input values per sample, got {:?}",
            arch.arch_id(),
            arch.input_size(),
            images.shape()
        )));
    }
    Ok(())
}

/// Logits `[b, k]` for a batch of images.
pub fn forward(arch: &ArchSpec, params: &ParamVector, images: &Tensor) -> Result<Tensor> {
    check_inputs(arch, params, images)?;
    let n = images.rows();
    let mut acts = forward_pass(arch, &params.values, images.data(), n);
    let logits = acts.pop().expect("logits");
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    Tensor::from_rows(n, arch.num_classes(), logits)
}

/// Mean cross-entropy of the logits against soft targets, and its gradient.
pub fn loss_grad(arch: &ArchSpec, params: &ParamVector, images: &Tensor, soft_targets: &Tensor) -> Result<(f64, ParamVector)> {
    check_inputs(arch, params, images)?;
    let n = images.rows();
    if soft_targets.shape() != [n, arch.num_classes()] {
        return Err(Error::Shape(format!(
            "targets {:?} for {n} samples and {} classes",
            soft_targets.shape(),
            arch.num_classes()
        )));
    }
    let logits = forward(arch, params, images)?;
    // Validates the target rows.
    let loss = crate::numkit::cross_entropy(&logits, soft_targets)?;
    let (_, grad) = loss_grad_flat(arch, &params.values, images.data(), soft_targets.data(), n);
    Ok((loss, params.with_values(grad)?))
}

/// Unchecked loss and gradient over flat buffers.
pub(crate) fn loss_grad_flat(arch: &ArchSpec, params: &[f64], images: &[f64], targets: &[f64], n: usize) -> (f64, Vec<f64>) {
    let acts = forward_pass(arch, params, images, n);
    let (loss, dz) = ce_head(acts.last().expect("logits"), targets, arch.num_classes(), n);
    let (grad, _) = backward_pass(arch, params, &acts, dz, n, false);
    (loss, grad)
}

/// Argmax class per row, ties to the lowest index.
pub fn predict(arch: &ArchSpec, params: &ParamVector, images: &Tensor) -> Result<Vec<usize>> {
    let logits = forward(arch, params, images)?;
    Ok(logits.data().chunks(arch.num_classes()).map(argmax).collect())
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy(arch: &ArchSpec, params: &ParamVector, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Dataset("accuracy on an empty dataset".into()));
    }
    // Chunked to bound activation memory on large splits.
    let mut correct = 0usize;
    let chunk = 512;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + chunk).min(dataset.len());
        let idx: Vec<usize> = (start..end).collect();
        let preds = predict(arch, params, &dataset.images.select_rows(&idx))?;
        correct += preds.iter().zip(&dataset.labels[start..end]).filter(|(p, l)| p == l).count();
        start = end;
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Mean one-hot cross-entropy over a dataset.
pub fn dataset_loss(arch: &ArchSpec, params: &ParamVector, dataset: &LabeledDataset) -> Result<f64> {
    let logits = forward(arch, params, &dataset.images)?;
    let k = arch.num_classes();
    let mut targets = vec![0.0; dataset.len() * k];
    for (i, &l) in dataset.labels.iter().enumerate() {
        targets[i * k + l] = 1.0;
    }
    Ok(crate::numkit::cross_entropy_unchecked(logits.data(), &targets, k))
}
