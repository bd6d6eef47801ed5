//! Differentiable inner SGD unroll on a synthetic set.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::models::arch::ArchSpec;
use crate::models::network::{grad_dot_backward, loss_grad_flat};
use crate::numkit::{softmax, ParamVector, Rng, Tensor};

/// Unroll parameters with any |value| above this are treated as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Sample indices used at each inner step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    steps: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn from_steps(steps: Vec<Vec<usize>>) -> Result<Self> {
        if let Some(i) = steps.iter().position(|s| s.is_empty()) {
            return Err(Error::Config(format!("batch plan step {i} is empty")));
        }
        Ok(Self { steps })
    }

    /// Every step uses all `n` items.
    pub fn full(n: usize, steps: usize) -> Self {
        Self { steps: vec![(0..n).collect(); steps] }
    }

    /// Full batch when `n <= batch_size`; otherwise consecutive slices of a
    /// shuffled permutation, reshuffled whenever it runs out.
    pub fn sample(n: usize, batch_size: usize, steps: usize, rng: &mut Rng) -> Self {
        if n <= batch_size {
            return Self::full(n, steps);
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut cursor = n;
        let mut plan = Vec::with_capacity(steps);
        for _ in 0..steps {
            if cursor + batch_size > n {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            plan.push(order[cursor..cursor + batch_size].to_vec());
            cursor += batch_size;
        }
        Self { steps: plan }
    }

    pub fn steps(&self) -> &[Vec<usize>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn check_bounds(&self, n: usize) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            if step.is_empty() {
                return Err(Error::Config(format!("batch plan step {i} is empty")));
            }
            if let Some(&bad) = step.iter().find(|&&j| j >= n) {
                return Err(Error::Config(format!("batch plan step {i} indexes row {bad} of {n}")));
            }
        }
        Ok(())
    }
}

/// The synthetic data an unroll trains on: images, label logits, and the
/// inner learning rate.
#[derive(Debug, Clone, Copy)]
pub struct UnrollInput<'a> {
    pub images: &'a Tensor,
    pub logits: &'a Tensor,
    pub alpha: f64,
}

/// Everything needed to replay an unroll and differentiate through it.
#[derive(Debug, Clone)]
pub struct GradTape {
    arch: ArchSpec,
    /// Parameters entering each step, `theta_0 .. theta_{N-1}`.
    states: Vec<Vec<f64>>,
    theta0: ParamVector,
    final_params: ParamVector,
    plan: BatchPlan,
    images: Tensor,
    logits: Tensor,
    soft: Tensor,
    alpha: f64,
}

/// Gradients of an outer objective with respect to the synthetic set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGrads {
    pub d_images: Tensor,
    pub d_logits: Tensor,
    pub d_alpha: f64,
}

fn gather(src: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&src[r * width..(r + 1) * width]);
    }
    out
}

fn scatter_add(dst: &mut [f64], width: usize, rows: &[usize], src: &[f64], scale: f64) {
    for (k, &r) in rows.iter().enumerate() {
        for (d, s) in dst[r * width..(r + 1) * width].iter_mut().zip(&src[k * width..(k + 1) * width]) {
            *d += scale * s;
        }
    }
}

fn validate_input(arch: &ArchSpec, theta0: &ParamVector, input: &UnrollInput<'_>, plan: &BatchPlan) -> Result<()> {
    if theta0.arch_id() != arch.arch_id() || theta0.len() != arch.param_count() {
        return Err(Error::Layout(format!("{} parameters for {}", theta0.arch_id(), arch.arch_id())));
    }
    let n = input.images.rows();
    if input.images.row_len() != arch.input_size() {
        return Err(Error::Shape(format!("synthetic images {:?} for {}", input.images.shape(), arch.arch_id())));
    }
    if input.logits.shape() != [n, arch.num_classes()] {
        return Err(Error::Shape(format!("label logits {:?} for {n} images", input.logits.shape())));
    }
    if !(input.alpha >= 0.0) || !input.alpha.is_finite() {
        return Err(Error::Config(format!("inner learning rate {} must be finite and >= 0", input.alpha)));
    }
    plan.check_bounds(n)
}

fn sgd_steps(
    arch: &ArchSpec,
    theta0: &[f64],
    images: &Tensor,
    soft: &Tensor,
    alpha: f64,
    plan: &BatchPlan,
    mut record: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    let d = images.row_len();
    let k = soft.row_len();
    let mut theta = theta0.to_vec();
    for (step, rows) in plan.steps().iter().enumerate() {
        if let Some(states) = record.as_deref_mut() {
            states.push(theta.clone());
        }
        let x = gather(images.data(), d, rows);
        let y = gather(soft.data(), k, rows);
        let (_, grad) = loss_grad_flat(arch, &theta, &x, &y, rows.len());
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= alpha * g;
        }
        if theta.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::DivergentUnroll { step });
        }
    }
    Ok(theta)
}

/// Runs `plan.len()` plain SGD steps from `theta0` on `softmax(logits)` targets.
pub fn unroll(arch: &ArchSpec, theta0: &ParamVector, input: UnrollInput<'_>, plan: &BatchPlan) -> Result<ParamVector> {
    validate_input(arch, theta0, &input, plan)?;
    let soft = softmax(input.logits)?;
    let theta = sgd_steps(arch, &theta0.values, input.images, &soft, input.alpha, plan, None)?;
    theta0.with_values(theta)
}

/// Like [`unroll`], and records a tape for [`meta_backward`].
pub fn unroll_record(
    arch: &ArchSpec,
    theta0: &ParamVector,
    input: UnrollInput<'_>,
    plan: &BatchPlan,
) -> Result<(ParamVector, GradTape)> {
    validate_input(arch, theta0, &input, plan)?;
    let soft = softmax(input.logits)?;
    let mut states = Vec::with_capacity(plan.len());
    let theta = sgd_steps(arch, &theta0.values, input.images, &soft, input.alpha, plan, Some(&mut states))?;
    let final_params = theta0.with_values(theta)?;
    let tape = GradTape {
        arch: arch.clone(),
        states,
        theta0: theta0.clone(),
        final_params: final_params.clone(),
        plan: plan.clone(),
        images: input.images.clone(),
        logits: input.logits.clone(),
        soft,
        alpha: input.alpha,
    };
    Ok((final_params, tape))
}

impl GradTape {
    pub fn steps(&self) -> usize {
        self.plan.len()
    }

    pub fn final_params(&self) -> &ParamVector {
        &self.final_params
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    /// Re-executes the recorded unroll from its inputs.
    pub fn replay(&self) -> Result<ParamVector> {
        let theta = sgd_steps(&self.arch, &self.theta0.values, &self.images, &self.soft, self.alpha, &self.plan, None)?;
        self.theta0.with_values(theta)
    }
}

/// Reverse sweep through the recorded unroll.
///
/// `seed` is the gradient of the outer objective with respect to the final
/// parameters. Each step `theta' = theta - alpha * g(theta, x, y)` contributes
/// `-<lambda, g>` to `d alpha`, `-alpha * d<g, lambda>/d(x, y)` to the data,
/// and maps `lambda -> lambda - alpha * H lambda`.
pub fn meta_backward(tape: &GradTape, seed: &ParamVector) -> Result<MetaGrads> {
    seed.check_layout(&tape.final_params)?;
    let arch = &tape.arch;
    let d = tape.images.row_len();
    let k = tape.soft.row_len();
    let alpha = tape.alpha;
    let mut lambda = seed.values.clone();
    let mut d_images = vec![0.0; tape.images.len()];
    let mut d_soft = vec![0.0; tape.soft.len()];
    let mut d_alpha = 0.0;
    for (theta, rows) in tape.states.iter().zip(tape.plan.steps()).rev() {
        let x = gather(tape.images.data(), d, rows);
        let y = gather(tape.soft.data(), k, rows);
        let so = grad_dot_backward(arch, theta, &lambda, &x, &y, rows.len());
        d_alpha -= so.grad_dot;
        scatter_add(&mut d_images, d, rows, &so.d_images, -alpha);
        scatter_add(&mut d_soft, k, rows, &so.d_targets, -alpha);
        for (l, h) in lambda.iter_mut().zip(&so.hvp) {
            *l -= alpha * h;
        }
    }
    // Through y = softmax(L): dL = p * (dy - <p, dy>).
    let mut d_logits = vec![0.0; d_soft.len()];
    for ((p, g), out) in tape.soft.data().chunks(k).zip(d_soft.chunks(k)).zip(d_logits.chunks_mut(k)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..k {
            out[j] = p[j] * (g[j] - dot);
        }
    }
    Ok(MetaGrads {
        d_images: Tensor::new(tape.images.shape().to_vec(), d_images)?,
        d_logits: Tensor::new(tape.logits.shape().to_vec(), d_logits)?,
        d_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::network::init_network;

    struct Case {
        arch: ArchSpec,
        theta0: ParamVector,
        target: Vec<f64>,
        images: Tensor,
        logits: Tensor,
    }

    fn case(descriptor: &str, n: usize, seed: u64) -> Case {
        let arch = ArchSpec::parse(descriptor).unwrap();
        let (c, h, w) = arch.input_shape();
        let k = arch.num_classes();
        let mut rng = Rng::new(seed);
        let theta0 = init_network(&arch, &mut rng);
        let target = theta0.values.iter().map(|v| v + 0.05 * rng.normal()).collect();
        let images = Tensor::new(vec![n, c, h, w], (0..n * c * h * w).map(|_| rng.normal()).collect()).unwrap();
        let logits = Tensor::from_rows(n, k, (0..n * k).map(|_| rng.normal()).collect()).unwrap();
        Case { arch, theta0, target, images, logits }
    }

    fn outer(c: &Case, images: &Tensor, logits: &Tensor, alpha: f64, plan: &BatchPlan) -> f64 {
        let theta = unroll(&c.arch, &c.theta0, UnrollInput { images, logits, alpha }, plan).unwrap();
        theta.values.iter().zip(&c.target).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn grads(c: &Case, alpha: f64, plan: &BatchPlan) -> MetaGrads {
        let input = UnrollInput { images: &c.images, logits: &c.logits, alpha };
        let (theta, tape) = unroll_record(&c.arch, &c.theta0, input, plan).unwrap();
        let seed: Vec<f64> = theta.values.iter().zip(&c.target).map(|(a, b)| 2.0 * (a - b)).collect();
        meta_backward(&tape, &theta.with_values(seed).unwrap()).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
        diff / scale
    }

    fn check_meta(descriptor: &str, steps: usize, minibatch: bool) {
        let n = 4;
        let c = case(descriptor, n, 17 + steps as u64);
        let alpha = 0.05;
        let plan = if minibatch {
            BatchPlan::sample(n, 2, steps, &mut Rng::new(1))
        } else {
            BatchPlan::full(n, steps)
        };
        let g = grads(&c, alpha, &plan);
        let h = 1e-5;
        let fd_images: Vec<f64> = (0..c.images.len())
            .map(|i| {
                let mut up = c.images.clone();
                let mut dn = c.images.clone();
                up.data_mut()[i] += h;
                dn.data_mut()[i] -= h;
                (outer(&c, &up, &c.logits, alpha, &plan) - outer(&c, &dn, &c.logits, alpha, &plan)) / (2.0 * h)
            })
            .collect();
        let fd_logits: Vec<f64> = (0..c.logits.len())
            .map(|i| {
                let mut up = c.logits.clone();
                let mut dn = c.logits.clone();
                up.data_mut()[i] += h;
                dn.data_mut()[i] -= h;
                (outer(&c, &c.images, &up, alpha, &plan) - outer(&c, &c.images, &dn, alpha, &plan)) / (2.0 * h)
            })
            .collect();
        let fd_alpha = (outer(&c, &c.images, &c.logits, alpha + h, &plan)
            - outer(&c, &c.images, &c.logits, alpha - h, &plan))
            / (2.0 * h);
        let tag = (descriptor, steps, minibatch);
        assert!(rel_err(&fd_images, g.d_images.data()) < 1e-4, "{tag:?} images");
        assert!(rel_err(&fd_logits, g.d_logits.data()) < 1e-4, "{tag:?} logits");
        assert!(((fd_alpha - g.d_alpha) / fd_alpha.abs().max(g.d_alpha.abs())).abs() < 1e-4, "{tag:?} alpha");
    }

    #[test]
    fn meta_gradients_match_finite_differences() {
        for steps in [1, 2, 5] {
            check_meta("mlp-6:1x3x3:3", steps, false);
            check_meta("conv2-3:1x4x4:3", steps, false);
        }
        check_meta("mlp-6:1x3x3:3", 5, true);
    }

    #[test]
    fn meta_backward_is_linear_in_seed() {
        let c = case("mlp-6:1x3x3:3", 4, 2);
        let plan = BatchPlan::full(4, 3);
        let input = UnrollInput { images: &c.images, logits: &c.logits, alpha: 0.1 };
        let (theta, tape) = unroll_record(&c.arch, &c.theta0, input, &plan).unwrap();
        let mut rng = Rng::new(8);
        let a: Vec<f64> = (0..theta.len()).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..theta.len()).map(|_| rng.normal()).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let ga = meta_backward(&tape, &theta.with_values(a).unwrap()).unwrap();
        let gb = meta_backward(&tape, &theta.with_values(b).unwrap()).unwrap();
        let gab = meta_backward(&tape, &theta.with_values(ab).unwrap()).unwrap();
        let combo: Vec<f64> = ga.d_images.data().iter().zip(gb.d_images.data()).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        assert!(rel_err(&combo, gab.d_images.data()) < 1e-12);
        assert!((2.0 * ga.d_alpha - 3.0 * gb.d_alpha - gab.d_alpha).abs() < 1e-10 * gab.d_alpha.abs().max(1.0));
    }

    #[test]
    fn zero_steps_and_zero_rate_are_identity() {
        let c = case("mlp-6:1x3x3:3", 3, 4);
        let input = UnrollInput { images: &c.images, logits: &c.logits, alpha: 0.1 };
        let (theta, tape) = unroll_record(&c.arch, &c.theta0, input, &BatchPlan::full(3, 0)).unwrap();
        assert_eq!(theta, c.theta0);
        let g = meta_backward(&tape, &theta).unwrap();
        assert!(g.d_images.data().iter().all(|&v| v == 0.0) && g.d_alpha == 0.0);

        let frozen = UnrollInput { alpha: 0.0, ..input };
        let (theta, tape) = unroll_record(&c.arch, &c.theta0, frozen, &BatchPlan::full(3, 4)).unwrap();
        assert_eq!(theta, c.theta0);
        let g = meta_backward(&tape, &theta).unwrap();
        assert!(g.d_images.data().iter().chain(g.d_logits.data()).all(|&v| v == 0.0));
        assert!(g.d_alpha != 0.0);
    }

    #[test]
    fn replay_is_bit_exact() {
        let c = case("conv2-3:1x4x4:3", 5, 6);
        let plan = BatchPlan::sample(5, 2, 4, &mut Rng::new(3));
        let input = UnrollInput { images: &c.images, logits: &c.logits, alpha: 0.07 };
        let (theta, tape) = unroll_record(&c.arch, &c.theta0, input, &plan).unwrap();
        assert_eq!(tape.replay().unwrap(), theta);
        assert_eq!(unroll(&c.arch, &c.theta0, input, &plan).unwrap(), theta);
    }

    #[test]
    fn batch_plan_covers_without_replacement() {
        let plan = BatchPlan::sample(10, 3, 6, &mut Rng::new(0));
        assert!(plan.steps().iter().all(|s| s.len() == 3));
        let mut first: Vec<usize> = plan.steps()[..3].concat();
        first.sort_unstable();
        first.dedup();
        assert_eq!(first.len(), 9);
        assert_eq!(BatchPlan::sample(3, 5, 2, &mut Rng::new(0)), BatchPlan::full(3, 2));
        assert!(BatchPlan::from_steps(vec![vec![0], vec![]]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let c = case("mlp-6:1x3x3:3", 3, 1);
        let input = UnrollInput { images: &c.images, logits: &c.logits, alpha: 1e9 };
        let err = unroll(&c.arch, &c.theta0, input, &BatchPlan::full(3, 5)).unwrap_err();
        assert!(matches!(err, Error::DivergentUnroll { .. }));
        let bad = UnrollInput { alpha: f64::NAN, ..input };
        assert!(matches!(unroll(&c.arch, &c.theta0, bad, &BatchPlan::full(3, 1)), Err(Error::Config(_))));
        let oob = BatchPlan::from_steps(vec![vec![7]]).unwrap();
        assert!(unroll(&c.arch, &c.theta0, input, &oob).is_err());
    }
}
