use crate::error::{Error, Result};
use crate::models::{meta_backward, unroll, unroll_record, ArchSpec, BatchPlan, MetaGrads, UnrollInput};
use crate::numkit::{param_distance_sq, ParamVector};

/// Denominators below this mean the expert did not move over the segment.
pub const EPS_DEN: f64 = 1e-12;

/// `|theta_hat - target|^2 / |start - target|^2`.
pub fn matching_loss(theta_hat: &ParamVector, start: &ParamVector, target: &ParamVector) -> Result<f64> {
    let den = param_distance_sq(start, target)?;
    if den < EPS_DEN {
        return Err(Error::DegenerateSegment { distance_sq: den });
    }
    Ok(param_distance_sq(theta_hat, target)? / den)
}

/// Matching loss of one segment after unrolling from `start`.
pub fn segment_loss(
    arch: &ArchSpec,
    input: UnrollInput<'_>,
    start: &ParamVector,
    target: &ParamVector,
    plan: &BatchPlan,
) -> Result<f64> {
    let den = param_distance_sq(start, target)?;
    if den < EPS_DEN {
        return Err(Error::DegenerateSegment { distance_sq: den });
    }
    let theta = unroll(arch, start, input, plan)?;
    Ok(param_distance_sq(&theta, target)? / den)
}

/// Matching loss of one segment and its gradient with respect to the
/// synthetic images, label logits and inner learning rate.
pub fn segment_objective(
    arch: &ArchSpec,
    input: UnrollInput<'_>,
    start: &ParamVector,
    target: &ParamVector,
    plan: &BatchPlan,
) -> Result<(f64, MetaGrads)> {
    let den = param_distance_sq(start, target)?;
    if den < EPS_DEN {
        return Err(Error::DegenerateSegment { distance_sq: den });
    }
    let (theta, tape) = unroll_record(arch, start, input, plan)?;
    let loss = param_distance_sq(&theta, target)? / den;
    let seed: alloc::vec::Vec<f64> = theta
        .values
        .iter()
        .zip(&target.values)
        .map(|(h, t)| 2.0 * (h - t) / den)
        .collect();
    let grads = meta_backward(&tape, &theta.with_values(seed)?)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_network;
    use crate::numkit::{ParamLayout, Rng, Tensor};
    use alloc::sync::Arc;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn pv(values: Vec<f64>) -> ParamVector {
        let layout = Arc::new(ParamLayout::contiguous("x", &[("w".into(), values.len())]));
        ParamVector::new(layout, values).unwrap()
    }

    #[test]
    fn anchors() {
        let start = pv(vec![0.0, 0.0]);
        let target = pv(vec![2.0, 0.0]);
        assert!((matching_loss(&pv(vec![1.0, 1.0]), &start, &target).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(matching_loss(&target, &start, &target).unwrap(), 0.0);
        assert_eq!(matching_loss(&start, &start, &target).unwrap(), 1.0);
        assert!(matches!(matching_loss(&start, &start, &start), Err(Error::DegenerateSegment { .. })));
    }

    #[test]
    fn zero_step_unroll_gives_unit_loss() {
        let arch = ArchSpec::parse("mlp-4:1x2x2:2").unwrap();
        let start = init_network(&arch, &mut Rng::new(0));
        let target = init_network(&arch, &mut Rng::new(1));
        let images = Tensor::zeros(vec![2, 1, 2, 2]);
        let logits = Tensor::zeros(vec![2, 2]);
        let input = UnrollInput { images: &images, logits: &logits, alpha: 0.1 };
        let (loss, g) = segment_objective(&arch, input, &start, &target, &BatchPlan::full(2, 0)).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
        assert_eq!(g.d_alpha, 0.0);
    }

    proptest! {
        #[test]
        fn scale_invariance(seed in any::<u64>(), c in prop::sample::select(vec![0.1f64, 10.0, -3.0])) {
            let mut rng = Rng::new(seed);
            let mut draw = || pv((0..20).map(|_| rng.normal()).collect());
            let (h, s, t) = (draw(), draw(), draw());
            let base = matching_loss(&h, &s, &t).unwrap();
            let scaled = matching_loss(&h.scaled(c), &s.scaled(c), &t.scaled(c)).unwrap();
            prop_assert!(((scaled - base) / base).abs() < 1e-6);
            prop_assert!(base >= 0.0);
        }
    }
}
