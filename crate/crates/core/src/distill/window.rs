use alloc::format;

use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Difficulty window over expert epochs with a floating upper bound.
///
/// Start epochs are drawn from `t_lower..=t_float`; `t_float` ramps linearly
/// from `t_init` to `t_upper` over `ramp_iters` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchWindow {
    pub t_lower: usize,
    pub t_float: usize,
    pub t_upper: usize,
    pub t_init: usize,
    pub ramp_iters: usize,
    /// Expert epochs per segment, `M`.
    pub span: usize,
    /// Synthetic steps per unroll, `N`.
    pub steps: usize,
}

impl MatchWindow {
    /// A window whose floating bound starts at `t_init` and ramps to `t_upper`.
    pub fn ramped(t_lower: usize, t_init: usize, t_upper: usize, ramp_iters: usize, span: usize, steps: usize) -> Self {
        Self { t_lower, t_float: t_init, t_upper, t_init, ramp_iters, span, steps }
    }

    /// A window with the floating bound pinned at `t_upper`.
    pub fn fixed(t_lower: usize, t_upper: usize, span: usize, steps: usize) -> Self {
        Self::ramped(t_lower, t_upper, t_upper, 0, span, steps)
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.span == 0 || self.steps == 0 {
            return Err(Error::Config(format!("span {} and steps {} must be >= 1", self.span, self.steps)));
        }
        if !(self.t_lower <= self.t_init && self.t_init <= self.t_float && self.t_float <= self.t_upper) {
            return Err(Error::Config(format!(
                "window bounds out of order: {} <= {} <= {} <= {}",
                self.t_lower, self.t_init, self.t_float, self.t_upper
            )));
        }
        if self.t_upper + self.span > horizon {
            return Err(Error::HorizonTooShort {
                horizon,
                reason: format!("upper bound {} plus span {} exceeds it", self.t_upper, self.span),
            });
        }
        Ok(())
    }

    /// `T(iter) = min(T+, t_init + floor((T+ - t_init) * iter / ramp_iters))`.
    pub fn float_at(&self, iter: usize) -> usize {
        if iter >= self.ramp_iters {
            return self.t_upper;
        }
        let gap = (self.t_upper - self.t_init) as u128;
        let t = self.t_init as u128 + gap * iter as u128 / self.ramp_iters as u128;
        (t as usize).min(self.t_upper)
    }
}

pub fn advance_window(window: &MatchWindow, iter: usize) -> MatchWindow {
    MatchWindow { t_float: window.float_at(iter), ..*window }
}

/// Uniform on `t_lower..=t_float`.
pub fn sample_start_epoch(window: &MatchWindow, rng: &mut Rng) -> usize {
    rng.inclusive(window.t_lower, window.t_float)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use crate::numkit::Rng;

    #[test]
    fn ramp_formula() {
        let w = MatchWindow::ramped(0, 2, 10, 4, 2, 5);
        assert_eq!(advance_window(&w, 0).t_float, 2);
        assert_eq!(advance_window(&w, 2).t_float, 6);
        assert_eq!(advance_window(&w, 4).t_float, 10);
        assert_eq!(advance_window(&w, 100).t_float, 10);
        assert_eq!(MatchWindow::fixed(3, 7, 1, 1).float_at(0), 7);
    }

    #[test]
    fn singleton_support() {
        let w = MatchWindow::fixed(5, 5, 1, 1);
        let mut rng = Rng::new(0);
        assert!((0..100).all(|_| sample_start_epoch(&w, &mut rng) == 5));
    }

    #[test]
    fn two_point_frequencies() {
        let w = MatchWindow::ramped(0, 1, 1, 0, 1, 1);
        let mut rng = Rng::new(12);
        let ones = (0..100_000).filter(|_| sample_start_epoch(&w, &mut rng) == 1).count();
        let f = ones as f64 / 1e5;
        assert!((0.49..=0.51).contains(&f), "{f}");
    }

    #[test]
    fn validation() {
        assert!(MatchWindow::fixed(0, 8, 2, 5).validate(10).is_ok());
        assert!(matches!(MatchWindow::fixed(0, 9, 2, 5).validate(10), Err(Error::HorizonTooShort { .. })));
        assert!(MatchWindow::ramped(3, 2, 8, 4, 2, 5).validate(10).is_err());
        assert!(MatchWindow::fixed(0, 8, 0, 5).validate(10).is_err());
    }

    proptest! {
        #[test]
        fn ramp_is_monotone_and_bounded(lo in 0usize..10, a in 0usize..10, b in 0usize..10, ramp in 0usize..50, iters in 1usize..120) {
            let init = lo + a.min(b);
            let upper = lo + a.max(b);
            let w = MatchWindow::ramped(lo, init, upper, ramp, 1, 1);
            let mut prev = w.float_at(0);
            prop_assert_eq!(prev, if ramp == 0 { upper } else { init });
            for it in 0..iters {
                let t = w.float_at(it);
                prop_assert!(t >= prev && lo <= t && t <= upper);
                if it >= ramp { prop_assert_eq!(t, upper); }
                prev = t;
            }
        }

        #[test]
        fn samples_stay_in_window(lo in 0usize..10, extra in 0usize..10, seed in any::<u64>()) {
            let w = MatchWindow::fixed(lo, lo + extra, 3, 1);
            let mut rng = Rng::new(seed);
            for _ in 0..50 {
                let t = sample_start_epoch(&w, &mut rng);
                prop_assert!(lo <= t && t <= lo + extra);
            }
        }
    }
}
