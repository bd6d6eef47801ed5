//! Counter-based splittable random number generator.
//!
//! Output `i` of a stream is a pure function of `(seed, i)`, so the whole
//! generator state is two integers and can be checkpointed and restored
//! exactly. Child streams are derived from the parent seed and a tag, never
//! from the parent's position, so splitting does not perturb the parent.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_core::RngCore;
use rand_distr::StandardNormal;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_tag(tag: &[u8]) -> u64 {
    // FNV-1a, then a finalizer pass.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in tag {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(h)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Restores a generator from a checkpointed `(seed, counter)` pair.
    pub fn from_state(seed: u64, counter: u64) -> Self {
        Self { seed, counter }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn split(&self, tag: &str) -> Rng {
        Rng::new(mix64(self.seed ^ hash_tag(tag.as_bytes())))
    }

    pub fn split_index(&self, index: u64) -> Rng {
        Rng::new(mix64(self.seed ^ mix64(index.wrapping_add(GOLDEN))))
    }

    fn next_word(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.seed).wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        self.random_range(0..n)
    }

    /// Uniform integer in the inclusive range `lo..=hi`.
    pub fn inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.random_range(lo..=hi)
    }

    /// Uniform float in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(self);
    }

    /// `k` distinct indices from `0..n` in random order.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> alloc::vec::Vec<usize> {
        rand::seq::index::sample(self, n, k).into_vec()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        let xs: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn restore_resumes_stream() {
        let mut a = Rng::new(99);
        for _ in 0..17 {
            a.next_u64();
        }
        let mut b = Rng::from_state(a.seed(), a.counter());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn split_is_independent_of_parent_position() {
        let mut a = Rng::new(3);
        let c1 = a.split("x");
        a.next_u64();
        let c2 = a.split("x");
        assert_eq!(c1, c2);
        assert_ne!(a.split("x").seed(), a.split("y").seed());
        assert_ne!(a.split_index(0).seed(), a.split_index(1).seed());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(1);
        let mean: f64 = (0..10_000).map(|_| r.uniform()).sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn choose_indices_distinct() {
        let mut r = Rng::new(5);
        let mut idx = r.choose_indices(50, 20);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|&i| i < 50));
    }
}
