//! Deterministic random stream shared by sampling, initialization, shuffling and noise injection.
//!
//! The generator is ChaCha8 (`rand_chacha`), keyed from a 64-bit seed through
//! `SeedableRng::seed_from_u64`. Both steps are specified bit-for-bit, so a seed
//! yields the same stream on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for `(global_seed, epoch, index)`, so parallel workers
    /// get results that do not depend on scheduling.
    pub fn derive(global_seed: u64, epoch: u64, index: u64) -> Self {
        let h = mix64(mix64(mix64(global_seed) ^ epoch) ^ index);
        SeededRng::new(h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, n)` without modulo bias (Lemire's multiply-and-reject).
    ///
    /// Panics if `n == 0`.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let mut m = u128::from(self.next_u64()) * u128::from(n);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = u128::from(self.next_u64()) * u128::from(n);
            }
        }
        (m >> 64) as u64
    }

    #[inline]
    pub fn below_usize(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher–Yates shuffle driven by [`below`](Self::below).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below_usize(i + 1);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(SeededRng::new(1).next_u64(), SeededRng::new(2).next_u64());
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first outputs; a change here breaks reproducibility of recorded runs.
        let mut r = SeededRng::new(7);
        assert_eq!(r.next_u64(), 2910824217569608635);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = SeededRng::new(3);
        for n in [1u64, 2, 3, 7, 10, 99, 1 << 40, u64::MAX] {
            for _ in 0..200 {
                assert!(r.below(n) < n);
            }
        }
    }

    #[test]
    fn derived_streams_differ() {
        let a = SeededRng::derive(1, 0, 0).next_u64();
        let b = SeededRng::derive(1, 0, 1).next_u64();
        let c = SeededRng::derive(1, 1, 0).next_u64();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, SeededRng::derive(1, 0, 0).next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = SeededRng::new(9);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / 10_000.0 - 0.5).abs() < 0.02);
    }
}
