//! Counter-based random number generation.
//!
//! Every random draw in the simulator and learner comes from [`CounterRng`], a
//! SplitMix64 generator run in counter mode. The algorithm is small enough to
//! reimplement in any language:
//!
//! ```text
//! GAMMA  = 0x9E3779B97F4A7C15
//! mix(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!          z ^= z >> 27; z *= 0x94D049BB133111EB;
//!          z ^  z >> 31
//! output(key, counter) = mix(key + (counter + 1) * GAMMA)      (wrapping)
//! split(key, stream)   = mix(key ^ mix(stream + GAMMA))
//! ```
//!
//! A generator created with [`CounterRng::new`] has `key = mix(seed)` and
//! `counter = 0`. Uniform doubles take the top 53 bits of a draw; normals use
//! Box-Muller with two uniforms per sample and no caching, so the stream
//! position after `n` normals is always `2n`.

use core::f64::consts::PI;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub const fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seedable, splittable counter-mode generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub const fn new(seed: u64) -> Self {
        Self { key: mix64(seed), counter: 0 }
    }

    /// Independent child stream identified by `stream`. Does not advance `self`.
    pub const fn split(&self, stream: u64) -> Self {
        Self { key: mix64(self.key ^ mix64(stream.wrapping_add(GAMMA))), counter: 0 }
    }

    pub const fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]`; returns `lo` when the range is degenerate.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            // keep the stream position independent of the range
            self.next_u64();
            return lo;
        }
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        let x = self.next_u64();
        if hi <= lo {
            return lo;
        }
        let span = hi - lo + 1;
        if span == 0 {
            return x;
        }
        lo + ((x as u128 * span as u128) >> 64) as u64
    }

    /// Uniform index in `[0, n)`. `n` must be non-zero.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw (Box-Muller, cosine branch).
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1]
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values_are_stable() {
        // splitmix64 with seed 0 starts 0xE220A8397B1DCDAF when keyed directly;
        // check the raw mixer against that published value.
        assert_eq!(mix64(GAMMA), 0xE220_A839_7B1D_CDAF);
        let mut a = CounterRng::new(42);
        let mut b = CounterRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.counter(), 100);
    }

    #[test]
    fn split_streams_differ() {
        let root = CounterRng::new(1);
        let mut s0 = root.split(0);
        let mut s1 = root.split(1);
        assert_ne!(s0.next_u64(), s1.next_u64());
        assert_eq!(root.counter(), 0);
    }

    #[test]
    fn uniform_moments() {
        let mut r = CounterRng::new(9);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_n = 0.0;
        let mut sq_n = 0.0;
        for _ in 0..n {
            sum += r.next_f64();
            let z = r.normal();
            sum_n += z;
            sq_n += z * z;
        }
        let n = n as f64;
        assert!((sum / n - 0.5).abs() < 0.005);
        assert!((sum_n / n).abs() < 0.01);
        assert!((sq_n / n - 1.0).abs() < 0.02);
    }

    #[test]
    fn range_inclusive_hits_bounds() {
        let mut r = CounterRng::new(3);
        let mut seen = [false; 4];
        for _ in 0..1000 {
            let v = r.range_inclusive(2, 5);
            assert!((2..=5).contains(&v));
            seen[(v - 2) as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }
}
