//! Counter-based seeded PRNG.
//!
//! All randomness in the crate (noise, weight init, dataset synthesis,
//! shuffling) flows through [`RngStream`] so that a master seed plus a list of
//! stream tags fully determines every draw. Streams derived from distinct tag
//! paths are independent, which lets batch items and channel links draw noise
//! concurrently without coordination.

use crate::tensor::Real;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. Bijective on u64, good avalanche.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A deterministic random stream: `output(i) = mix(key + i * GOLDEN)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    /// Derive a stream from a master seed and a tag path.
    pub fn new(seed: u64, tags: &[u64]) -> Self {
        let mut key = mix(seed);
        for &t in tags {
            key = mix(key ^ mix(t));
        }
        RngStream { key, counter: 0 }
    }

    /// Derive an independent child stream.
    pub fn split(&self, tag: u64) -> Self {
        RngStream {
            key: mix(self.key ^ mix(tag)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        out
    }

    /// Uniform in [0, 1).
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform<T: Real>(&mut self) -> T {
        T::from_f64(self.uniform_f64())
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn normal_f64(&mut self) -> f64 {
        let u1 = self.uniform_f64().max(1e-300);
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal<T: Real>(&mut self) -> T {
        T::from_f64(self.normal_f64())
    }

    pub fn normal_vec<T: Real>(&mut self, n: usize, std: f64) -> Vec<T> {
        (0..n).map(|_| T::from_f64(self.normal_f64() * std)).collect()
    }

    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = RngStream::new(7, &[1, 2]);
        let mut b = RngStream::new(7, &[1, 2]);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_tags_give_distinct_streams() {
        let mut a = RngStream::new(7, &[1]);
        let mut b = RngStream::new(7, &[2]);
        let same = (0..32).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn normal_moments() {
        let mut s = RngStream::new(123, &[0]);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| s.normal_f64()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = RngStream::new(9, &[]);
        for _ in 0..1000 {
            let u = s.uniform_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
