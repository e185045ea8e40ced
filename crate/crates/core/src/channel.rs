//! Complex AWGN channel for the main and eavesdropping links.
//!
//! Noise is circularly-symmetric complex Gaussian with per-symbol power σ²,
//! i.e. each real component is N(0, σ²/2). SNR follows the unit-signal-power
//! convention, so σ² = 10^(−snr_db/10). Samples come from Box-Muller on the
//! crate's counter-based PRNG: the `(seed, link)` pair fully determines the
//! noise sequence.

use crate::codec::ChannelSignal;
use crate::rng::RngStream;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Main,
    Eavesdrop,
}

impl Link {
    fn tag(self) -> u64 {
        match self {
            Link::Main => 0x4d41_494e,
            Link::Eavesdrop => 0x4556_4553,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelConfig {
    /// SNR in dB; `f64::INFINITY` means a noiseless link.
    pub snr_db: f64,
    pub seed: u64,
    pub link: Link,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, seed: u64, link: Link) -> Self {
        ChannelConfig { snr_db, seed, link }
    }

    pub fn sigma2(&self) -> f64 {
        snr_to_sigma2(self.snr_db)
    }
}

/// Noise power for unit signal power: σ² = 10^(−snr_db/10).
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Draw the additive noise for `n_reals` signal components (2 per symbol).
pub fn sample_noise<T: Real>(n_reals: usize, cfg: &ChannelConfig) -> Vec<T> {
    let sigma2 = cfg.sigma2();
    if sigma2 == 0.0 {
        return vec![T::zero(); n_reals];
    }
    let comp_std = (sigma2 / 2.0).sqrt();
    let mut rng = RngStream::new(cfg.seed, &[cfg.link.tag()]);
    rng.normal_vec(n_reals, comp_std)
}

/// ẑ = z + n.
pub fn transmit<T: Real>(z: &ChannelSignal<T>, cfg: &ChannelConfig) -> ChannelSignal<T> {
    let noise = sample_noise::<T>(z.len(), cfg);
    let values = z
        .values()
        .iter()
        .zip(&noise)
        .map(|(&a, &b)| a + b)
        .collect();
    ChannelSignal::new(values).expect("same length as input")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma2_reference_points() {
        assert_eq!(snr_to_sigma2(0.0), 1.0);
        assert!((snr_to_sigma2(10.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_sigma2(20.0) - 0.01).abs() < 1e-15);
        assert_eq!(snr_to_sigma2(f64::INFINITY), 0.0);
    }

    #[test]
    fn noiseless_sentinel_is_exact() {
        let z = ChannelSignal::<f32>::new(vec![0.5, -0.25, 1.0, 0.0]).unwrap();
        let cfg = ChannelConfig::new(f64::INFINITY, 1, Link::Main);
        assert_eq!(transmit(&z, &cfg).values(), z.values());
    }

    #[test]
    fn noise_power_matches_sigma2_at_0db() {
        let k = 100_000;
        let cfg = ChannelConfig::new(0.0, 42, Link::Main);
        let n: Vec<f64> = sample_noise(2 * k, &cfg);
        let power: f64 = n.iter().map(|v| v * v).sum::<f64>() / k as f64;
        assert!((0.99..=1.01).contains(&power), "power {power}");
    }

    #[test]
    fn noise_mean_is_near_zero() {
        for snr in [0.0, 7.0, 20.0] {
            let cfg = ChannelConfig::new(snr, 17, Link::Eavesdrop);
            let n: Vec<f64> = sample_noise(200_000, &cfg);
            let mean = n.iter().sum::<f64>() / n.len() as f64;
            assert!(mean.abs() < 0.02, "snr {snr}: mean {mean}");
        }
    }

    #[test]
    fn per_component_variance_is_half_sigma2() {
        let cfg = ChannelConfig::new(10.0, 5, Link::Main);
        let n: Vec<f64> = sample_noise(200_000, &cfg);
        let var = n.iter().map(|v| v * v).sum::<f64>() / n.len() as f64;
        let target = 0.05; // σ²/2 at 10 dB
        assert!((var - target).abs() / target < 0.02, "var {var}");
    }

    #[test]
    fn same_seed_same_noise() {
        let cfg = ChannelConfig::new(5.0, 9, Link::Main);
        let a: Vec<f32> = sample_noise(64, &cfg);
        let b: Vec<f32> = sample_noise(64, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn links_use_independent_streams() {
        let main = ChannelConfig::new(5.0, 9, Link::Main);
        let eve = ChannelConfig::new(5.0, 9, Link::Eavesdrop);
        let a: Vec<f64> = sample_noise(64, &main);
        let b: Vec<f64> = sample_noise(64, &eve);
        assert_ne!(a, b);
    }
}
