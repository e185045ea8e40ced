//! Eve's attacks on the overheard signal: naive decoding with the known
//! semantic decoder, and a model inversion attack against the known encoder.
//!
//! Neither attack sees the steganography module or the lost-information
//! estimate; this module deliberately has no dependency on it.

use crate::codec::{ChannelSignal, CodecParams, Image};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{AdamState, ParameterSet, Real, Tape, Tensor, Var};

/// Anything Eve can differentiate through to run a model inversion attack.
pub trait DifferentiableEncoder<T: Real> {
    fn image_shape(&self) -> [usize; 3];
    /// Length of the produced signal in reals (2k).
    fn signal_len(&self) -> usize;
    /// Build the encoder graph from a pixel node.
    fn build_encoder_graph(&self, tape: &mut Tape<T>, x: Var) -> Result<Var>;
}

impl<T: Real> DifferentiableEncoder<T> for CodecParams<T> {
    fn image_shape(&self) -> [usize; 3] {
        [self.cfg.channels, self.cfg.height, self.cfg.width]
    }

    fn signal_len(&self) -> usize {
        2 * self.cfg.k
    }

    fn build_encoder_graph(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let att = self.encoder.attach(tape, false);
        self.encode_graph(tape, &att, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiaInit {
    /// Every pixel 0.5.
    ConstantHalf,
    /// Uniform [0, 1) per pixel, seeded.
    Uniform,
}

#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    pub mia_iters: usize,
    pub mia_lr: f64,
    pub mia_init: MiaInit,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mia_iters: 1000,
            mia_lr: 0.02,
            mia_init: MiaInit::ConstantHalf,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mia_iters == 0 {
            return Err(Error::Config("mia_iters must be >= 1".into()));
        }
        if !(self.mia_lr > 0.0) {
            return Err(Error::Config("mia_lr must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MiaResult<T> {
    /// Best-loss iterate, pixels in [0, 1].
    pub image: Image<T>,
    pub best_loss: f64,
    pub init_loss: f64,
    /// Objective value per evaluated iterate.
    pub loss_trace: Vec<f64>,
    /// True when the optimization hit a non-finite loss and stopped early;
    /// the best finite iterate is still returned.
    pub diverged: bool,
}

/// Eve applies the known decoder directly: x̂_e = D(ẑ_e; θ₂).
pub fn naive_decode<T: Real>(
    z_e_hat: &ChannelSignal<T>,
    decoder: &CodecParams<T>,
) -> Result<Image<T>> {
    decoder.decode(z_e_hat)
}

/// Reverse-engineer the encoder: minimize ‖ẑ_e − E(y; θ₁)‖² over the pixel
/// variable y with Adam, clamping y into [0, 1] after every step. Returns the
/// best-loss iterate seen.
pub fn model_inversion_attack<T: Real, E: DifferentiableEncoder<T>>(
    z_e_hat: &ChannelSignal<T>,
    encoder: &E,
    cfg: &AttackConfig,
) -> Result<MiaResult<T>> {
    cfg.validate()?;
    if z_e_hat.len() != encoder.signal_len() {
        return Err(Error::ShapeMismatch {
            op: "model_inversion_attack",
            lhs: vec![z_e_hat.len()],
            rhs: vec![encoder.signal_len()],
        });
    }
    let [c, h, w] = encoder.image_shape();
    let n = c * h * w;
    let init: Vec<T> = match cfg.mia_init {
        MiaInit::ConstantHalf => vec![T::from_f64(0.5); n],
        MiaInit::Uniform => {
            let mut rng = RngStream::new(cfg.seed, &[0x6d69_61]);
            (0..n).map(|_| rng.uniform()).collect()
        }
    };

    let mut pixels = ParameterSet::new();
    pixels.insert("y", Tensor::new(vec![c, h, w], init)?.with_grad())?;
    let mut adam = AdamState::new(T::from_f64(cfg.mia_lr));

    let mut best_loss = f64::INFINITY;
    let mut best: Vec<T> = pixels.get("y").unwrap().data().to_vec();
    let mut trace = Vec::with_capacity(cfg.mia_iters + 1);
    let mut init_loss = f64::NAN;
    let mut diverged = false;

    for it in 0..=cfg.mia_iters {
        let mut tape = Tape::new();
        let att = pixels.attach(&mut tape, true);
        let y = att.var("y");
        let z = encoder.build_encoder_graph(&mut tape, y)?;
        let target = tape.constant(z_e_hat.values().to_vec(), vec![z_e_hat.len()])?;
        let loss = tape.sq_err(target, z)?;
        let value = tape.value(loss).as_f64();
        if it == 0 {
            init_loss = value;
        }
        if !value.is_finite() {
            diverged = true;
            break;
        }
        trace.push(value);
        if value < best_loss {
            best_loss = value;
            best = tape.data(y).to_vec();
        }
        if it == cfg.mia_iters {
            break;
        }
        tape.backward(loss)?;
        pixels.accumulate_grads(&tape, &att);
        adam.step(&mut pixels)?;
        for v in pixels.get_mut("y").unwrap().data_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    Ok(MiaResult {
        image: Image::new(c, h, w, best)?,
        best_loss,
        init_loss,
        loss_trace: trace,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Test-only linear encoder z = A·y over flattened pixels.
    struct LinearEncoder {
        a: Vec<f64>, // [n, n] row-major
        n: usize,
        shape: [usize; 3],
    }

    impl DifferentiableEncoder<f64> for LinearEncoder {
        fn image_shape(&self) -> [usize; 3] {
            self.shape
        }

        fn signal_len(&self) -> usize {
            self.n
        }

        fn build_encoder_graph(&self, tape: &mut Tape<f64>, x: Var) -> Result<Var> {
            let a = tape.constant(self.a.clone(), vec![self.n, self.n])?;
            let col = tape.reshape(x, vec![self.n, 1])?;
            let z = tape.matmul(a, col)?;
            tape.reshape(z, vec![self.n])
        }
    }

    /// Gaussian elimination with partial pivoting; the closed-form oracle.
    fn solve(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * (n + 1)];
        for r in 0..n {
            m[r * (n + 1)..r * (n + 1) + n].copy_from_slice(&a[r * n..(r + 1) * n]);
            m[r * (n + 1) + n] = b[r];
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| {
                    m[i * (n + 1) + col]
                        .abs()
                        .total_cmp(&m[j * (n + 1) + col].abs())
                })
                .unwrap();
            for k in 0..=n {
                let tmp = m[col * (n + 1) + k];
                m[col * (n + 1) + k] = m[pivot * (n + 1) + k];
                m[pivot * (n + 1) + k] = tmp;
            }
            let d = m[col * (n + 1) + col];
            for r in 0..n {
                if r != col {
                    let f = m[r * (n + 1) + col] / d;
                    for k in col..=n {
                        m[r * (n + 1) + k] -= f * m[col * (n + 1) + k];
                    }
                }
            }
        }
        (0..n).map(|r| m[r * (n + 1) + n] / m[r * (n + 1) + r]).collect()
    }

    fn well_conditioned(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, &[3]);
        let mut a = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                a[r * n + c] = rng.normal_f64() * 0.15 + if r == c { 1.0 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn mia_recovers_linear_encoder_input() {
        let n = 16;
        let enc = LinearEncoder {
            a: well_conditioned(n, 5),
            n,
            shape: [1, 4, 4],
        };
        let mut rng = RngStream::new(6, &[0]);
        let y_true: Vec<f64> = (0..n).map(|_| 0.1 + 0.8 * rng.uniform_f64()).collect();
        let mut z = vec![0.0; n];
        for r in 0..n {
            for c in 0..n {
                z[r] += enc.a[r * n + c] * y_true[c];
            }
        }
        // Oracle: the noiseless least-squares solution is A⁻¹ z = y_true.
        let oracle = solve(&enc.a, &z, n);
        for (o, t) in oracle.iter().zip(&y_true) {
            assert!((o - t).abs() < 1e-10);
        }

        let cfg = AttackConfig {
            mia_iters: 1500,
            mia_lr: 0.05,
            mia_init: MiaInit::ConstantHalf,
            seed: 1,
        };
        let z_sig = ChannelSignal::new(z).unwrap();
        let res = model_inversion_attack(&z_sig, &enc, &cfg).unwrap();
        assert!(!res.diverged);
        let max_err = res
            .image
            .data()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-3, "max err {max_err}");
    }

    #[test]
    fn best_so_far_is_non_increasing_and_bounded_by_init() {
        let n = 16;
        let enc = LinearEncoder {
            a: well_conditioned(n, 7),
            n,
            shape: [1, 4, 4],
        };
        let z = ChannelSignal::new(vec![0.3; n]).unwrap();
        let cfg = AttackConfig {
            mia_iters: 50,
            ..Default::default()
        };
        let res = model_inversion_attack(&z, &enc, &cfg).unwrap();
        let mut running = f64::INFINITY;
        let mut mins = Vec::new();
        for &l in &res.loss_trace {
            running = running.min(l);
            mins.push(running);
        }
        for w in mins.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(res.best_loss <= res.init_loss);
    }

    #[test]
    fn mia_is_deterministic_under_seed() {
        let n = 16;
        let enc = LinearEncoder {
            a: well_conditioned(n, 9),
            n,
            shape: [1, 4, 4],
        };
        let z = ChannelSignal::new(vec![0.1; n]).unwrap();
        let cfg = AttackConfig {
            mia_iters: 25,
            mia_init: MiaInit::Uniform,
            seed: 42,
            ..Default::default()
        };
        let a = model_inversion_attack(&z, &enc, &cfg).unwrap();
        let b = model_inversion_attack(&z, &enc, &cfg).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.best_loss, b.best_loss);
    }

    #[test]
    fn signal_length_mismatch_rejected() {
        let enc = LinearEncoder {
            a: well_conditioned(4, 9),
            n: 4,
            shape: [1, 2, 2],
        };
        let z = ChannelSignal::<f64>::zeros(3); // 6 reals != 4
        assert!(matches!(
            model_inversion_attack(&z, &enc, &AttackConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn naive_decoding_is_exactly_the_shared_decoder() {
        // Same pipeline as Bob: with no steganography and equal SNR, Eve's
        // naive decode IS the decoder output.
        let cfg = crate::codec::CodecConfig::from_bcr(3, 16, 16, 1, 12).unwrap();
        let codec = crate::codec::CodecParams::<f32>::init(cfg, 3).unwrap();
        let z = ChannelSignal::new(RngStream::new(4, &[0]).normal_vec(2 * cfg.k, 1.0)).unwrap();
        let a = naive_decode(&z, &codec).unwrap();
        let b = codec.decode(&z).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn config_validation() {
        let bad = AttackConfig {
            mia_iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            mia_lr: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
