//! Invertible signal steganography.
//!
//! A chain of additive-affine coupling blocks embeds the private signal z_p
//! into the host signal z_h. Block `i` computes
//!
//! ```text
//! z_h' = z_h + Φ(z_p)
//! z_p' = z_p ⊙ exp(ρ(z_h')) + η(z_h')
//! ```
//!
//! and the backward operation inverts it exactly:
//!
//! ```text
//! ẑ_p = (ẑ_p' − η(ẑ_h')) ⊙ exp(−ρ(ẑ_h'))
//! ẑ_h = ẑ_h' − Φ(ẑ_p)
//! ```
//!
//! After I blocks the container signal is z_c = z_h^(I) and the lost
//! information l = z_p^(I); only z_c is transmitted, the receiver substitutes
//! an estimate l̂ for l. Φ, ρ, η are small convolutional nets over the signal
//! viewed as a 2-channel (re, im) feature map; their final layers start at
//! zero so a fresh chain is the identity. The exp argument is soft-clamped to
//! ±C via C·tanh(·/C), identically in both directions, so the map stays an
//! exact inverse pair.

use crate::codec::{ChannelSignal, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Attached, ParameterSet, Real, Tape, Tensor, Var};

/// Soft-clamp bound on the exp argument.
pub const EXP_CLAMP: f64 = 5.0;

/// Geometry of the coupling chain over signals of 2k reals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnConfig {
    /// Complex symbol count k; signals carry 2k reals.
    pub k: usize,
    /// Number of invertible blocks I.
    pub blocks: usize,
    /// Hidden width of the Φ/ρ/η conv nets.
    pub width: usize,
    /// Feature-map height/width with map_h·map_w = k.
    pub map_h: usize,
    pub map_w: usize,
}

impl InnConfig {
    pub fn new(k: usize, blocks: usize, width: usize) -> Result<Self> {
        if k == 0 || blocks == 0 || width == 0 {
            return Err(Error::Config(
                "inn: k, blocks and width must be positive".into(),
            ));
        }
        let (map_h, map_w) = near_square(k);
        Ok(InnConfig {
            k,
            blocks,
            width,
            map_h,
            map_w,
        })
    }

    pub fn signal_len(&self) -> usize {
        2 * self.k
    }
}

/// Largest factor pair (h, w) of k with h ≤ w and h as close to √k as
/// possible.
fn near_square(k: usize) -> (usize, usize) {
    let mut h = (k as f64).sqrt() as usize;
    while h > 1 && k % h != 0 {
        h -= 1;
    }
    (h.max(1), k / h.max(1))
}

/// Output of the forward pass: container signal plus the untransmitted lost
/// information.
#[derive(Debug, Clone)]
pub struct StegoOutput<T> {
    pub container: ChannelSignal<T>,
    pub lost: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LhatMode {
    /// All-zero estimate.
    Constant,
    /// Standard normal draws from the given seed.
    Sampled { seed: u64 },
}

/// The receiver-side estimate l̂ of the lost information.
#[derive(Debug, Clone)]
pub struct LostEstimate<T> {
    pub mode: LhatMode,
    pub values: Vec<T>,
}

impl<T: Real> LostEstimate<T> {
    /// Exact lost information, for noiseless roundtrip checks.
    pub fn exact(values: Vec<T>) -> Self {
        LostEstimate {
            mode: LhatMode::Constant,
            values,
        }
    }
}

/// Build an estimate of the given length (2k reals).
pub fn make_lhat<T: Real>(mode: LhatMode, length: usize) -> LostEstimate<T> {
    let values = match mode {
        LhatMode::Constant => vec![T::zero(); length],
        LhatMode::Sampled { seed } => RngStream::new(seed, &[0x17a7]).normal_vec(length, 1.0),
    };
    LostEstimate { mode, values }
}

/// Parameters φ of the coupling chain.
#[derive(Debug, Clone)]
pub struct InnParams<T> {
    pub cfg: InnConfig,
    pub params: ParameterSet<T>,
}

const SUBNETS: [&str; 3] = ["phi", "rho", "eta"];

impl<T: Real> InnParams<T> {
    pub fn init(cfg: InnConfig, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed, &[0x1111]);
        let mut params = ParameterSet::new();
        let w = cfg.width;
        for b in 0..cfg.blocks {
            for net in SUBNETS {
                let std0 = (2.0f64 / (2.0 * 9.0)).sqrt();
                let std1 = (2.0 / (w as f64 * 9.0)).sqrt();
                params.insert(
                    format!("inn.b{b}.{net}.c0.w"),
                    Tensor::new(vec![w, 2, 3, 3], rng.normal_vec(w * 2 * 9, std0))?.with_grad(),
                )?;
                params.insert(format!("inn.b{b}.{net}.c0.b"), Tensor::zeros(vec![w]).with_grad())?;
                params.insert(
                    format!("inn.b{b}.{net}.c1.w"),
                    Tensor::new(vec![w, w, 3, 3], rng.normal_vec(w * w * 9, std1))?.with_grad(),
                )?;
                params.insert(format!("inn.b{b}.{net}.c1.b"), Tensor::zeros(vec![w]).with_grad())?;
                // Zero-initialized final layer: block starts as the identity.
                params.insert(
                    format!("inn.b{b}.{net}.c2.w"),
                    Tensor::zeros(vec![2, w, 3, 3]).with_grad(),
                )?;
                params.insert(format!("inn.b{b}.{net}.c2.b"), Tensor::zeros(vec![2]).with_grad())?;
            }
        }
        Ok(InnParams { cfg, params })
    }

    pub fn cast<U: Real>(&self) -> InnParams<U> {
        InnParams {
            cfg: self.cfg,
            params: self.params.cast(),
        }
    }

    /// Flatten into a named-tensor set for checkpointing, geometry included.
    pub fn to_checkpoint_set(&self) -> ParameterSet<T> {
        let mut set = ParameterSet::new();
        let meta = [self.cfg.k, self.cfg.blocks, self.cfg.width];
        set.insert(
            "meta.inn",
            Tensor::new(vec![3], meta.iter().map(|&v| T::from_usize(v)).collect()).unwrap(),
        )
        .unwrap();
        for (name, t) in self.params.iter() {
            set.insert(name, t.clone()).expect("unique names by construction");
        }
        set
    }

    pub fn from_checkpoint_set(set: &ParameterSet<T>) -> Result<Self> {
        let meta = set
            .get("meta.inn")
            .ok_or_else(|| Error::MissingTensor("meta.inn".into()))?;
        if meta.numel() != 3 {
            return Err(Error::CheckpointMismatch("meta.inn must hold 3 values".into()));
        }
        let dims: Vec<usize> = meta.data().iter().map(|v| v.as_f64() as usize).collect();
        let cfg = InnConfig::new(dims[0], dims[1], dims[2])?;
        let mut fresh = InnParams::<T>::init(cfg, 0)?;
        let mut used = 1usize;
        for (name, t) in fresh.params.iter_mut() {
            let stored = set
                .get(name)
                .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
            if stored.shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(stored.data());
            used += 1;
        }
        if used != set.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint holds {} tensors, stego module expects {used}",
                set.len()
            )));
        }
        Ok(fresh)
    }

    /// Permutation taking interleaved (re, im) signal layout to a 2-channel
    /// map (re plane then im plane).
    fn deinterleave_perm(&self) -> Vec<u32> {
        let k = self.cfg.k;
        (0..2 * k)
            .map(|j| (2 * (j % k) + j / k) as u32)
            .collect()
    }

    fn interleave_perm(&self) -> Vec<u32> {
        let k = self.cfg.k;
        (0..2 * k)
            .map(|i| ((i % 2) * k + i / 2) as u32)
            .collect()
    }

    /// One Φ/ρ/η conv net applied to a signal node.
    fn subnet_graph(
        &self,
        tape: &mut Tape<T>,
        att: &Attached,
        block: usize,
        net: &str,
        x: Var,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let slope = T::from_f64(LEAKY_SLOPE);
        let as_map = tape.permute(x, self.deinterleave_perm())?;
        let mut h = tape.reshape(as_map, vec![2, cfg.map_h, cfg.map_w])?;
        for (j, last) in [(0, false), (1, false), (2, true)] {
            h = tape.conv2d(
                h,
                att.var(&format!("inn.b{block}.{net}.c{j}.w")),
                Some(att.var(&format!("inn.b{block}.{net}.c{j}.b"))),
                1,
                1,
            )?;
            if !last {
                h = tape.leaky_relu(h, slope);
            }
        }
        let flat = tape.reshape(h, vec![cfg.signal_len()])?;
        tape.permute(flat, self.interleave_perm())
    }

    /// exp argument soft clamp, C·tanh(s/C).
    fn clamp_graph(&self, tape: &mut Tape<T>, s: Var) -> Var {
        let c = T::from_f64(EXP_CLAMP);
        let scaled = tape.scale(s, T::one() / c);
        let t = tape.tanh(scaled);
        tape.scale(t, c)
    }

    /// Forward pass of block `i` on tape nodes.
    pub fn block_forward_graph(
        &self,
        tape: &mut Tape<T>,
        att: &Attached,
        block: usize,
        z_h: Var,
        z_p: Var,
    ) -> Result<(Var, Var)> {
        let phi = self.subnet_graph(tape, att, block, "phi", z_p)?;
        let z_h1 = tape.add(z_h, phi)?;
        let rho = self.subnet_graph(tape, att, block, "rho", z_h1)?;
        let s = self.clamp_graph(tape, rho);
        let e = tape.exp(s);
        let scaled = tape.mul(z_p, e)?;
        let eta = self.subnet_graph(tape, att, block, "eta", z_h1)?;
        let z_p1 = tape.add(scaled, eta)?;
        check_finite(tape, block, "forward", &[z_h1, z_p1])?;
        Ok((z_h1, z_p1))
    }

    /// Backward (inverting) pass of block `i` on tape nodes.
    pub fn block_backward_graph(
        &self,
        tape: &mut Tape<T>,
        att: &Attached,
        block: usize,
        z_h1: Var,
        z_p1: Var,
    ) -> Result<(Var, Var)> {
        let rho = self.subnet_graph(tape, att, block, "rho", z_h1)?;
        let s = self.clamp_graph(tape, rho);
        let neg_s = tape.scale(s, -T::one());
        let en = tape.exp(neg_s);
        let eta = self.subnet_graph(tape, att, block, "eta", z_h1)?;
        let diff = tape.sub(z_p1, eta)?;
        let z_p = tape.mul(diff, en)?;
        let phi = self.subnet_graph(tape, att, block, "phi", z_p)?;
        let z_h = tape.sub(z_h1, phi)?;
        check_finite(tape, block, "backward", &[z_h, z_p])?;
        Ok((z_h, z_p))
    }

    /// Full forward chain on tape nodes: returns (z_c, l).
    pub fn embed_graph(
        &self,
        tape: &mut Tape<T>,
        att: &Attached,
        z_h: Var,
        z_p: Var,
    ) -> Result<(Var, Var)> {
        self.check_len(tape, "embed", z_h)?;
        self.check_len(tape, "embed", z_p)?;
        let (mut h, mut p) = (z_h, z_p);
        for b in 0..self.cfg.blocks {
            (h, p) = self.block_forward_graph(tape, att, b, h, p)?;
        }
        Ok((h, p))
    }

    /// Full backward chain on tape nodes from (ẑ_c, l̂): returns (ẑ_h, ẑ_p).
    pub fn extract_graph(
        &self,
        tape: &mut Tape<T>,
        att: &Attached,
        z_c_hat: Var,
        l_hat: Var,
    ) -> Result<(Var, Var)> {
        self.check_len(tape, "extract", z_c_hat)?;
        self.check_len(tape, "extract", l_hat)?;
        let (mut h, mut p) = (z_c_hat, l_hat);
        for b in (0..self.cfg.blocks).rev() {
            (h, p) = self.block_backward_graph(tape, att, b, h, p)?;
        }
        Ok((h, p))
    }

    fn check_len(&self, tape: &Tape<T>, op: &'static str, v: Var) -> Result<()> {
        if tape.data(v).len() != self.cfg.signal_len() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: tape.shape(v).to_vec(),
                rhs: vec![self.cfg.signal_len()],
            });
        }
        Ok(())
    }

    /// Forward pass of a single block on plain signals.
    pub fn block_forward(
        &self,
        block: usize,
        z_h: &[T],
        z_p: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let mut tape = Tape::new();
        let att = self.params.attach(&mut tape, false);
        let h = tape.leaf(z_h.to_vec(), vec![z_h.len()], false)?;
        let p = tape.leaf(z_p.to_vec(), vec![z_p.len()], false)?;
        if z_h.len() != z_p.len() {
            return Err(Error::ShapeMismatch {
                op: "block_forward",
                lhs: vec![z_h.len()],
                rhs: vec![z_p.len()],
            });
        }
        let (h1, p1) = self.block_forward_graph(&mut tape, &att, block, h, p)?;
        Ok((tape.data(h1).to_vec(), tape.data(p1).to_vec()))
    }

    /// Backward pass of a single block on plain signals.
    pub fn block_backward(
        &self,
        block: usize,
        z_h1: &[T],
        z_p1: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let mut tape = Tape::new();
        let att = self.params.attach(&mut tape, false);
        if z_h1.len() != z_p1.len() {
            return Err(Error::ShapeMismatch {
                op: "block_backward",
                lhs: vec![z_h1.len()],
                rhs: vec![z_p1.len()],
            });
        }
        let h = tape.leaf(z_h1.to_vec(), vec![z_h1.len()], false)?;
        let p = tape.leaf(z_p1.to_vec(), vec![z_p1.len()], false)?;
        let (h0, p0) = self.block_backward_graph(&mut tape, &att, block, h, p)?;
        Ok((tape.data(h0).to_vec(), tape.data(p0).to_vec()))
    }

    /// Embed the private signal into the host signal (inference mode).
    pub fn embed(
        &self,
        z_h: &ChannelSignal<T>,
        z_p: &ChannelSignal<T>,
    ) -> Result<StegoOutput<T>> {
        let mut tape = Tape::new();
        let att = self.params.attach(&mut tape, false);
        let h = tape.leaf(z_h.values().to_vec(), vec![z_h.len()], false)?;
        let p = tape.leaf(z_p.values().to_vec(), vec![z_p.len()], false)?;
        let (zc, l) = self.embed_graph(&mut tape, &att, h, p)?;
        Ok(StegoOutput {
            container: ChannelSignal::new(tape.data(zc).to_vec())?,
            lost: tape.data(l).to_vec(),
        })
    }

    /// Invert from the received container and an estimate of the lost
    /// information (inference mode). Returns (ẑ_h, ẑ_p).
    pub fn extract(
        &self,
        z_c_hat: &ChannelSignal<T>,
        l_hat: &LostEstimate<T>,
    ) -> Result<(ChannelSignal<T>, ChannelSignal<T>)> {
        let mut tape = Tape::new();
        let att = self.params.attach(&mut tape, false);
        let c = tape.leaf(z_c_hat.values().to_vec(), vec![z_c_hat.len()], false)?;
        let l = tape.leaf(l_hat.values.clone(), vec![l_hat.values.len()], false)?;
        let (zh, zp) = self.extract_graph(&mut tape, &att, c, l)?;
        Ok((
            ChannelSignal::new(tape.data(zh).to_vec())?,
            ChannelSignal::new(tape.data(zp).to_vec())?,
        ))
    }
}

fn check_finite<T: Real>(
    tape: &Tape<T>,
    block: usize,
    pass: &'static str,
    vars: &[Var],
) -> Result<()> {
    for &v in vars {
        if tape.data(v).iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteBlock { block, pass });
        }
    }
    Ok(())
}
