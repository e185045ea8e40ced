//! Semantic codec: encoder from images to power-normalized complex channel
//! signals and decoder back to images.
//!
//! The encoder is four stride-2 convolutions (widths 16/32/64/128) followed
//! by a linear head onto `2k` reals; the decoder mirrors it with transposed
//! convolutions and a final sigmoid. Complex symbols are packed as
//! interleaved (re, im) pairs over the flattened head output, and every
//! encoded signal is normalized per sample to unit average symbol power.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Attached, ParameterSet, Real, Tape, Tensor, Var};

/// Leaky-ReLU slope used across codec and stego sub-networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Encoder conv widths; the decoder mirrors them in reverse.
pub const ENC_WIDTHS: [usize; 4] = [16, 32, 64, 128];

/// An RGB image as a `[C, H, W]` tensor with pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    data: Vec<T>,
    channels: usize,
    height: usize,
    width: usize,
}

impl<T: Real> Image<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                op: "image_new",
                lhs: vec![channels, height, width],
                rhs: vec![data.len()],
            });
        }
        Ok(Image {
            data,
            channels,
            height,
            width,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            data: vec![T::zero(); channels * height * width],
            channels,
            height,
            width,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Source bandwidth N = C·H·W.
    pub fn bandwidth(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Clamp all pixels into [0, 1] in place.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }
}

/// A length-k complex channel signal stored as 2k interleaved (re, im) reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignal<T> {
    values: Vec<T>,
}

impl<T: Real> ChannelSignal<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::ShapeMismatch {
                op: "channel_signal",
                lhs: vec![values.len()],
                rhs: vec![2],
            });
        }
        Ok(ChannelSignal { values })
    }

    pub fn zeros(symbols: usize) -> Self {
        ChannelSignal {
            values: vec![T::zero(); 2 * symbols],
        }
    }

    /// Number of complex symbols k.
    pub fn symbols(&self) -> usize {
        self.values.len() / 2
    }

    /// Number of stored reals, 2k.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Mean complex-symbol power, `(1/k) Σ |symbolᵢ|²`.
    pub fn mean_symbol_power(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v.as_f64() * v.as_f64()).sum();
        sum / self.symbols() as f64
    }

    pub fn cast<U: Real>(&self) -> ChannelSignal<U> {
        ChannelSignal {
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Scale a raw signal to unit average symbol power: `out = raw·√k / ‖raw‖₂`.
pub fn power_normalize<T: Real>(raw: &ChannelSignal<T>) -> Result<ChannelSignal<T>> {
    let norm2: f64 = raw.values().iter().map(|v| v.as_f64() * v.as_f64()).sum();
    if norm2 == 0.0 || !norm2.is_finite() {
        return Err(Error::DegenerateSignal);
    }
    let alpha = T::from_f64((raw.symbols() as f64).sqrt() / norm2.sqrt());
    ChannelSignal::new(raw.values().iter().map(|&v| v * alpha).collect())
}

/// Codec geometry. `k` is the complex symbol count; the declared bandwidth
/// compression ratio is exactly `k / (C·H·W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
}

impl CodecConfig {
    /// Build a config from an image shape and a BCR given as a fraction
    /// `num/den`, requiring k = N·num/den to be a whole number.
    pub fn from_bcr(channels: usize, height: usize, width: usize, num: u32, den: u32) -> Result<Self> {
        if den == 0 || num == 0 {
            return Err(Error::Config("bcr must be a positive fraction".into()));
        }
        if height % 16 != 0 || width % 16 != 0 || height < 16 || width < 16 {
            return Err(Error::Config(format!(
                "image size {height}x{width} must be a multiple of 16 (four stride-2 layers)"
            )));
        }
        let n = channels * height * width;
        let scaled = n as u64 * num as u64;
        if scaled % den as u64 != 0 {
            return Err(Error::Config(format!(
                "bcr {num}/{den} does not divide source bandwidth {n} into whole symbols"
            )));
        }
        let k = (scaled / den as u64) as usize;
        if k == 0 {
            return Err(Error::Config("bcr yields zero symbols".into()));
        }
        Ok(CodecConfig {
            channels,
            height,
            width,
            k,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Actual BCR as a float, `k / N`.
    pub fn bcr(&self) -> f64 {
        self.k as f64 / self.bandwidth() as f64
    }

    /// Spatial size of the encoder's last feature map (H/16 x W/16).
    fn feat_hw(&self) -> (usize, usize) {
        (self.height / 16, self.width / 16)
    }

    fn feat_len(&self) -> usize {
        let (fh, fw) = self.feat_hw();
        ENC_WIDTHS[3] * fh * fw
    }
}

/// Encoder (θ₁) and decoder (θ₂) parameters plus geometry.
#[derive(Debug, Clone)]
pub struct CodecParams<T> {
    pub cfg: CodecConfig,
    pub encoder: ParameterSet<T>,
    pub decoder: ParameterSet<T>,
}

fn he_conv<T: Real>(rng: &mut RngStream, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::new(shape, rng.normal_vec(n, std)).unwrap().with_grad()
}

fn zero_param<T: Real>(shape: Vec<usize>) -> Tensor<T> {
    Tensor::zeros(shape).with_grad()
}

impl<T: Real> CodecParams<T> {
    /// Fresh randomly-initialized codec.
    pub fn init(cfg: CodecConfig, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed, &[0x0c0d]);
        let mut encoder = ParameterSet::new();
        let mut dec_widths = vec![ENC_WIDTHS[2], ENC_WIDTHS[1], ENC_WIDTHS[0], cfg.channels];

        let mut in_c = cfg.channels;
        for (i, &out_c) in ENC_WIDTHS.iter().enumerate() {
            encoder.insert(
                format!("enc.conv{i}.w"),
                he_conv(&mut rng, vec![out_c, in_c, 3, 3], in_c * 9),
            )?;
            encoder.insert(format!("enc.conv{i}.b"), zero_param(vec![out_c]))?;
            in_c = out_c;
        }
        let feat = cfg.feat_len();
        encoder.insert(
            "enc.fc.w",
            he_conv(&mut rng, vec![feat, 2 * cfg.k], feat),
        )?;
        encoder.insert("enc.fc.b", zero_param(vec![1, 2 * cfg.k]))?;

        let mut decoder = ParameterSet::new();
        decoder.insert(
            "dec.fc.w",
            he_conv(&mut rng, vec![2 * cfg.k, feat], 2 * cfg.k),
        )?;
        decoder.insert("dec.fc.b", zero_param(vec![1, feat]))?;
        let mut in_c = ENC_WIDTHS[3];
        for (i, out_c) in dec_widths.drain(..).enumerate() {
            decoder.insert(
                format!("dec.deconv{i}.w"),
                he_conv(&mut rng, vec![in_c, out_c, 4, 4], in_c * 16),
            )?;
            decoder.insert(format!("dec.deconv{i}.b"), zero_param(vec![out_c]))?;
            in_c = out_c;
        }
        Ok(CodecParams {
            cfg,
            encoder,
            decoder,
        })
    }

    /// Encoder graph from an image node to a power-normalized signal node.
    pub fn encode_graph(&self, tape: &mut Tape<T>, att: &Attached, x: Var) -> Result<Var> {
        let cfg = &self.cfg;
        if tape.shape(x) != cfg_shape(cfg) {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: tape.shape(x).to_vec(),
                rhs: cfg_shape(cfg).to_vec(),
            });
        }
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut h = x;
        for i in 0..4 {
            h = tape.conv2d(
                h,
                att.var(&format!("enc.conv{i}.w")),
                Some(att.var(&format!("enc.conv{i}.b"))),
                2,
                1,
            )?;
            h = tape.leaky_relu(h, slope);
        }
        let flat = tape.reshape(h, vec![1, cfg.feat_len()])?;
        let head = tape.matmul(flat, att.var("enc.fc.w"))?;
        let head = tape.add(head, att.var("enc.fc.b"))?;
        let head = tape.reshape(head, vec![2 * cfg.k])?;
        tape.power_norm(head)
    }

    /// Decoder graph from a signal node (2k reals) to an image node in [0,1].
    pub fn decode_graph(&self, tape: &mut Tape<T>, att: &Attached, z: Var) -> Result<Var> {
        let cfg = &self.cfg;
        if tape.data(z).len() != 2 * cfg.k {
            return Err(Error::ShapeMismatch {
                op: "decode",
                lhs: tape.shape(z).to_vec(),
                rhs: vec![2 * cfg.k],
            });
        }
        let slope = T::from_f64(LEAKY_SLOPE);
        let row = tape.reshape(z, vec![1, 2 * cfg.k])?;
        let h = tape.matmul(row, att.var("dec.fc.w"))?;
        let h = tape.add(h, att.var("dec.fc.b"))?;
        let (fh, fw) = cfg.feat_hw();
        let mut h = tape.reshape(h, vec![ENC_WIDTHS[3], fh, fw])?;
        h = tape.leaky_relu(h, slope);
        for i in 0..4 {
            h = tape.conv2d_transpose(
                h,
                att.var(&format!("dec.deconv{i}.w")),
                Some(att.var(&format!("dec.deconv{i}.b"))),
                2,
                1,
            )?;
            if i < 3 {
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok(tape.sigmoid(h))
    }

    /// Encode an image (inference mode).
    pub fn encode(&self, x: &Image<T>) -> Result<ChannelSignal<T>> {
        let mut tape = Tape::new();
        let att = self.encoder.attach(&mut tape, false);
        let xv = tape.leaf(x.data().to_vec(), x.shape().to_vec(), false)?;
        let z = self.encode_graph(&mut tape, &att, xv)?;
        ChannelSignal::new(tape.data(z).to_vec())
    }

    /// Decode a noisy signal (inference mode).
    pub fn decode(&self, z: &ChannelSignal<T>) -> Result<Image<T>> {
        let mut tape = Tape::new();
        let att = self.decoder.attach(&mut tape, false);
        let zv = tape.leaf(z.values().to_vec(), vec![z.len()], false)?;
        let img = self.decode_graph(&mut tape, &att, zv)?;
        Image::new(
            self.cfg.channels,
            self.cfg.height,
            self.cfg.width,
            tape.data(img).to_vec(),
        )
    }

    pub fn cast<U: Real>(&self) -> CodecParams<U> {
        CodecParams {
            cfg: self.cfg,
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
        }
    }

    /// Flatten into a single named-tensor set for checkpointing. Geometry
    /// rides along as a `meta.codec` tensor.
    pub fn to_checkpoint_set(&self) -> ParameterSet<T> {
        let mut set = ParameterSet::new();
        let meta = [
            self.cfg.channels,
            self.cfg.height,
            self.cfg.width,
            self.cfg.k,
        ];
        set.insert(
            "meta.codec",
            Tensor::new(vec![4], meta.iter().map(|&v| T::from_usize(v)).collect()).unwrap(),
        )
        .unwrap();
        for (name, t) in self.encoder.iter().chain(self.decoder.iter()) {
            set.insert(name, t.clone()).expect("unique names by construction");
        }
        set
    }

    /// Rebuild from a checkpoint set, validating that every expected tensor
    /// is present with the right shape and nothing extra is left over.
    pub fn from_checkpoint_set(set: &ParameterSet<T>) -> Result<Self> {
        let meta = set
            .get("meta.codec")
            .ok_or_else(|| Error::MissingTensor("meta.codec".into()))?;
        if meta.numel() != 4 {
            return Err(Error::CheckpointMismatch("meta.codec must hold 4 values".into()));
        }
        let dims: Vec<usize> = meta.data().iter().map(|v| v.as_f64() as usize).collect();
        let cfg = CodecConfig {
            channels: dims[0],
            height: dims[1],
            width: dims[2],
            k: dims[3],
        };
        let mut fresh = CodecParams::<T>::init(cfg, 0)?;
        let mut used = 1usize;
        for (name, t) in fresh.encoder.iter_mut().chain(fresh.decoder.iter_mut()) {
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
                "checkpoint holds {} tensors, codec expects {used}",
                set.len()
            )));
        }
        Ok(fresh)
    }
}

fn cfg_shape(cfg: &CodecConfig) -> [usize; 3] {
    [cfg.channels, cfg.height, cfg.width]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CodecConfig {
        CodecConfig::from_bcr(3, 16, 16, 1, 12).unwrap()
    }

    fn test_image<T: Real>(cfg: &CodecConfig, seed: u64) -> Image<T> {
        let mut rng = RngStream::new(seed, &[7]);
        let n = cfg.bandwidth();
        let data: Vec<T> = (0..n).map(|_| rng.uniform()).collect();
        Image::new(cfg.channels, cfg.height, cfg.width, data).unwrap()
    }

    #[test]
    fn bcr_arithmetic() {
        // 3x32x32 at BCR 1/12 → 256 complex symbols.
        let cfg = CodecConfig::from_bcr(3, 32, 32, 1, 12).unwrap();
        assert_eq!(cfg.k, 256);
        assert_eq!(cfg.bcr(), 256.0 / 3072.0);
        // 3x16x16 → 64 symbols.
        assert_eq!(small_cfg().k, 64);
    }

    #[test]
    fn bcr_must_divide_exactly() {
        assert!(matches!(
            CodecConfig::from_bcr(3, 16, 16, 1, 7),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn encoded_signal_has_unit_power() {
        let cfg = small_cfg();
        let codec = CodecParams::<f32>::init(cfg, 3).unwrap();
        let x = test_image::<f32>(&cfg, 1);
        let z = codec.encode(&x).unwrap();
        assert_eq!(z.symbols(), cfg.k);
        assert!((z.mean_symbol_power() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn encode_is_deterministic() {
        let cfg = small_cfg();
        let codec = CodecParams::<f32>::init(cfg, 3).unwrap();
        let x = test_image::<f32>(&cfg, 2);
        let a = codec.encode(&x).unwrap();
        let b = codec.encode(&x).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn decoder_output_stays_in_unit_range() {
        // Untrained random params: output still within [0, 1].
        let cfg = small_cfg();
        let codec = CodecParams::<f32>::init(cfg, 99).unwrap();
        let x = test_image::<f32>(&cfg, 3);
        let z = codec.encode(&x).unwrap();
        let img = codec.decode(&z).unwrap();
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(img.shape(), x.shape());
    }

    #[test]
    fn power_normalize_cases() {
        // ‖raw‖₂² == k → unchanged.
        let k = 4;
        let v = (1.0f64 / 2.0).sqrt();
        let raw = ChannelSignal::new(vec![v; 2 * k]).unwrap();
        let out = power_normalize(&raw).unwrap();
        for (a, b) in raw.values().iter().zip(out.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Doubled raw → halved back to the same signal.
        let doubled = ChannelSignal::new(raw.values().iter().map(|x| x * 2.0).collect()).unwrap();
        let out2 = power_normalize(&doubled).unwrap();
        for (a, b) in out.values().iter().zip(out2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Random raw, k=256 → unit mean power.
        let mut rng = RngStream::new(5, &[1]);
        let raw = ChannelSignal::<f64>::new(rng.normal_vec(512, 2.5)).unwrap();
        let out = power_normalize(&raw).unwrap();
        assert!((out.mean_symbol_power() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_signal_is_degenerate() {
        let raw = ChannelSignal::<f32>::zeros(8);
        assert!(matches!(power_normalize(&raw), Err(Error::DegenerateSignal)));
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        let cfg = small_cfg();
        let codec = CodecParams::<f32>::init(cfg, 3).unwrap();
        let wrong = Image::<f32>::zeros(3, 32, 32);
        assert!(matches!(
            codec.encode(&wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let cfg = small_cfg();
        let codec = CodecParams::<f32>::init(cfg, 3).unwrap();
        let wrong = ChannelSignal::<f32>::zeros(cfg.k + 1);
        assert!(matches!(
            codec.decode(&wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
