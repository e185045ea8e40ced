//! Loss functions and the two training procedures: codec pretraining and
//! channel-in-the-loop training of the steganography module.
//!
//! The stego losses are sums of squared elements (matching the ‖·‖₂²
//! notation); the codec loss is a per-pixel mean. Batch losses are means over
//! batch items. Batches are split into fixed-size chunks that run on worker
//! threads and are reduced in index order, so a seed pins the whole parameter
//! trajectory bit-for-bit regardless of thread count.

use rayon::prelude::*;

use crate::channel::{sample_noise, ChannelConfig, Link};
use crate::codec::{ChannelSignal, CodecConfig, CodecParams, Image};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stego::{make_lhat, InnConfig, InnParams, LhatMode};
use crate::tensor::{AdamState, Real, Tape, Var};

const TAG_SHUFFLE: u64 = 0x5348;
const TAG_SNR: u64 = 0x534e;
const TAG_NOISE: u64 = 0x4e4f;
const TAG_LHAT: u64 = 0x4c48;
const TAG_PAIR: u64 = 0x5052;

/// Items processed sequentially per worker task.
const CHUNK: usize = 8;

/// λ₁..λ₅ of the stego objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            l2: 2.0,
            l3: 2.0,
            l4: 1.0,
            l5: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l1, self.l2, self.l3, self.l4, self.l5];
        if all.iter().any(|l| *l < 0.0 || !l.is_finite()) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-step loss breakdown. `total` is always `(forward + backward) +
/// privacy` in that exact summation order.
#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub forward: f64,
    pub backward: f64,
    pub privacy: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(forward: f64, backward: f64, privacy: f64) -> Self {
        LossReport {
            forward,
            backward,
            privacy,
            total: (forward + backward) + privacy,
        }
    }
}

// ── Loss graphs ─────────────────────────────────────────────────────────

/// λ₁‖z_c − z_h‖² + λ₂‖l − l̂‖²
pub fn loss_forward_graph<T: Real>(
    tape: &mut Tape<T>,
    z_c: Var,
    z_h: Var,
    l: Var,
    l_hat: Var,
    w: &LossWeights,
) -> Result<Var> {
    let hide = tape.sq_err(z_c, z_h)?;
    let hide = tape.scale(hide, T::from_f64(w.l1));
    let lost = tape.sq_err(l, l_hat)?;
    let lost = tape.scale(lost, T::from_f64(w.l2));
    tape.add(hide, lost)
}

/// λ₃‖z_p − ẑ_p‖² + λ₄‖z_h − ẑ_h‖²
pub fn loss_backward_graph<T: Real>(
    tape: &mut Tape<T>,
    z_p: Var,
    z_p_hat: Var,
    z_h: Var,
    z_h_hat: Var,
    w: &LossWeights,
) -> Result<Var> {
    let private = tape.sq_err(z_p, z_p_hat)?;
    let private = tape.scale(private, T::from_f64(w.l3));
    let host = tape.sq_err(z_h, z_h_hat)?;
    let host = tape.scale(host, T::from_f64(w.l4));
    tape.add(private, host)
}

/// λ₅‖x_p − x̂_p‖²
pub fn loss_privacy_graph<T: Real>(
    tape: &mut Tape<T>,
    x_p: Var,
    x_p_hat: Var,
    w: &LossWeights,
) -> Result<Var> {
    let d = tape.sq_err(x_p, x_p_hat)?;
    Ok(tape.scale(d, T::from_f64(w.l5)))
}

fn constant_sig<T: Real>(tape: &mut Tape<T>, v: &[T]) -> Result<Var> {
    tape.constant(v.to_vec(), vec![v.len()])
}

/// Forward loss on plain signals.
pub fn loss_forward<T: Real>(
    z_c: &ChannelSignal<T>,
    z_h: &ChannelSignal<T>,
    l: &[T],
    l_hat: &[T],
    w: &LossWeights,
) -> Result<T> {
    let mut tape = Tape::new();
    let zc = constant_sig(&mut tape, z_c.values())?;
    let zh = constant_sig(&mut tape, z_h.values())?;
    let lv = constant_sig(&mut tape, l)?;
    let lh = constant_sig(&mut tape, l_hat)?;
    let v = loss_forward_graph(&mut tape, zc, zh, lv, lh, w)?;
    Ok(tape.value(v))
}

/// Backward loss on plain signals.
pub fn loss_backward<T: Real>(
    z_p: &ChannelSignal<T>,
    z_p_hat: &ChannelSignal<T>,
    z_h: &ChannelSignal<T>,
    z_h_hat: &ChannelSignal<T>,
    w: &LossWeights,
) -> Result<T> {
    let mut tape = Tape::new();
    let zp = constant_sig(&mut tape, z_p.values())?;
    let zph = constant_sig(&mut tape, z_p_hat.values())?;
    let zh = constant_sig(&mut tape, z_h.values())?;
    let zhh = constant_sig(&mut tape, z_h_hat.values())?;
    let v = loss_backward_graph(&mut tape, zp, zph, zh, zhh, w)?;
    Ok(tape.value(v))
}

/// Privacy loss on plain images.
pub fn loss_privacy<T: Real>(x_p: &Image<T>, x_p_hat: &Image<T>, w: &LossWeights) -> Result<T> {
    if x_p.shape() != x_p_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss_privacy",
            lhs: x_p.shape().to_vec(),
            rhs: x_p_hat.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let a = constant_sig(&mut tape, x_p.data())?;
    let b = constant_sig(&mut tape, x_p_hat.data())?;
    let v = loss_privacy_graph(&mut tape, a, b, w)?;
    Ok(tape.value(v))
}

// ── Codec pretraining ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct CodecTrainConfig {
    pub codec: CodecConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub snr_db_range: (f64, f64),
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub step: u64,
    pub epoch: usize,
    pub value: f64,
}

#[derive(Debug)]
pub struct CodecTrainOutput<T> {
    pub params: CodecParams<T>,
    pub steps: Vec<StepLoss>,
    pub epoch_mean: Vec<f64>,
}

/// Encode → noisy channel (SNR uniform per item) → decode → MSE → Adam.
pub fn train_codec<T: Real>(
    dataset: &Dataset<T>,
    cfg: &CodecTrainConfig,
) -> Result<CodecTrainOutput<T>> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut params = CodecParams::<T>::init(cfg.codec, cfg.seed)?;
    let mut adam_enc = AdamState::new(T::from_f64(cfg.learning_rate));
    let mut adam_dec = AdamState::new(T::from_f64(cfg.learning_rate));

    let n = dataset.len();
    let mut steps = Vec::new();
    let mut epoch_mean = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::new(cfg.seed, &[TAG_SHUFFLE, epoch as u64]).shuffle(&mut order);
        let mut epoch_sum = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let inv_batch = T::from_f64(1.0 / batch.len() as f64);
            let results: Vec<Result<(Vec<Vec<T>>, Vec<Vec<T>>, Vec<f64>)>> = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, chunk)| {
                    let mut enc_g: Vec<Vec<T>> = Vec::new();
                    let mut dec_g: Vec<Vec<T>> = Vec::new();
                    let mut losses = Vec::with_capacity(chunk.len());
                    for (j, &item) in chunk.iter().enumerate() {
                        let pos = (ci * CHUNK + j) as u64;
                        let (eg, dg, loss) = codec_item_pass(
                            &params,
                            &dataset.items[item],
                            cfg,
                            epoch as u64,
                            step,
                            pos,
                            inv_batch,
                        )?;
                        sum_grads(&mut enc_g, eg);
                        sum_grads(&mut dec_g, dg);
                        losses.push(loss);
                    }
                    Ok((enc_g, dec_g, losses))
                })
                .collect();

            let mut batch_sum = 0.0;
            for r in results {
                let (eg, dg, losses) = r.map_err(|e| match e {
                    // A degenerate or overflowing signal mid-training is a
                    // numeric failure, reported with the step it happened at.
                    Error::DegenerateSignal => Error::NonFiniteLoss { step },
                    other => other,
                })?;
                params.encoder.accumulate_grad_vecs(&eg);
                params.decoder.accumulate_grad_vecs(&dg);
                batch_sum += losses.iter().sum::<f64>();
            }
            let value = batch_sum / batch.len() as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            epoch_sum += batch_sum;
            steps.push(StepLoss {
                step,
                epoch,
                value,
            });
            adam_enc.step(&mut params.encoder)?;
            adam_dec.step(&mut params.decoder)?;
            step += 1;
        }
        epoch_mean.push(epoch_sum / n as f64);
    }
    Ok(CodecTrainOutput {
        params,
        steps,
        epoch_mean,
    })
}

fn codec_item_pass<T: Real>(
    params: &CodecParams<T>,
    image: &Image<T>,
    cfg: &CodecTrainConfig,
    epoch: u64,
    step: u64,
    pos: u64,
    inv_batch: T,
) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>, f64)> {
    let mut tape = Tape::new();
    let att_e = params.encoder.attach(&mut tape, true);
    let att_d = params.decoder.attach(&mut tape, true);
    let x = tape.constant(image.data().to_vec(), image.shape().to_vec())?;
    let z = params.encode_graph(&mut tape, &att_e, x)?;

    let snr = RngStream::new(cfg.seed, &[TAG_SNR, epoch, step, pos])
        .uniform_range(cfg.snr_db_range.0, cfg.snr_db_range.1);
    let chan_seed = RngStream::new(cfg.seed, &[TAG_NOISE, epoch, step, pos]).next_u64();
    let noise = sample_noise::<T>(2 * params.cfg.k, &ChannelConfig::new(snr, chan_seed, Link::Main));
    let nv = tape.constant(noise, vec![2 * params.cfg.k])?;
    let z_hat = tape.add(z, nv)?;

    let x_hat = params.decode_graph(&mut tape, &att_d, z_hat)?;
    let x_flat = tape.reshape(x, vec![image.bandwidth()])?;
    let y_flat = tape.reshape(x_hat, vec![image.bandwidth()])?;
    let mse = tape.mse(y_flat, x_flat)?;
    let scaled = tape.scale(mse, inv_batch);
    tape.backward(scaled)?;
    Ok((
        att_e.grads_from(&tape),
        att_d.grads_from(&tape),
        tape.value(mse).as_f64(),
    ))
}

/// Elementwise-add a gradient buffer collection into an accumulator.
fn sum_grads<T: Real>(acc: &mut Vec<Vec<T>>, add: Vec<Vec<T>>) {
    if acc.is_empty() {
        *acc = add;
        return;
    }
    for (a, b) in acc.iter_mut().zip(add) {
        if a.is_empty() {
            *a = b;
        } else if !b.is_empty() {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += *y;
            }
        }
    }
}

// ── Stego training ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct StegoTrainConfig {
    pub inn: InnConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub snr_db_range: (f64, f64),
    pub seed: u64,
    pub weights: LossWeights,
    pub lhat_mode: LhatMode,
    /// Capture every item's signals per step (verification only; heavy).
    pub capture_steps: bool,
}

/// Signals of one training item, captured for loss verification.
#[derive(Debug, Clone)]
pub struct ItemCapture<T> {
    pub z_h: Vec<T>,
    pub z_p: Vec<T>,
    pub z_c: Vec<T>,
    pub lost: Vec<T>,
    pub l_hat: Vec<T>,
    pub z_h_hat: Vec<T>,
    pub z_p_hat: Vec<T>,
    pub x_p: Vec<T>,
    pub x_p_hat: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct StegoStepLog<T> {
    pub step: u64,
    pub epoch: usize,
    pub report: LossReport,
    pub captures: Vec<ItemCapture<T>>,
}

#[derive(Debug)]
pub struct StegoTrainOutput<T> {
    pub inn: InnParams<T>,
    pub steps: Vec<StegoStepLog<T>>,
    pub epoch_mean_total: Vec<f64>,
    /// Set when training stopped on a non-finite loss; `inn` is then the last
    /// epoch-end snapshot.
    pub aborted_at: Option<u64>,
}

/// Freeze the codec, train the coupling chain through the noisy channel.
pub fn train_stego<T: Real>(
    dataset: &Dataset<T>,
    codec: &CodecParams<T>,
    cfg: &StegoTrainConfig,
) -> Result<StegoTrainOutput<T>> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    cfg.weights.validate()?;
    if cfg.inn.k != codec.cfg.k {
        return Err(Error::Config(format!(
            "inn k = {} does not match codec k = {}",
            cfg.inn.k, codec.cfg.k
        )));
    }
    let mut inn = InnParams::<T>::init(cfg.inn, cfg.seed)?;
    let mut adam = AdamState::new(T::from_f64(cfg.learning_rate));
    let mut last_good = inn.clone();

    let n = dataset.len();
    let mut steps = Vec::new();
    let mut epoch_mean_total = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        // Random host/private pairing, reshuffled each epoch.
        let mut hosts: Vec<usize> = (0..n).collect();
        let mut privates: Vec<usize> = (0..n).collect();
        let mut rng = RngStream::new(cfg.seed, &[TAG_PAIR, epoch as u64]);
        rng.shuffle(&mut hosts);
        rng.shuffle(&mut privates);
        for i in 0..n {
            if hosts[i] == privates[i] {
                privates.swap(i, (i + 1) % n);
            }
        }
        let pairs: Vec<(usize, usize)> = hosts.into_iter().zip(privates).collect();
        let mut epoch_sum = 0.0;
        let mut aborted = None;

        for batch in pairs.chunks(cfg.batch_size) {
            let inv_batch = T::from_f64(1.0 / batch.len() as f64);
            let results: Vec<Result<(Vec<Vec<T>>, Vec<(f64, f64, f64)>, Vec<ItemCapture<T>>)>> =
                batch
                    .par_chunks(CHUNK)
                    .enumerate()
                    .map(|(ci, chunk)| {
                        let mut inn_g: Vec<Vec<T>> = Vec::new();
                        let mut terms = Vec::with_capacity(chunk.len());
                        let mut caps = Vec::new();
                        for (j, &(hi, pi)) in chunk.iter().enumerate() {
                            let pos = (ci * CHUNK + j) as u64;
                            let (g, t, cap) = stego_item_pass(
                                &inn,
                                codec,
                                &dataset.items[hi],
                                &dataset.items[pi],
                                cfg,
                                epoch as u64,
                                step,
                                pos,
                                inv_batch,
                            )?;
                            sum_grads(&mut inn_g, g);
                            terms.push(t);
                            if let Some(c) = cap {
                                caps.push(c);
                            }
                        }
                        Ok((inn_g, terms, caps))
                    })
                    .collect();

            let mut fwd_sum = 0.0;
            let mut bwd_sum = 0.0;
            let mut priv_sum = 0.0;
            let mut captures = Vec::new();
            let mut failed = false;
            for r in results {
                match r {
                    Ok((g, terms, caps)) => {
                        inn.params.accumulate_grad_vecs(&g);
                        for (f, b, p) in terms {
                            fwd_sum += f;
                            bwd_sum += b;
                            priv_sum += p;
                        }
                        captures.extend(caps);
                    }
                    Err(Error::NonFiniteBlock { .. }) | Err(Error::NonFiniteLoss { .. }) => {
                        failed = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            let b = batch.len() as f64;
            let report = LossReport::new(fwd_sum / b, bwd_sum / b, priv_sum / b);
            if failed || !report.total.is_finite() {
                aborted = Some(step);
                break;
            }
            epoch_sum += report.total * b;
            steps.push(StegoStepLog {
                step,
                epoch,
                report,
                captures,
            });
            adam.step(&mut inn.params)?;
            step += 1;
        }

        if let Some(at) = aborted {
            return Ok(StegoTrainOutput {
                inn: last_good,
                steps,
                epoch_mean_total,
                aborted_at: Some(at),
            });
        }
        epoch_mean_total.push(epoch_sum / n as f64);
        last_good = inn.clone();
    }
    Ok(StegoTrainOutput {
        inn,
        steps,
        epoch_mean_total,
        aborted_at: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn stego_item_pass<T: Real>(
    inn: &InnParams<T>,
    codec: &CodecParams<T>,
    host: &Image<T>,
    private: &Image<T>,
    cfg: &StegoTrainConfig,
    epoch: u64,
    step: u64,
    pos: u64,
    inv_batch: T,
) -> Result<(Vec<Vec<T>>, (f64, f64, f64), Option<ItemCapture<T>>)> {
    let sig_len = inn.cfg.signal_len();
    let mut tape = Tape::new();
    let att_enc = codec.encoder.attach(&mut tape, false);
    let att_dec = codec.decoder.attach(&mut tape, false);
    let att_inn = inn.params.attach(&mut tape, true);

    let x_h = tape.constant(host.data().to_vec(), host.shape().to_vec())?;
    let x_p = tape.constant(private.data().to_vec(), private.shape().to_vec())?;
    let z_h = codec.encode_graph(&mut tape, &att_enc, x_h)?;
    let z_p = codec.encode_graph(&mut tape, &att_enc, x_p)?;

    let (z_c, lost) = inn.embed_graph(&mut tape, &att_inn, z_h, z_p)?;

    let snr = RngStream::new(cfg.seed, &[TAG_SNR, epoch, step, pos])
        .uniform_range(cfg.snr_db_range.0, cfg.snr_db_range.1);
    let chan_seed = RngStream::new(cfg.seed, &[TAG_NOISE, epoch, step, pos]).next_u64();
    let noise = sample_noise::<T>(sig_len, &ChannelConfig::new(snr, chan_seed, Link::Main));
    let nv = tape.constant(noise, vec![sig_len])?;
    let z_c_hat = tape.add(z_c, nv)?;

    let lhat_mode = match cfg.lhat_mode {
        LhatMode::Constant => LhatMode::Constant,
        LhatMode::Sampled { .. } => LhatMode::Sampled {
            seed: RngStream::new(cfg.seed, &[TAG_LHAT, epoch, step, pos]).next_u64(),
        },
    };
    let l_hat = make_lhat::<T>(lhat_mode, sig_len);
    let l_hat_v = tape.constant(l_hat.values.clone(), vec![sig_len])?;

    let (z_h_hat, z_p_hat) = inn.extract_graph(&mut tape, &att_inn, z_c_hat, l_hat_v)?;
    let x_p_hat = codec.decode_graph(&mut tape, &att_dec, z_p_hat)?;
    let x_p_flat = tape.reshape(x_p, vec![private.bandwidth()])?;
    let x_p_hat_flat = tape.reshape(x_p_hat, vec![private.bandwidth()])?;

    let fwd = loss_forward_graph(&mut tape, z_c, z_h, lost, l_hat_v, &cfg.weights)?;
    let bwd = loss_backward_graph(&mut tape, z_p, z_p_hat, z_h, z_h_hat, &cfg.weights)?;
    let prv = loss_privacy_graph(&mut tape, x_p_flat, x_p_hat_flat, &cfg.weights)?;
    let total = tape.add(fwd, bwd)?;
    let total = tape.add(total, prv)?;
    if !tape.value(total).is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let scaled = tape.scale(total, inv_batch);
    tape.backward(scaled)?;

    let capture = cfg.capture_steps.then(|| ItemCapture {
        z_h: tape.data(z_h).to_vec(),
        z_p: tape.data(z_p).to_vec(),
        z_c: tape.data(z_c).to_vec(),
        lost: tape.data(lost).to_vec(),
        l_hat: l_hat.values,
        z_h_hat: tape.data(z_h_hat).to_vec(),
        z_p_hat: tape.data(z_p_hat).to_vec(),
        x_p: private.data().to_vec(),
        x_p_hat: tape.data(x_p_hat).to_vec(),
    });

    Ok((
        att_inn.grads_from(&tape),
        (
            tape.value(fwd).as_f64(),
            tape.value(bwd).as_f64(),
            tape.value(prv).as_f64(),
        ),
        capture,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, Split};

    fn signal_of<T: Real>(vals: Vec<T>) -> ChannelSignal<T> {
        ChannelSignal::new(vals).unwrap()
    }

    /// Independent scalar-loop recomputation used as the oracle in these
    /// tests.
    fn scalar_sq_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn forward_loss_zero_when_perfect() {
        let z = signal_of(vec![0.5f64, -0.25, 1.0, 0.75]);
        let l = vec![0.1, 0.2, 0.3, 0.4];
        let w = LossWeights::default();
        let v = loss_forward(&z, &z, &l, &l, &w).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn forward_loss_matches_scalar_loop() {
        let mut rng = RngStream::new(1, &[2]);
        let zc: Vec<f64> = rng.normal_vec(32, 1.0);
        let zh: Vec<f64> = rng.normal_vec(32, 1.0);
        let l: Vec<f64> = rng.normal_vec(32, 1.0);
        let lh: Vec<f64> = rng.normal_vec(32, 1.0);
        let w = LossWeights::default();
        let v = loss_forward(
            &signal_of(zc.clone()),
            &signal_of(zh.clone()),
            &l,
            &lh,
            &w,
        )
        .unwrap();
        let oracle = w.l1 * scalar_sq_err(&zc, &zh) + w.l2 * scalar_sq_err(&l, &lh);
        assert!((v - oracle).abs() / oracle.abs() < 1e-12);
    }

    #[test]
    fn backward_loss_is_linear_in_lambda3() {
        let mut rng = RngStream::new(3, &[4]);
        let zp: Vec<f64> = rng.normal_vec(16, 1.0);
        let zph: Vec<f64> = rng.normal_vec(16, 1.0);
        let zh: Vec<f64> = rng.normal_vec(16, 1.0);
        let zhh: Vec<f64> = rng.normal_vec(16, 1.0);
        let w1 = LossWeights {
            l4: 0.0,
            ..Default::default()
        };
        let w2 = LossWeights {
            l3: 2.0 * w1.l3,
            l4: 0.0,
            ..Default::default()
        };
        let a = loss_backward(
            &signal_of(zp.clone()),
            &signal_of(zph.clone()),
            &signal_of(zh.clone()),
            &signal_of(zhh.clone()),
            &w1,
        )
        .unwrap();
        let b = loss_backward(
            &signal_of(zp),
            &signal_of(zph),
            &signal_of(zh),
            &signal_of(zhh),
            &w2,
        )
        .unwrap();
        assert!((b - 2.0 * a).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn backward_loss_matches_scalar_loop() {
        let mut rng = RngStream::new(5, &[6]);
        let zp: Vec<f64> = rng.normal_vec(16, 1.0);
        let zph: Vec<f64> = rng.normal_vec(16, 1.0);
        let zh: Vec<f64> = rng.normal_vec(16, 1.0);
        let zhh: Vec<f64> = rng.normal_vec(16, 1.0);
        let w = LossWeights::default();
        let v = loss_backward(
            &signal_of(zp.clone()),
            &signal_of(zph.clone()),
            &signal_of(zh.clone()),
            &signal_of(zhh.clone()),
            &w,
        )
        .unwrap();
        let oracle = w.l3 * scalar_sq_err(&zp, &zph) + w.l4 * scalar_sq_err(&zh, &zhh);
        assert!((v - oracle).abs() / oracle < 1e-12);
    }

    #[test]
    fn privacy_loss_constant_offset() {
        // x̂ = x + 0.1 everywhere, λ5 = 1, N elements → 0.01·N.
        let n = 3 * 16 * 16;
        let x = Image::<f64>::new(3, 16, 16, vec![0.4; n]).unwrap();
        let mut xh = x.clone();
        xh.data_mut().iter_mut().for_each(|v| *v += 0.1);
        let w = LossWeights {
            l5: 1.0,
            ..Default::default()
        };
        let v = loss_privacy(&x, &xh, &w).unwrap();
        assert!((v - 0.01 * n as f64).abs() < 1e-9);
    }

    #[test]
    fn privacy_loss_zero_for_identical_images() {
        let x = Image::<f32>::new(3, 16, 16, vec![0.5; 3 * 256]).unwrap();
        let w = LossWeights::default();
        assert_eq!(loss_privacy(&x, &x, &w).unwrap(), 0.0);
    }

    #[test]
    fn privacy_loss_matches_scalar_loop() {
        let mut rng = RngStream::new(7, &[8]);
        let a: Vec<f64> = (0..3 * 256).map(|_| rng.uniform_f64()).collect();
        let b: Vec<f64> = (0..3 * 256).map(|_| rng.uniform_f64()).collect();
        let xa = Image::new(3, 16, 16, a.clone()).unwrap();
        let xb = Image::new(3, 16, 16, b.clone()).unwrap();
        let w = LossWeights::default();
        let v = loss_privacy(&xa, &xb, &w).unwrap();
        let oracle = w.l5 * scalar_sq_err(&a, &b);
        assert!((v - oracle).abs() / oracle < 1e-12);
    }

    #[test]
    fn report_total_identity_is_exact() {
        let r = LossReport::new(0.1 + 0.2, 7.7e-3, 123.456);
        assert_eq!(r.total, (r.forward + r.backward) + r.privacy);
    }

    fn tiny_codec_cfg(seed: u64) -> CodecTrainConfig {
        CodecTrainConfig {
            codec: CodecConfig::from_bcr(3, 16, 16, 1, 12).unwrap(),
            epochs: 1,
            batch_size: 8,
            learning_rate: 3e-4,
            snr_db_range: (0.0, 20.0),
            seed,
        }
    }

    #[test]
    fn codec_training_is_deterministic() {
        let ds = synth_dataset::<f32>(16, 16, 11, Split::Train).unwrap();
        let cfg = tiny_codec_cfg(5);
        let a = train_codec(&ds, &cfg).unwrap();
        let b = train_codec(&ds, &cfg).unwrap();
        assert_eq!(
            a.params.encoder.checksum(),
            b.params.encoder.checksum()
        );
        assert_eq!(
            a.params.decoder.checksum(),
            b.params.decoder.checksum()
        );
        assert_eq!(a.steps.len(), b.steps.len());
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn stego_training_freezes_codec_and_is_deterministic() {
        let ds = synth_dataset::<f32>(12, 16, 21, Split::Train).unwrap();
        let codec_out = train_codec(&ds, &tiny_codec_cfg(6)).unwrap();
        let codec = codec_out.params;
        let enc_sum = codec.encoder.checksum();
        let dec_sum = codec.decoder.checksum();

        let cfg = StegoTrainConfig {
            inn: InnConfig::new(codec.cfg.k, 2, 8).unwrap(),
            epochs: 1,
            batch_size: 6,
            learning_rate: 3e-4,
            snr_db_range: (0.0, 20.0),
            seed: 7,
            weights: LossWeights::default(),
            lhat_mode: LhatMode::Constant,
            capture_steps: false,
        };
        let a = train_stego(&ds, &codec, &cfg).unwrap();
        assert_eq!(codec.encoder.checksum(), enc_sum);
        assert_eq!(codec.decoder.checksum(), dec_sum);
        assert!(a.aborted_at.is_none());

        let b = train_stego(&ds, &codec, &cfg).unwrap();
        assert_eq!(a.inn.params.checksum(), b.inn.params.checksum());
    }

    #[test]
    fn stego_report_identity_holds_per_step() {
        let ds = synth_dataset::<f32>(8, 16, 31, Split::Train).unwrap();
        let codec = CodecParams::<f32>::init(CodecConfig::from_bcr(3, 16, 16, 1, 12).unwrap(), 9)
            .unwrap();
        let cfg = StegoTrainConfig {
            inn: InnConfig::new(codec.cfg.k, 2, 8).unwrap(),
            epochs: 1,
            batch_size: 4,
            learning_rate: 3e-4,
            snr_db_range: (0.0, 20.0),
            seed: 8,
            weights: LossWeights::default(),
            lhat_mode: LhatMode::Constant,
            capture_steps: false,
        };
        let out = train_stego(&ds, &codec, &cfg).unwrap();
        assert!(!out.steps.is_empty());
        for s in &out.steps {
            assert_eq!(
                s.report.total,
                (s.report.forward + s.report.backward) + s.report.privacy
            );
            assert!(s.report.forward >= 0.0);
            assert!(s.report.backward >= 0.0);
            assert!(s.report.privacy >= 0.0);
        }
    }

    #[test]
    fn mismatched_inn_and_codec_rejected() {
        let ds = synth_dataset::<f32>(4, 16, 41, Split::Train).unwrap();
        let codec = CodecParams::<f32>::init(CodecConfig::from_bcr(3, 16, 16, 1, 12).unwrap(), 9)
            .unwrap();
        let cfg = StegoTrainConfig {
            inn: InnConfig::new(codec.cfg.k * 2, 2, 8).unwrap(),
            epochs: 1,
            batch_size: 4,
            learning_rate: 3e-4,
            snr_db_range: (0.0, 20.0),
            seed: 8,
            weights: LossWeights::default(),
            lhat_mode: LhatMode::Constant,
            capture_steps: false,
        };
        assert!(matches!(
            train_stego(&ds, &codec, &cfg),
            Err(Error::Config(_))
        ));
    }
}
