//! Image quality metrics: PSNR, single-scale SSIM, and MS-SSIM.
//!
//! SSIM uses the standard 11x11 Gaussian window (σ = 1.5), K1 = 0.01,
//! K2 = 0.03, dynamic range 1, computed per channel over valid window
//! positions and averaged. MS-SSIM uses the canonical five scale weights; on
//! small images the number of scales shrinks to the largest S with
//! min(H, W) / 2^(S-1) ≥ 11 and the weights are renormalized to sum to 1.

use crate::codec::Image;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// PSNR cap standing in for +∞ when images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

const WINDOW: usize = 11;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

/// Canonical MS-SSIM scale weights.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricName {
    Psnr,
    Ssim,
    MsSsim,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Psnr => "psnr",
            MetricName::Ssim => "ssim",
            MetricName::MsSsim => "ms_ssim",
        }
    }
}

/// One scored image pair.
#[derive(Debug, Clone, Copy)]
pub struct MetricResult {
    pub name: MetricName,
    pub value: f64,
    pub pair: u32,
}

fn check_same_shape<T: Real>(op: &'static str, a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with MAX = 1, capped at
/// [`PSNR_CAP_DB`] as MSE → 0.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_same_shape("psnr", a, b)?;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.bandwidth() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; WINDOW * WINDOW] {
    let sigma = 1.5f64;
    let mut w = [0.0; WINDOW * WINDOW];
    let mut sum = 0.0;
    for i in 0..WINDOW {
        for j in 0..WINDOW {
            let di = i as f64 - 5.0;
            let dj = j as f64 - 5.0;
            let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            w[i * WINDOW + j] = v;
            sum += v;
        }
    }
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Mean SSIM and mean contrast-structure term over all valid window
/// positions of all channels.
fn ssim_and_cs(a: &[Vec<f64>], b: &[Vec<f64>], h: usize, w: usize) -> (f64, f64) {
    let win = gaussian_window();
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.iter().zip(b) {
        for y0 in 0..=(h - WINDOW) {
            for x0 in 0..=(w - WINDOW) {
                let (mut m1, mut m2, mut q1, mut q2, mut q12) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..WINDOW {
                    let row = (y0 + dy) * w + x0;
                    for dx in 0..WINDOW {
                        let wv = win[dy * WINDOW + dx];
                        let xa = pa[row + dx];
                        let xb = pb[row + dx];
                        m1 += wv * xa;
                        m2 += wv * xb;
                        q1 += wv * xa * xa;
                        q2 += wv * xb * xb;
                        q12 += wv * xa * xb;
                    }
                }
                let v1 = q1 - m1 * m1;
                let v2 = q2 - m2 * m2;
                let cov = q12 - m1 * m2;
                let lum = (2.0 * m1 * m2 + C1) / (m1 * m1 + m2 * m2 + C1);
                let cs = (2.0 * cov + C2) / (v1 + v2 + C2);
                ssim_sum += lum * cs;
                cs_sum += cs;
                count += 1;
            }
        }
    }
    (ssim_sum / count as f64, cs_sum / count as f64)
}

fn planes<T: Real>(img: &Image<T>) -> Vec<Vec<f64>> {
    let hw = img.height() * img.width();
    (0..img.channels())
        .map(|c| img.data()[c * hw..(c + 1) * hw].iter().map(|v| v.as_f64()).collect())
        .collect()
}

/// 2x2 average-pool downsampling (floor dims).
fn downsample(planes: &[Vec<f64>], h: usize, w: usize) -> (Vec<Vec<f64>>, usize, usize) {
    let nh = h / 2;
    let nw = w / 2;
    let out = planes
        .iter()
        .map(|p| {
            let mut q = vec![0.0; nh * nw];
            for y in 0..nh {
                for x in 0..nw {
                    let i = 2 * y * w + 2 * x;
                    q[y * nw + x] = 0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]);
                }
            }
            q
        })
        .collect();
    (out, nh, nw)
}

/// Single-scale structural similarity.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_same_shape("ssim", a, b)?;
    if a.height() < WINDOW || a.width() < WINDOW {
        return Err(Error::ImageTooSmall {
            metric: "ssim",
            height: a.height(),
            width: a.width(),
        });
    }
    let (s, _) = ssim_and_cs(&planes(a), &planes(b), a.height(), a.width());
    Ok(s)
}

/// Number of MS-SSIM scales usable on an HxW image: the largest S ≤ 5 with
/// min(H, W) / 2^(S-1) ≥ 11.
pub fn ms_ssim_scales(height: usize, width: usize) -> usize {
    let mut s = 0usize;
    let mut dim = height.min(width);
    while s < 5 && dim >= WINDOW {
        s += 1;
        dim /= 2;
    }
    s
}

/// Multi-scale structural similarity with scale-adapted, renormalized
/// canonical weights.
pub fn ms_ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_same_shape("ms_ssim", a, b)?;
    let scales = ms_ssim_scales(a.height(), a.width());
    if scales == 0 {
        return Err(Error::ImageTooSmall {
            metric: "ms_ssim",
            height: a.height(),
            width: a.width(),
        });
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / wsum).collect();

    let (mut pa, mut pb) = (planes(a), planes(b));
    let (mut h, mut w) = (a.height(), a.width());
    let mut result = 1.0;
    for (j, &weight) in weights.iter().enumerate() {
        let (s, cs) = ssim_and_cs(&pa, &pb, h, w);
        // Last scale contributes full SSIM, earlier scales contrast-structure
        // only. Negative factors are clamped at 0 before the fractional power.
        let factor = if j + 1 == weights.len() { s } else { cs };
        result *= factor.max(0.0).powf(weight);
        if j + 1 < weights.len() {
            let (npa, nh, nw) = downsample(&pa, h, w);
            let (npb, ..) = downsample(&pb, h, w);
            pa = npa;
            pb = npb;
            h = nh;
            w = nw;
        }
    }
    Ok(result)
}
