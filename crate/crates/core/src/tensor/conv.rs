//! 2-D convolution kernels (forward and the three backward passes).
//!
//! Layout is `[C, H, W]` row-major for activations, `[OC, IC, KH, KW]` for
//! convolution weights and `[IC, OC, KH, KW]` for transposed-convolution
//! weights.
//!
//! All paths lower to im2col plus an axpy-style GEMM whose inner loops run
//! over the contiguous spatial dimension, which the compiler vectorizes.
//! Transposed convolution is evaluated as the adjoint of its mirror
//! convolution, so the three kernels below cover every case. Loop order is
//! fixed, so results are bit-reproducible run to run.

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvSpec {
    pub fn conv(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: vec![in_c, in_h, in_w],
                rhs: vec![out_c, in_c, kh, kw],
            });
        }
        let out_h = (in_h + 2 * pad - kh) / stride + 1;
        let out_w = (in_w + 2 * pad - kw) / stride + 1;
        Ok(ConvSpec {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn transposed(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0
            || (in_h - 1) * stride + kh < 2 * pad + 1
            || (in_w - 1) * stride + kw < 2 * pad + 1
        {
            return Err(Error::ShapeMismatch {
                op: "conv2d_transpose",
                lhs: vec![in_c, in_h, in_w],
                rhs: vec![in_c, out_c, kh, kw],
            });
        }
        let out_h = (in_h - 1) * stride + kh - 2 * pad;
        let out_w = (in_w - 1) * stride + kw - 2 * pad;
        Ok(ConvSpec {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    /// The ordinary convolution this transposed convolution is the adjoint
    /// of: maps `[out_c, out_h, out_w]` back to `[in_c, in_h, in_w]`.
    fn mirror(&self) -> ConvSpec {
        ConvSpec {
            in_c: self.out_c,
            in_h: self.out_h,
            in_w: self.out_w,
            out_c: self.in_c,
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
            out_h: self.in_h,
            out_w: self.in_w,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output positions `o` with `0 <= o*stride + k - pad < limit`, clipped to
/// `0..count`. Returns `None` when empty.
fn valid_range(
    k: usize,
    pad: usize,
    stride: usize,
    limit: usize,
    count: usize,
) -> Option<(usize, usize)> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if limit + pad <= k {
        return None;
    }
    let hi = ((limit - 1 + pad - k) / stride).min(count.saturating_sub(1));
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// `dst += c * src`
#[inline]
fn axpy<T: Real>(dst: &mut [T], src: &[T], c: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Dot product with four independent accumulators. Fixed summation order.
pub(crate) fn dot4<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = T::zero();
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// Patch matrix `[in_c*kh*kw, out_h*out_w]`: row p holds the input value
/// each output position sees through kernel tap p (zeros where padding).
fn im2col<T: Real>(x: &[T], s: &ConvSpec) -> Vec<T> {
    let ohw = s.out_hw();
    let mut cols = vec![T::zero(); s.patch_len() * ohw];
    for ic in 0..s.in_c {
        let plane = &x[ic * s.in_h * s.in_w..(ic + 1) * s.in_h * s.in_w];
        for kh in 0..s.kh {
            let Some((oh_lo, oh_hi)) = valid_range(kh, s.pad, s.stride, s.in_h, s.out_h) else {
                continue;
            };
            for kw in 0..s.kw {
                let Some((ow_lo, ow_hi)) = valid_range(kw, s.pad, s.stride, s.in_w, s.out_w)
                else {
                    continue;
                };
                let p = (ic * s.kh + kh) * s.kw + kw;
                let row = &mut cols[p * ohw..(p + 1) * ohw];
                for oh in oh_lo..=oh_hi {
                    let ih = oh * s.stride + kh - s.pad;
                    let x_row = &plane[ih * s.in_w..(ih + 1) * s.in_w];
                    let dst = &mut row[oh * s.out_w + ow_lo..=oh * s.out_w + ow_hi];
                    if s.stride == 1 {
                        let off = ow_lo + kw - s.pad;
                        dst.copy_from_slice(&x_row[off..off + dst.len()]);
                    } else {
                        for (d, ow) in dst.iter_mut().zip(ow_lo..) {
                            *d = x_row[ow * s.stride + kw - s.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch rows back into an input-shaped
/// buffer.
fn col2im<T: Real>(cols: &[T], s: &ConvSpec, dx: &mut [T]) {
    let ohw = s.out_hw();
    for ic in 0..s.in_c {
        let plane = &mut dx[ic * s.in_h * s.in_w..(ic + 1) * s.in_h * s.in_w];
        for kh in 0..s.kh {
            let Some((oh_lo, oh_hi)) = valid_range(kh, s.pad, s.stride, s.in_h, s.out_h) else {
                continue;
            };
            for kw in 0..s.kw {
                let Some((ow_lo, ow_hi)) = valid_range(kw, s.pad, s.stride, s.in_w, s.out_w)
                else {
                    continue;
                };
                let p = (ic * s.kh + kh) * s.kw + kw;
                let row = &cols[p * ohw..(p + 1) * ohw];
                for oh in oh_lo..=oh_hi {
                    let ih = oh * s.stride + kh - s.pad;
                    let x_row = &mut plane[ih * s.in_w..(ih + 1) * s.in_w];
                    let src = &row[oh * s.out_w + ow_lo..=oh * s.out_w + ow_hi];
                    if s.stride == 1 {
                        let off = ow_lo + kw - s.pad;
                        axpy(&mut x_row[off..off + src.len()], src, T::one());
                    } else {
                        for (&v, ow) in src.iter().zip(ow_lo..) {
                            x_row[ow * s.stride + kw - s.pad] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward_into<T: Real>(x: &[T], w: &[T], s: &ConvSpec, out: &mut [T]) {
    let cols = im2col(x, s);
    let ohw = s.out_hw();
    let plen = s.patch_len();
    for oc in 0..s.out_c {
        let out_row = &mut out[oc * ohw..(oc + 1) * ohw];
        let w_row = &w[oc * plen..(oc + 1) * plen];
        for (p, &wv) in w_row.iter().enumerate() {
            if wv != T::zero() {
                axpy(out_row, &cols[p * ohw..(p + 1) * ohw], wv);
            }
        }
    }
}

fn conv_backward_input_into<T: Real>(gy: &[T], w: &[T], s: &ConvSpec, dx: &mut [T]) {
    let ohw = s.out_hw();
    let plen = s.patch_len();
    let mut cols = vec![T::zero(); plen * ohw];
    for oc in 0..s.out_c {
        let gy_row = &gy[oc * ohw..(oc + 1) * ohw];
        let w_row = &w[oc * plen..(oc + 1) * plen];
        for (p, &wv) in w_row.iter().enumerate() {
            if wv != T::zero() {
                axpy(&mut cols[p * ohw..(p + 1) * ohw], gy_row, wv);
            }
        }
    }
    col2im(&cols, s, dx);
}

fn conv_backward_weights_into<T: Real>(x: &[T], gy: &[T], s: &ConvSpec, dw: &mut [T]) {
    let ohw = s.out_hw();
    let plen = s.patch_len();
    let cols = im2col(x, s);
    // Transposed patch matrix, so the accumulation axpy runs over the
    // contiguous patch dimension.
    let mut cols_t = vec![T::zero(); ohw * plen];
    for p in 0..plen {
        for j in 0..ohw {
            cols_t[j * plen + p] = cols[p * ohw + j];
        }
    }
    for oc in 0..s.out_c {
        let gy_row = &gy[oc * ohw..(oc + 1) * ohw];
        let dw_row = &mut dw[oc * plen..(oc + 1) * plen];
        for (j, &gv) in gy_row.iter().enumerate() {
            if gv != T::zero() {
                axpy(dw_row, &cols_t[j * plen..(j + 1) * plen], gv);
            }
        }
    }
}

// ── Convolution ────────────────────────────────────────────────────────

pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, s: &ConvSpec) -> Vec<T> {
    let mut out = vec![T::zero(); s.out_c * s.out_hw()];
    conv_forward_into(x, w, s, &mut out);
    if let Some(b) = bias {
        for oc in 0..s.out_c {
            let bv = b[oc];
            out[oc * s.out_hw()..(oc + 1) * s.out_hw()]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
    out
}

/// Accumulates the gradient w.r.t. the convolution input into `dx`.
pub fn conv2d_backward_input<T: Real>(gy: &[T], w: &[T], s: &ConvSpec, dx: &mut [T]) {
    conv_backward_input_into(gy, w, s, dx);
}

/// Accumulates the gradient w.r.t. the convolution weights into `dw`.
pub fn conv2d_backward_weights<T: Real>(x: &[T], gy: &[T], s: &ConvSpec, dw: &mut [T]) {
    conv_backward_weights_into(x, gy, s, dw);
}

pub fn conv2d_backward_bias<T: Real>(gy: &[T], s: &ConvSpec, db: &mut [T]) {
    for oc in 0..s.out_c {
        let plane = &gy[oc * s.out_hw()..(oc + 1) * s.out_hw()];
        let mut acc = T::zero();
        for &g in plane {
            acc += g;
        }
        db[oc] += acc;
    }
}

// ── Transposed convolution (adjoint of the mirror convolution) ─────────

pub fn convt2d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, s: &ConvSpec) -> Vec<T> {
    let m = s.mirror();
    let mut out = vec![T::zero(); s.out_c * s.out_hw()];
    conv_backward_input_into(x, w, &m, &mut out);
    if let Some(b) = bias {
        for oc in 0..s.out_c {
            let bv = b[oc];
            out[oc * s.out_hw()..(oc + 1) * s.out_hw()]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
    out
}

pub fn convt2d_backward_input<T: Real>(gy: &[T], w: &[T], s: &ConvSpec, dx: &mut [T]) {
    conv_forward_into(gy, w, &s.mirror(), dx);
}

pub fn convt2d_backward_weights<T: Real>(x: &[T], gy: &[T], s: &ConvSpec, dw: &mut [T]) {
    conv_backward_weights_into(gy, x, &s.mirror(), dw);
}
