//! Secure semantic image transmission simulator.
//!
//! An image codec maps images straight to power-normalized complex channel
//! symbols (joint source-channel coding); an invertible coupling network
//! hides a private image's channel signal inside a host image's signal before
//! transmission over an AWGN link; the receiver runs the exact inverse to
//! recover both signals, while an eavesdropper applying the same decoder (or
//! a model inversion attack) recovers essentially only the host image.
//!
//! The crate is organized around a small reverse-mode autodiff engine
//! ([`tensor`]) that every other module computes on:
//!
//! - [`codec`]: semantic encoder/decoder between images and channel signals
//! - [`channel`]: complex AWGN links parameterized by SNR in dB
//! - [`stego`]: the invertible signal-steganography module
//! - [`adversary`]: eavesdropper attacks (naive decoding, model inversion)
//! - [`training`]: loss functions and the two training procedures
//! - [`metrics`]: PSNR, SSIM, MS-SSIM
//! - [`data`]: images on disk, synthetic datasets, checkpoints

pub mod adversary;
pub mod channel;
pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod rng;
pub mod stego;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
