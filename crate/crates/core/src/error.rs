//! Crate-wide error type.

use std::path::PathBuf;

use crate::data::checkpoint::Dtype;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar {
        op: &'static str,
        shape: Vec<usize>,
    },

    #[error("parameter `{name}`: gradient not populated")]
    MissingGrad { name: String },

    #[error("parameter set: duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("power_normalize: input signal has zero energy")]
    DegenerateSignal,

    #[error("invertible block {block}: non-finite value during {pass} pass")]
    NonFiniteBlock { block: usize, pass: &'static str },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("{metric}: image {height}x{width} smaller than the 11x11 window")]
    ImageTooSmall {
        metric: &'static str,
        height: usize,
        width: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: unsupported image format (binary PPM or PNG expected)")]
    UnsupportedFormat { path: PathBuf },

    #[error("{path}: malformed image: {detail}")]
    MalformedImage { path: PathBuf, detail: String },

    #[error("checkpoint: bad magic (not a SJSC checkpoint)")]
    BadMagic,

    #[error("checkpoint: unsupported format version {0}")]
    UnknownVersion(u32),

    #[error("checkpoint: CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("checkpoint: duplicate tensor name `{0}`")]
    DuplicateTensor(String),

    #[error("checkpoint: truncated or trailing bytes")]
    Truncated,

    #[error("checkpoint: tensor `{name}` has dtype {stored:?}, expected {requested:?}")]
    DtypeMismatch {
        name: String,
        stored: Dtype,
        requested: Dtype,
    },

    #[error("checkpoint: missing tensor `{0}`")]
    MissingTensor(String),

    #[error("checkpoint does not match config: {0}")]
    CheckpointMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
