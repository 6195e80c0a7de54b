//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown IDX magic number 0x{magic:08x}")]
    UnknownMagic { magic: u32 },

    #[error("IDX payload length mismatch: header declares {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("unsupported image dimensions {rows}x{cols}, expected 28x28")]
    DimensionMismatch { rows: usize, cols: usize },

    #[error("label {value} outside 0..=9")]
    InvalidLabel { value: u8 },

    #[error("missing dataset file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("{partition} partition has {images} images but {labels} labels")]
    CountMismatch {
        partition: &'static str,
        images: usize,
        labels: usize,
    },

    #[error("{dataset} {partition} partition has {actual} samples, expected {expected}")]
    PartitionSize {
        dataset: String,
        partition: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{n_clients} clients not divisible into {classes} heterogeneity classes")]
    NotDivisible { n_clients: usize, classes: usize },

    #[error("label {label} has {available} {partition} samples, need {needed}")]
    InsufficientData {
        label: u8,
        partition: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("invalid rotation angle {degrees}, expected one of 0/90/180/270")]
    InvalidAngle { degrees: u16 },

    #[error("loss became non-finite during training")]
    NonFiniteLoss,

    #[error("empty model sequence")]
    EmptyInput,

    #[error("aggregation weights sum to zero")]
    ZeroTotalWeight,

    #[error("cannot form {k} clusters from {points} points")]
    TooFewPoints { points: usize, k: usize },

    #[error("heterogeneity class {class} has no member clients")]
    EmptyClass { class: usize },

    #[error("label sequences have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least 2 items to score a partition, got {n}")]
    TooFewItems { n: usize },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("bad checkpoint: {reason}")]
    BadCheckpoint { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
