//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a NIfTI-1 file (bad magic or header size)")]
    NotNifti { path: PathBuf },

    #[error("{path}: NIfTI-2 files are not supported")]
    Nifti2Unsupported { path: PathBuf },

    #[error("unsupported NIfTI datatype code {code}")]
    UnsupportedDatatype { code: i16 },

    #[error("unsupported volume dimensionality: {detail}")]
    UnsupportedDimensions { detail: String },

    #[error("{path}: voxel data truncated (expected {expected} bytes, got {got})")]
    TruncatedData {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("value {value} not representable as {datatype}")]
    ValueNotRepresentable { value: f64, datatype: &'static str },

    #[error("voxel value {value} is not a valid label")]
    InvalidLabelValue { value: f64 },

    #[error("label {label} is not defined by the schema")]
    LabelOutsideSchema { label: u8 },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid label schema: {0}")]
    InvalidSchema(String),

    #[error("schema defines no region named {0:?}")]
    UnknownRegion(String),

    #[error("schema defines no label named {0:?}")]
    UnknownLabelName(String),

    #[error("volume orientation is oblique; voxel axes do not align with world axes")]
    ObliqueOrientation,

    #[error("labels must be resampled with nearest-neighbor interpolation")]
    LabelInterpolation,

    #[error("normalization domain is empty")]
    EmptyNormalizationDomain,

    #[error("image is constant over the normalization domain (std {std:e})")]
    ConstantImage { std: f64 },

    #[error("rater stack needs at least 2 raters, got {count}")]
    TooFewRaters { count: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
