//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- file I/O / NIfTI decoding ----
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("header must be 348 bytes, got {0}")]
    WrongSize(usize),
    #[error("bad NIfTI magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("detached-header (ni1) files are not supported")]
    DetachedHeader,
    #[error("file truncated: expected {expected} data bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("refusing to write non-finite voxel values")]
    RejectedNonFinite,
    #[error("invalid quaternion: b^2+c^2+d^2 = {0} > 1")]
    InvalidQuaternion(f64),
    #[error("label value {0} out of range for 8-bit label storage")]
    LabelOutOfRange(i64),

    // ---- geometry / gridding ----
    #[error("affine rotation part is singular")]
    SingularAffine,
    #[error("affine is oblique ({0:.2} deg from axis-aligned); resample explicitly first")]
    ObliqueAffine(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("resampling produced an empty output grid")]
    EmptyOutput,
    #[error("volume is not RAS+ oriented")]
    NotRasOriented,

    // ---- intensity / labels ----
    #[error("constant image has no intensity range")]
    ConstantImage,
    #[error("unknown label name {0:?}")]
    UnknownLabel(String),
    #[error("label {0:?} not present in mask")]
    EmptyLabel(String),

    // ---- registration ----
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("cohort too small: need at least {need}, got {got}")]
    CohortTooSmall { need: usize, got: usize },
    #[error("optimization diverged: {0}")]
    Diverged(String),

    // ---- meshes / metrics ----
    #[error("mask is empty")]
    EmptyMask,
    #[error("no bone adjacency found for the cartilage surface")]
    NoBoneAdjacency,
    #[error("pseudo-healthy interface has zero area")]
    ZeroPseudoArea,
    #[error("surface patch is empty")]
    EmptyPatch,
    #[error("region {0:?} not present")]
    EmptyRegion(String),
    #[error("no tibial cartilage voxels present")]
    NoTibialCartilage,

    // ---- pipeline ----
    #[error("missing inputs: {0}")]
    MissingInputs(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
