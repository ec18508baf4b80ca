use std::path::PathBuf;

/// Errors raised anywhere in the engine.
///
/// Every variant maps to a short, stable, machine-parsable code via
/// [`Error::code`] so command-line front ends can print one-line diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid quantization parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite value in tensor `{tensor}` at index {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("code {code} at index {index} outside [{min}, {max}]")]
    CodeOutOfRange {
        index: usize,
        code: u32,
        min: u32,
        max: u32,
    },

    #[error("empty tensor: {0}")]
    EmptyTensor(&'static str),

    #[error("constant tensor: {0}")]
    ConstantTensor(&'static str),

    #[error("unsupported bit-width {bits} for {what}")]
    UnsupportedBits { bits: u32, what: &'static str },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("calibration diverged after {} steps (mse {:.3e} -> {:.3e})", trajectory.len(), trajectory.first().copied().unwrap_or(0.0), trajectory.last().copied().unwrap_or(0.0))]
    Diverged { trajectory: Vec<f64> },

    #[error("accumulator overflow risk: {bits_w}-bit x {bits_x}-bit over k={k} needs {needed} bits (max 31)")]
    AccumulatorOverflow {
        bits_w: u32,
        bits_x: u32,
        k: usize,
        needed: u32,
    },

    #[error("invalid scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid config at `{path}`: {detail}")]
    InvalidConfig { path: String, detail: String },

    #[error("missing calibration data for layer `{layer}` ({kind} quantizer)")]
    MissingCalibration { layer: String, kind: &'static str },

    #[error("checkpoint corrupt: {0}")]
    CorruptCheckpoint(String),

    #[error("feature file corrupt: {0}")]
    CorruptFeatures(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Stable error code for scripted consumers.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "E_PARAMS",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::CodeOutOfRange { .. } => "E_CODE_RANGE",
            Error::EmptyTensor(_) => "E_EMPTY",
            Error::ConstantTensor(_) => "E_CONSTANT",
            Error::UnsupportedBits { .. } => "E_BITS",
            Error::ShapeMismatch(_) => "E_SHAPE",
            Error::Precondition(_) => "E_PRECONDITION",
            Error::Diverged { .. } => "E_DIVERGED",
            Error::AccumulatorOverflow { .. } => "E_OVERFLOW",
            Error::InvalidScheme(_) => "E_SCHEME",
            Error::InvalidConfig { .. } => "E_CONFIG",
            Error::MissingCalibration { .. } => "E_CALIBRATION",
            Error::CorruptCheckpoint(_) => "E_CHECKPOINT",
            Error::CorruptFeatures(_) => "E_FEATURES",
            Error::Decode(_) => "E_DECODE",
            Error::Simulation(_) => "E_SIMULATION",
            Error::Io { .. } => "E_IO",
            Error::Serde(_) => "E_SERDE",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
