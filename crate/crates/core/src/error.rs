use std::path::PathBuf;

use thiserror::Error;

use crate::model::GrainShape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("invalid layer `{layer}`: {message}")]
    InvalidLayer { layer: String, message: String },

    #[error("layer `{layer}`: expected {expected} {unit}, found {actual}")]
    ShapeMismatch {
        layer: String,
        expected: usize,
        actual: usize,
        unit: &'static str,
    },

    #[error("layer `{layer}`: non-finite value at index {index}")]
    NonFinite { layer: String, index: usize },

    #[error("layer `{layer}`: granularity {shape} is only supported on convolutional layers")]
    UnsupportedGranularity { layer: String, shape: GrainShape },

    #[error("layer `{layer}`: mask is not constant within {shape} grain {grain}")]
    NonAtomicMask {
        layer: String,
        shape: GrainShape,
        grain: usize,
    },

    #[error("{what} = {value} is outside {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer mismatch: expected `{expected}`, found `{actual}`")]
    LayerMismatch { expected: String, actual: String },

    #[error("schedule is not monotone: layer {layer} drops from {from} at stage {stage} to {to}")]
    NonMonotoneSchedule {
        layer: usize,
        stage: usize,
        from: f64,
        to: f64,
    },

    #[error("sensitivity report for layer `{layer}` has no 0-sparsity anchor")]
    MissingAnchor { layer: String },

    #[error("target accuracy {target} outside curve range [{min}, {max}]; extrapolation refused")]
    Extrapolation { target: f64, min: f64, max: f64 },

    #[error("evaluator failed on layer `{layer}` at sparsity {sparsity}: {source}")]
    Evaluation {
        layer: String,
        sparsity: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluator error: {0}")]
    Evaluator(String),

    #[error("unsupported stride {stride} on layer `{layer}`; the simulator handles stride 1 only")]
    UnsupportedStride { layer: String, stride: usize },

    #[error("corrupt encoding: {0}")]
    Corrupt(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid_layer(layer: &str, message: impl Into<String>) -> Self {
        Error::InvalidLayer {
            layer: layer.to_string(),
            message: message.into(),
        }
    }
}
