use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("network has no layers")]
    EmptyNetwork,

    #[error("network has no parameterized layer")]
    NoParameterizedLayer,

    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: String, detail: String },

    #[error("unknown layer kind `{0}`")]
    UnknownKind(String),

    #[error("class index {index} out of range for {classes} classes")]
    InvalidClass { index: usize, classes: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("LUT file {path} has {found} bytes, expected {expected}")]
    LutSize {
        path: PathBuf,
        found: usize,
        expected: usize,
    },

    #[error("missing sidecar {0}")]
    MissingSidecar(PathBuf),

    #[error("operand {0} outside [-127, 127]")]
    OperandRange(i32),

    #[error("unknown multiplier `{0}`")]
    UnknownMultiplier(String),

    #[error("multiplier `{0}` carries no usable power figure")]
    MissingPower(String),

    #[error("cannot derive a quantization scale for {layer}: tensor is all zero")]
    ZeroScale { layer: String },

    #[error("mask would zero every neuron of {layer}")]
    MaskWholeLayer { layer: String },

    #[error("accumulator overflow in {layer}")]
    AccumulatorOverflow { layer: String },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("bad IDX file {path}: {detail}")]
    Idx { path: PathBuf, detail: String },

    #[error("report schema version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("evaluation failed for genome {genome}: {source}")]
    Evaluation {
        genome: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}
