use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch between {left_rows}x{left_cols} and {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("rank {rank} out of range [1, {max}]")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("invalid LoRA configuration: {0}")]
    InvalidLoraConfig(String),

    #[error("stack mismatch: {0}")]
    StackMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("device {device}: observation must be finite and non-negative ({field} = {value})")]
    NegativeObservation {
        device: usize,
        field: &'static str,
        value: f64,
    },

    #[error("device {device}: observation for round {got} does not follow round {expected}")]
    OutOfOrderObservation { device: usize, expected: usize, got: usize },

    #[error("no capacity history for device {0}")]
    MissingHistory(usize),

    #[error(
        "rank budget psi={psi} is infeasible for {layers} layers with step {step}; minimum feasible psi is {min_psi}"
    )]
    InfeasibleRankBudget {
        psi: usize,
        layers: usize,
        step: usize,
        min_psi: usize,
    },

    #[error("completion times must be finite and positive, got {0}")]
    NonPositiveTime(f64),

    #[error("protocol violation at layer {layer}: expected rank {expected}, got {got}")]
    RankMismatch { layer: usize, expected: usize, got: usize },

    #[error("dataset of {samples} samples cannot cover {devices} devices")]
    DatasetTooSmall { samples: usize, devices: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed profile row {row}: {message}")]
    MalformedProfile { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::ShapeMismatch {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
