use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("geometry error: {axis} output size ({input} + 2*{padding} - {kernel}) / {stride} + 1 is not a positive integer")]
    Geometry { axis: &'static str, input: u32, kernel: u32, stride: u32, padding: u32 },

    #[error("unknown network `{0}` (expected one of vgg16, alexnet, resnet50)")]
    UnknownNetwork(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("degenerate calibration: both cost tables are at {0} channels")]
    DegenerateCalibration(u32),

    #[error("empty curve")]
    EmptyCurve,

    #[error("no configuration fits a latency budget of {budget_ms} ms (fastest is {min_latency_ms} ms)")]
    InfeasibleBudget { budget_ms: f64, min_latency_ms: f64 },

    #[error("no configuration reaches accuracy floor {floor}")]
    InfeasibleAccuracy { floor: f64 },

    #[error("cannot split {levels} distinct latency level(s) into {k} regimes")]
    DegenerateCluster { k: usize, levels: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error at line {line}: {message}")]
    RowValidation { line: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
