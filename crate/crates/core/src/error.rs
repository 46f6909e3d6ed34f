use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: timestamp {timestamp} precedes previous timestamp {previous}")]
    NonMonotoneTimestamp { line: u64, timestamp: i64, previous: i64 },

    #[error("unknown order id {0}")]
    UnknownOrder(u64),

    #[error("duplicate order id {0}")]
    DuplicateOrder(u64),

    #[error("order {order_id}: size {requested} exceeds remaining {remaining}")]
    Oversize { order_id: u64, requested: u64, remaining: u64 },

    #[error("book crossed at {time_ms} ms: best bid {bid} >= best ask {ask}")]
    CrossedBook { time_ms: i64, bid: i64, ask: i64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("response {0} must be positive")]
    NonPositiveResponse(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("model did not converge")]
    ModelNotConverged,

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
