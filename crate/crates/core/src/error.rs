use thiserror::Error;

/// Errors raised by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval: t1 = {t1} < t0 = {t0}")]
    InvalidInterval { t0: f64, t1: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate scaling box: {0}")]
    DegenerateBox(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no implied volatility: {0}")]
    NoSolution(String),

    #[error("trinomial lattice failed: {0}")]
    Lattice(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged {
        epoch: usize,
        loss: f64,
        report: Box<crate::trainer::TrainReport>,
    },

    #[error("maturity {maturity} beyond simulation horizon {horizon}")]
    BeyondHorizon { maturity: f64, horizon: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
