use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("reconstruction failed for vehicle {vehicle} at s = {s} m: {reason}")]
    Reconstruction {
        vehicle: usize,
        s: f64,
        reason: String,
    },
    #[error("gain extraction failed: {0}")]
    Extraction(String),
    #[error("closed loop is not stable at the requested slice (spectral radius {0})")]
    UnstableSlice(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("no feasible point in the requested range: {0}")]
    NoSolution(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
