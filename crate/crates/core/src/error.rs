use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("duplicate unknown atom id {0}")]
    DuplicateUnknown(u32),
    #[error("power constraint violated at transmitter {tx}, slot {slot}: {power:.6e} > {limit:.6e}")]
    PowerViolation {
        tx: usize,
        slot: usize,
        power: f64,
        limit: f64,
    },
    #[error("causality violation: {0}")]
    Causality(String),
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("demand mismatch: {0}")]
    DemandMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("malformed transcript: {0}")]
    Transcript(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
