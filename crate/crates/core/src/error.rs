use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("time {t0} is not a node of the time grid (nearest level {nearest} at t={nearest_t})")]
    TimeNotOnGrid { t0: f64, nearest: usize, nearest_t: f64 },

    #[error("linear solve failed at time level {level}: {reason}")]
    Solve { level: usize, reason: String },

    #[error("nonpositive value {value} at node {index}")]
    Nonpositive { index: usize, value: f64 },

    #[error(
        "inadmissible geometry: T={t} must exceed {t_min} (and {t_min_gamma} for the chosen gamma)"
    )]
    InadmissibleGeometry { t: f64, t_min: f64, t_min_gamma: f64 },

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
