use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coordinate {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension {dim}: {reason}")]
    UnsupportedDimension { dim: usize, reason: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "rejection acceptance rate {rate:.3e} is below 1e-6; increase kappa or use a separable \
         potential (per-coordinate inverse-CDF sampling)"
    )]
    LowAcceptance { rate: f64 },

    #[error("step of length {dt} from t = {t} crosses the shear segment boundary at field time {boundary}")]
    SegmentStraddle { t: f64, dt: f64, boundary: f64 },

    #[error("implicit solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("insufficient decay window: {usable} usable points, at least 4 required")]
    InsufficientDecay { usable: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unsupported potential: {0}")]
    UnsupportedPotential(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
