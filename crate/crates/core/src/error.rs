use thiserror::Error;

/// Errors raised by construction, evaluation and solver routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid support [{lo}, {hi}]: need finite lo < hi")]
    InvalidSupport { lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("value {value} outside [{lo}, {hi}] (clamped endpoint {clamped})")]
    Range {
        value: f64,
        lo: f64,
        hi: f64,
        clamped: f64,
    },

    #[error("missing cutoff for node t={t}, history \"{history}\"")]
    MissingCutoff { t: usize, history: String },

    #[error("cached u1* {cached} differs from recomputed {recomputed}")]
    StaleRent { cached: f64, recomputed: f64 },

    #[error("negative interim payment {payment} at history \"{history}\"")]
    LimitedLiability { history: String, payment: f64 },

    #[error("refused: {0}")]
    Refused(String),

    #[error("solver did not converge (residual {residual:e} after {iterations} iterations)")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("no sign change on [{lo}, {hi}]: gap(lo)={gap_lo}, gap(hi)={gap_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        gap_lo: f64,
        gap_hi: f64,
    },

    #[error("size error: N={n} exceeds the limit {max}")]
    Size { n: usize, max: usize },

    #[error("inapplicable: {0}")]
    Inapplicable(String),

    #[error("degenerate split: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
