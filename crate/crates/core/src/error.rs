//! Error types shared by all modules.

use thiserror::Error;

/// Errors produced by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter set violates a structural invariant (ordering, sign, ...).
    #[error("invalid parameters: {0}")]
    Parameter(String),

    /// Two strictly-ordered quantities collided; the caller should use the
    /// corresponding limit formulas instead.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// Array shapes or representation tags do not match.
    #[error("structural error: {0}")]
    Structure(String),

    /// The solution left the representable range (NaN/Inf or amplitude blow-up).
    #[error("blow-up detected at t = {t}: {detail}")]
    BlowUp { t: f64, detail: String },

    /// The spectral tail indicator exceeded its threshold; the grid no longer
    /// resolves the solution.
    #[error("resolution loss at t = {t}: tail indicator {tail:.3e} > {threshold:.3e}")]
    ResolutionLoss { t: f64, tail: f64, threshold: f64 },

    /// A conserved quantity drifted past its configured bound.
    #[error("conservation drift at t = {t}: {quantity} drift {drift:.3e} > {bound:.3e}")]
    DriftExceeded {
        t: f64,
        quantity: &'static str,
        drift: f64,
        bound: f64,
    },

    /// Not enough data to perform the requested computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The value requested is undefined at the query point (e.g. division by
    /// a field below its floor).
    #[error("undefined at query point: {0}")]
    Undefined(String),

    /// Configuration file or manifest problem.
    #[error("config error: {0}")]
    Config(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed on-disk artifact (snapshot, manifest, CSV).
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
