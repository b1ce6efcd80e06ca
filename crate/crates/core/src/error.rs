use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "grid span {span_nm:.3} nm is too narrow for the {envelope} envelope \
         (needs at least 6 sigma = {required_nm:.3} nm)"
    )]
    GridTooNarrow {
        envelope: &'static str,
        span_nm: f64,
        required_nm: f64,
    },

    #[error("requested {k_max} modes but the grid only has {n_points} points")]
    TooManyModes { k_max: usize, n_points: usize },

    #[error("kernel decomposition did not converge (residual norm {residual:.3e})")]
    NotConverged { residual: f64 },

    #[error("FWHM of mode {k} is ill-defined: |psi|^2 has several lobes above half maximum")]
    IllDefinedFwhm { k: usize },

    #[error("round-trip loss {0:.4} is outside (0, 1); low-loss cavity model does not apply")]
    InvalidLoss(f64),

    #[error("pump at or above threshold (P = {0:.4}); only below-threshold operation is modeled")]
    AboveThreshold(f64),

    #[error("LO spectrum and supermode basis are defined on different grids")]
    GridMismatch,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error(
        "inconsistent detected variance {detected} for efficiency {eta}: \
         inferred output variance would be {inferred}"
    )]
    InconsistentInversion {
        detected: f64,
        eta: f64,
        inferred: f64,
    },

    #[error("fit did not converge from any start (best residual {residual:.4e})")]
    FitFailed { residual: f64 },

    #[error("shot-noise normalization requested but the trace has no shot calibration")]
    MissingShotCalibration,

    #[error("curve spans {span:.4} rad, less than one pi-period")]
    SpanTooShort { span: f64 },

    #[error("malformed trace file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
