use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Validation(String),

    #[error("no guided HE11 root in ({n_clad}, {n_core})")]
    NoGuidedMode { n_clad: f64, n_core: f64 },

    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: &'static str, detail: String },

    #[error("quadrature not converged: last relative change {last_change:.3e} > {tolerance:.1e}")]
    QuadratureNotConverged { last_change: f64, tolerance: f64 },

    #[error("rate matrix has complex eigenvalues; the biexponential g2 model cannot represent it")]
    OscillatoryDynamics,

    #[error("spectrum is empty or has zero integrated intensity")]
    EmptySpectrum,

    #[error("normalization window [{lo_ns} ns, {hi_ns} ns] has zero mean counts")]
    ZeroNormalization { lo_ns: f64, hi_ns: f64 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("extrapolated inverse lifetime intercept is not positive ({intercept:.4e} 1/s)")]
    NegativeIntercept { intercept: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::Json(_) => 2,
            Error::Io(_) | Error::Format { .. } => 4,
            _ => 3,
        }
    }
}
