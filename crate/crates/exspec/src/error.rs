//! Error taxonomy shared by the library and the CLI.
//!
//! The variants split into three exit-code classes: configuration requests
//! that violate a model assumption (exit 2), numerical-method failures
//! (exit 1), and command-line usage errors (exit 64). The distinction
//! matters operationally: assumption violations are user errors and carry
//! the name of the violated assumption, while numerical failures indicate a
//! bug or a regime limit and carry diagnostic state.

use thiserror::Error;

/// Exit code for numerical failures and missing artifacts.
pub const EXIT_NUMERICAL: i32 = 1;
/// Exit code for violated model assumptions (wrong bound-state count,
/// wrong regime, amplitude outside the validated window).
pub const EXIT_ASSUMPTION: i32 = 2;
/// Exit code for command-line usage errors.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    ShapeMismatch(String),

    #[error("assumption {name} violated: {detail}")]
    AssumptionViolation { name: &'static str, detail: String },

    #[error("regime error: {0}")]
    Regime(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("potential calibration failed: {detail}\nscan log:\n{scan_log}")]
    CalibrationFailure { detail: String, scan_log: String },

    #[error("branch continuation failed: {0}")]
    Continuation(String),

    #[error("degenerate branch: {0}")]
    DegenerateBranch(String),

    #[error(
        "limiting absorption required: {0} (re-run with a complex absorbing \
         layer or a positive imaginary shift)"
    )]
    LimitingAbsorption(String),

    #[error("fixed-point iteration failed: {detail}\niteration log:\n{log}")]
    FixedPointFailure { detail: String, log: String },

    #[error("iterate left the localization region: {0}")]
    RegionEscape(String),

    #[error("no eigenvalue inside the search disk: {0}")]
    SpectralCount(String),

    #[error("degenerate normalization: {0}")]
    Normalization(String),

    #[error("contraction failed: {0}")]
    ContractionFailure(String),

    #[error("smallness condition violated: {0}")]
    SmallnessViolation(String),

    #[error("integrator fault: {0}")]
    IntegratorFault(String),

    #[error("measurement window error: {0}")]
    Window(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("schema version mismatch: {0}")]
    SchemaMismatch(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Process exit code for this error per the taxonomy above.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::AssumptionViolation { .. }
            | Error::Regime(_)
            | Error::Domain(_)
            | Error::SmallnessViolation(_) => EXIT_ASSUMPTION,
            Error::Usage(_) | Error::InvalidParameter(_) => EXIT_USAGE,
            _ => EXIT_NUMERICAL,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
