//! Error type shared by every module of the workbench.

/// Crate-wide error enumeration.
///
/// The CLI maps these onto process exit codes: configuration and input
/// problems exit with 3, solver non-convergence with 4. Failed verification
/// checks are not errors; they are reported as `pass = false` entries and
/// exit with 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A preset, field, or argument violates a documented precondition.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// Two grid-bound objects with incompatible grids were combined.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A rational rescaling has no exact lattice map for the given grids.
    #[error("unsupported scale factor: {0}")]
    UnsupportedFactor(String),

    /// An iterative solver hit its iteration cap before reaching tolerance.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// A numeric consistency guard tripped (NaN, lost symmetry, and such).
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// The run configuration file is malformed or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Filesystem trouble while reading inputs or writing artifacts.
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI. Checks that ran and failed are handled
    /// separately (exit 2); errors here mean the run could not complete.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence(_) => 4,
            _ => 3,
        }
    }
}
