use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the engine can report.
///
/// Variants split into two families: domain errors (the input violates a
/// hypothesis, e.g. a singular Jacobian or an `hbar` outside the Borel disc)
/// and numeric non-convergence (an iteration or quadrature ran out of
/// budget). [`Error::exit_code`] maps them onto the CLI contract.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no solution: Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoSolution { iterations: usize, residual: f64 },

    #[error("Jacobian singular: IFT hypothesis fails (condition number {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("Picard iteration diverged at node {node} (xi = {xi}): last increment {increment:e} after {iterations} iterations")]
    Divergence {
        node: usize,
        xi: f64,
        increment: f64,
        iterations: usize,
    },

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("pole at {location} lies within {radius} of the ray (distance {distance:e})")]
    PoleNearRay {
        location: Complex64,
        distance: f64,
        radius: f64,
    },

    #[error("hbar = {hbar} outside the convergence region: requires Re(e^(i theta)/hbar) = {lhs} > {rhs}")]
    Domain { hbar: Complex64, lhs: f64, rhs: f64 },

    #[error("analytic continuation failed: {0}")]
    Continuation(String),

    #[error("ill-conditioned solve: {0}")]
    Conditioning(String),

    #[error("spectral gap violated: {0}")]
    Gap(String),

    #[error("defective leading matrix: {0}")]
    Defective(String),

    #[error("leading eigenvalues coalesce, discriminant vanishes: {0}")]
    Discriminant(String),

    #[error("oracle failure (test inconclusive): {0}")]
    Oracle(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("stage {path}: {source}")]
    Stage { path: String, source: Box<Error> },
}

impl Error {
    /// CLI exit code: 3 for numeric non-convergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoSolution { .. }
            | Error::Divergence { .. }
            | Error::Resolution(_)
            | Error::Oracle(_)
            | Error::Conditioning(_)
            | Error::Internal(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    pub(crate) fn at_stage(self, path: &str) -> Error {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                path: path.to_string(),
                source: Box::new(other),
            },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
