use thiserror::Error;

/// Everything that can go wrong while computing a normal form.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is numerically singular (smallest singular value {smallest:.3e}, threshold {threshold:.3e})")]
    SingularMatrix { smallest: f64, threshold: f64 },
    #[error("matrix is not symplectic: residual {residual:.3e} exceeds {bound:.3e}")]
    NotSymplectic { residual: f64, bound: f64 },
    #[error("tolerance ambiguity: {0}")]
    ToleranceAmbiguity(String),
    #[error("({re}, {im}) is not an eigenvalue within tolerance")]
    NotAnEigenvalue { re: f64, im: f64 },
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    #[error("degenerate generator: {0}")]
    DegenerateGenerator(String),
    #[error("degenerate chain: vanishing antidiagonal pairing at index {0}")]
    DegenerateChain(usize),
    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),
    #[error("could not generate a conjugator below the condition cap {cap} after {attempts} attempts")]
    GenerationFailure { cap: f64, attempts: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
