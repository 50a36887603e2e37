//! Error type shared across the crate.

use num_complex::Complex64;

/// Errors produced by spectrum construction, filter pre-computation,
/// sampling and validation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Log-gamma evaluated within 1e-12 of a non-positive integer.
    #[error("gamma pole: z = {z} is within tolerance of a non-positive integer")]
    GammaPole { z: Complex64 },

    /// The hypergeometric series hit the term cap before reaching the
    /// tolerance; the expansion point is too close to 1 for the chosen grid.
    #[error("hypergeometric series did not converge within {cap} terms (x = {x})")]
    HypergeometricDivergence { x: f64, cap: usize },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A kappa maps to a lambda within 1e-9 of an integer, for which the
    /// angular power spectrum is undefined.
    #[error("integer lambda: kappa = {kappa} gives lambda = {lambda}")]
    IntegerLambda { kappa: Complex64, lambda: Complex64 },

    /// Two kappas coincide; the partial-fraction decomposition needs them
    /// pairwise distinct.
    #[error("duplicate kappa: |kappa[{i}] - kappa[{j}]| below tolerance")]
    DuplicateKappa { i: usize, j: usize },

    /// A non-real kappa has no conjugate partner, so the field would not
    /// be real-valued.
    #[error("kappa list is not closed under conjugation: kappa[{i}] = {kappa}")]
    NonConjugateKappas { i: usize, kappa: Complex64 },

    /// The angular power C_l came out non-positive or with a large
    /// imaginary residue at construction time.
    #[error("angular power C_{l} = {value} is not positive real")]
    NonPositiveSpectrum { l: u32, value: Complex64 },

    /// A covariance quantity that must be real kept a large imaginary
    /// part; the spectrum is invalid (typically not conjugate-closed).
    #[error("imaginary residue too large: {value} (limit {limit:.3e})")]
    ImaginaryResidue { value: Complex64, limit: f64 },

    /// A covariance matrix has an eigenvalue below the negativity
    /// tolerance; the J computation is inconsistent.
    #[error("indefinite covariance: min eigenvalue {min_eigenvalue:.3e}, trace {trace:.3e}")]
    IndefiniteCovariance { min_eigenvalue: f64, trace: f64 },

    /// The truncation tail bound for the analytic covariance series does
    /// not meet the requested tolerance.
    #[error(
        "tail bound not met: bound {bound:.3e} exceeds tolerance {tol:.3e} at l_max = {l_max}"
    )]
    TailBound { bound: f64, tol: f64, l_max: u32 },

    /// A field sample does not live on the grid the estimator expects.
    #[error("mismatched grid: {0}")]
    MismatchedGrid(String),

    /// Invalid user-supplied configuration (sizes, resolution lists, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Bank or field file is malformed: bad magic, unsupported version,
    /// truncation or checksum failure.
    #[error("file format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the CLI for exit codes and by the FFI
/// layer for status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad user input or configuration.
    Usage,
    /// Numerical or spectrum-related failure.
    Numeric,
    /// File I/O or format failure.
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidArgument(_) => ErrorClass::Usage,
            Io(_) | Json(_) | Format(_) => ErrorClass::Io,
            _ => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
