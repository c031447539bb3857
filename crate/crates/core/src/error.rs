use thiserror::Error;

/// Errors raised by model evaluation, integration, critical-element search
/// and the CCT pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("no active parameter designated")]
    NoActiveParameter,

    #[error("algebraic Jacobian is singular at the evaluation point (|det| = {delta:e})")]
    SingularPoint { delta: f64 },

    #[error("Newton iteration failed: {0}")]
    NewtonFailure(String),

    #[error("singular Jacobian in Newton iteration")]
    SingularJacobian,

    #[error("reduced state matrix is singular")]
    SingularReducedJacobian,

    #[error("eigenvalue too close to the imaginary axis (Re = {0:e}); refusing to classify")]
    EigenvalueOnAxis(f64),

    #[error("located point is not a {expected}: {reason}")]
    WrongElementKind { expected: &'static str, reason: String },

    #[error("spectrum does not separate transversal from center eigenvalues (gap {0:e})")]
    AmbiguousSpectrum(f64),

    #[error("no zero crossing of the Δ monitor")]
    NoCrossing,

    #[error("invalid bisection bracket: {0}")]
    BracketInvalid(String),

    #[error("stability verdict inconclusive: horizon reached outside the SEP ball")]
    Inconclusive,

    #[error("instability mechanism could not be classified: {0}")]
    Unclassifiable(String),

    #[error("sensitivity denominator degenerate ({0:e}); CCT is locally non-differentiable")]
    DegenerateDenominator(f64),

    #[error("sensitivity system ill-conditioned (smallest singular value {0:e})")]
    IllConditioned(f64),

    #[error("missing sensitivity blocks: {0}")]
    MissingBlocks(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
