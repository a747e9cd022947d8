//! Error type shared across the crate.

/// Failures surfaced by library operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation that needs at least one point received an empty cloud.
    #[error("empty input")]
    EmptyInput,
    /// Requested k-NN fan-out is not smaller than the cloud size.
    #[error("fan-out exceeds cloud")]
    FanOutExceedsCloud,
    /// A probability row has negative entries or does not sum to 1.
    #[error("invalid distribution")]
    InvalidDistribution,
    /// A feature row or prototype column has zero norm, so no direction
    /// on the hypersphere is defined.
    #[error("degenerate embedding")]
    DegenerateEmbedding,
    /// Anchor routing was asked for but no annotated points exist.
    #[error("no labeled points")]
    NoLabeledPoints,
    /// A supervised loss was requested with zero annotated points.
    #[error("no supervision")]
    NoSupervision,
    /// `backward` was called with no recorded forward pass.
    #[error("backward without forward")]
    BackwardWithoutForward,
    /// Inputs disagree on point count, width, or class count.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A scene spec or config violates its documented invariants.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    /// A file has the wrong magic, version, or layout.
    #[error("bad format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
