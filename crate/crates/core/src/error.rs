//! Error types shared by the analysis pipeline.

use crate::ddesim::Trajectory;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated (K < 1, bad range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Degenerate configuration outside the scope of the analysis, e.g. the
    /// K = 1 codimension-two case (pure imaginary pair plus zero eigenvalue)
    /// or a vanishing transversality denominator.
    #[error("degenerate case: {0}")]
    Degenerate(String),

    /// The critical eigenvalue is not simple (boundary system has the wrong
    /// null-space dimension).
    #[error("multiplicity error: {0}")]
    Multiplicity(String),

    /// A center-manifold linear system is singular (resonant configuration).
    #[error("resonance error: {0}")]
    Resonance(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The step size does not divide the delay, or is otherwise unusable.
    #[error("step size error: {0}")]
    StepSize(String),

    /// The state norm exceeded the divergence cutoff; the trajectory up to
    /// that point is retained.
    #[error("divergence at t = {t:.6}: state norm exceeded {limit:.1e}")]
    Divergence {
        t: f64,
        limit: f64,
        partial: Box<Trajectory>,
    },
}
