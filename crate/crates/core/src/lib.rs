//! Stability analysis of synchronized states in time-delayed, fully-connected
//! PLL oscillator networks.
//!
//! The crate traces Hopf bifurcation curves of the synchronized equilibria in
//! the (mu, tau) parameter plane, reduces the delay dynamics onto the
//! two-dimensional center manifold to obtain the first Lyapunov coefficient
//! of the emerging periodic orbits, and cross-checks the predicted orbit
//! stability by direct method-of-steps integration of the delay equations.
//!
//! Modules follow the pipeline:
//!
//! - [`model`]: the phase model, its equilibria, the fixed-point-subspace
//!   reduction and the Taylor coefficients of the coupling nonlinearity.
//! - [`spectrum`]: the transcendental characteristic equation, crossing
//!   frequencies, delay branches and Hopf curves.
//! - [`centermanifold`]: eigenfunctions, bilinear-form normalization, the
//!   second-order manifold coefficients and the Lyapunov coefficient.
//! - [`ddesim`]: method-of-steps integration and orbit classification.
//! - [`verify`]: analytic-vs-empirical criticality consistency reports.

pub mod centermanifold;
pub mod ddesim;
pub mod error;
pub mod model;
pub mod spectrum;
pub mod verify;

pub use error::{Error, Result};

/// Numerical tolerances used across the pipeline. Exposed so the CLI can
/// report the constants in effect.
pub mod tol {
    /// Acceptance threshold for the characteristic residual |Delta(i w)| of
    /// an emitted Hopf point.
    pub const RESIDUAL: f64 = 1e-9;
    /// Threshold below which |Delta(i k w)| counts as a resonant eigenvalue.
    pub const RESONANCE: f64 = 1e-6;
    /// A complex Newton polish step applied to a constructed root must not
    /// move it farther than this.
    pub const NEWTON_POLISH: f64 = 1e-8;
    /// |dDelta/dlambda| below this flags a non-simple eigenvalue.
    pub const SIMPLE: f64 = 1e-6;
    /// Residual allowed in the eigenfunction boundary systems and the
    /// orthonormalization <n, s> = I.
    pub const ORTHONORMALITY: f64 = 1e-9;
    /// Pointwise residual allowed for the reconstructed h(theta) in the
    /// inhomogeneous center-manifold ODE.
    pub const H_ODE: f64 = 1e-8;
    /// State-norm cutoff that makes the integrator report divergence.
    pub const DIVERGENCE_NORM: f64 = 1e6;
    /// Relative gap under which the two crossing frequencies count as a
    /// double root (degenerate Hopf, skipped with a warning).
    pub const DOUBLE_ROOT: f64 = 1e-10;
}
