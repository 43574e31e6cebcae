//! Full-phase model of the delay-coupled PLL network, its synchronized
//! equilibria, and the reduction to the fixed-point subspace.
//!
//! The network couples N identical second-order nodes all-to-all through
//! `f(phi_i, phi_j) = sin(phi_j(t-tau) - phi_i(t)) + sin(phi_j(t-tau) + phi_i(t))`.
//! On the subspace of identical node states the dynamics collapse to a single
//! scalar delay equation; this module provides that reduction, the 2x2
//! linearization blocks and the quadratic/cubic Taylor coefficients of the
//! coupling used by the center-manifold computation.
//!
//! Conventions: the simulators integrate absolute phases and keep the
//! constant `mu` forcing of the loop equation (it cancels only at the
//! synchronized equilibria). The linearization and the truncated
//! nonlinearity instead work in deviation coordinates, with the equilibrium
//! shifted to the origin, where that constant term is gone. Phases are never
//! wrapped; the winding index of an equilibrium is physical.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter vector of the network: gain K, loop parameter mu, delay tau and
/// node count N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub k: f64,
    pub mu: f64,
    pub tau: f64,
    pub n_nodes: usize,
}

impl ModelParams {
    pub fn new(k: f64, mu: f64, tau: f64, n_nodes: usize) -> Result<Self> {
        if !k.is_finite() || k <= 0.0 {
            return Err(Error::Domain(format!("K must be positive, got {k}")));
        }
        if !mu.is_finite() || mu <= 0.0 {
            return Err(Error::Domain(format!("mu must be positive, got {mu}")));
        }
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::Domain(format!("tau must be nonnegative, got {tau}")));
        }
        if n_nodes < 2 {
            return Err(Error::Domain(format!(
                "node count must be at least 2, got {n_nodes}"
            )));
        }
        Ok(Self {
            k,
            mu,
            tau,
            n_nodes,
        })
    }

    /// Same parameters with a different delay; used by offset scans.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.k, self.mu, tau, self.n_nodes)
    }
}

/// Which of the two equilibrium families of `sin(2 phi) = -1/K` a value
/// belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Plus => write!(f, "plus"),
            Branch::Minus => write!(f, "minus"),
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plus" | "+" => Ok(Branch::Plus),
            "minus" | "-" => Ok(Branch::Minus),
            other => Err(format!("unknown branch `{other}` (expected plus|minus)")),
        }
    }
}

/// A synchronized equilibrium phase, with its branch and winding index and
/// the cached sine/cosine of the doubled angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub phi: f64,
    pub branch: Branch,
    pub winding: i32,
    pub sin2phi: f64,
    pub cos2phi: f64,
}

/// Solve `sin(2 phi) = -1/K` for the equilibrium phase on the requested
/// branch and winding index.
///
/// Requires K >= 1 so that the arcsine argument stays in range.
pub fn equilibrium(k: f64, branch: Branch, winding: i32) -> Result<Equilibrium> {
    if !k.is_finite() || k < 1.0 {
        return Err(Error::Domain(format!(
            "equilibria need K >= 1 (arcsin(-1/K) must be real), got K = {k}"
        )));
    }
    let asin_term = (-1.0 / k).asin();
    let two_n_pi = 2.0 * winding as f64 * PI;
    let phi = match branch {
        Branch::Plus => 0.5 * (asin_term + two_n_pi),
        Branch::Minus => 0.5 * (PI - asin_term + two_n_pi),
    };
    Ok(Equilibrium {
        phi,
        branch,
        winding,
        sin2phi: (2.0 * phi).sin(),
        cos2phi: (2.0 * phi).cos(),
    })
}

/// Linearization of the fixed-point-subspace dynamics around an equilibrium:
/// `A0 = [[0, 1], [alpha, -mu]]`, `Atau = [[0, 0], [beta, 0]]` with
/// `alpha = K mu (-1 + cos 2phi)` and `beta = K mu (1 + cos 2phi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceLinearization {
    pub a0: Matrix2<f64>,
    pub a_tau: Matrix2<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

pub fn linearize(params: &ModelParams, eq: &Equilibrium) -> SubspaceLinearization {
    let km = params.k * params.mu;
    let alpha = km * (-1.0 + eq.cos2phi);
    let beta = km * (1.0 + eq.cos2phi);
    SubspaceLinearization {
        a0: Matrix2::new(0.0, 1.0, alpha, -params.mu),
        a_tau: Matrix2::new(0.0, 0.0, beta, 0.0),
        alpha,
        beta,
        mu: params.mu,
    }
}

/// Prefactors of the third-order Taylor expansion of the coupling around an
/// equilibrium. The expanded forcing is
/// `quad (x1t + x1)^2 + cubic_minus (x1t - x1)^3 + cubic_plus (x1t + x1)^3`
/// where `x1t` is the delayed phase deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearCoeffs {
    pub quad: f64,
    pub cubic_minus: f64,
    pub cubic_plus: f64,
}

pub fn nonlinear_coeffs(params: &ModelParams, eq: &Equilibrium) -> NonlinearCoeffs {
    let km = params.k * params.mu;
    NonlinearCoeffs {
        quad: -(km / 2.0) * eq.sin2phi,
        cubic_minus: -(km / 6.0),
        cubic_plus: -(km / 6.0) * eq.cos2phi,
    }
}

/// Evaluate the truncated nonlinearity at a phase deviation pair.
pub fn f2_eval(x1_now: f64, x1_delayed: f64, coeffs: &NonlinearCoeffs) -> f64 {
    let sum = x1_delayed + x1_now;
    let dif = x1_delayed - x1_now;
    coeffs.quad * sum * sum + coeffs.cubic_minus * dif.powi(3) + coeffs.cubic_plus * sum.powi(3)
}

/// Exact (non-truncated) right-hand side of the full N-node network in
/// first-order form.
///
/// `state` is `(phi_1 .. phi_N, dphi_1 .. dphi_N)`, `delayed_phases` holds
/// `phi_j(t - tau)` for each node. The constant `mu` forcing term is kept; it
/// cancels only at the synchronized equilibria.
pub fn full_rhs(state: &[f64], delayed_phases: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let n = params.n_nodes;
    if state.len() != 2 * n {
        return Err(Error::Dimension(format!(
            "state length {} does not match 2N = {}",
            state.len(),
            2 * n
        )));
    }
    if delayed_phases.len() != n {
        return Err(Error::Dimension(format!(
            "delayed phase count {} does not match N = {}",
            delayed_phases.len(),
            n
        )));
    }
    let mut out = vec![0.0; 2 * n];
    full_rhs_into(state, delayed_phases, params, &mut out);
    Ok(out)
}

/// Allocation-free variant used by the integrator. Dimensions must already
/// be consistent.
pub(crate) fn full_rhs_into(
    state: &[f64],
    delayed_phases: &[f64],
    params: &ModelParams,
    out: &mut [f64],
) {
    let n = params.n_nodes;
    let gain = params.k * params.mu / (n as f64 - 1.0);
    for i in 0..n {
        let phi_i = state[i];
        let mut coupling = 0.0;
        for (j, &phi_j_tau) in delayed_phases.iter().enumerate() {
            if j != i {
                coupling += (phi_j_tau - phi_i).sin() + (phi_j_tau + phi_i).sin();
            }
        }
        out[i] = state[n + i];
        out[n + i] = -params.mu * state[n + i] + params.mu + gain * coupling;
    }
}

/// Right-hand side of the full dynamics restricted to the fixed-point
/// subspace (all nodes identical): a single second-order scalar delay
/// equation in first-order form.
pub fn subspace_rhs(x: [f64; 2], x1_delayed: f64, params: &ModelParams) -> [f64; 2] {
    let km = params.k * params.mu;
    [
        x[1],
        -params.mu * x[1]
            + params.mu
            + km * ((x1_delayed - x[0]).sin() + (x1_delayed + x[0]).sin()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn equilibrium_k1_plus_is_minus_quarter_pi() {
        let eq = equilibrium(1.0, Branch::Plus, 0).unwrap();
        assert_abs_diff_eq!(eq.phi, -FRAC_PI_4, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.sin2phi, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.cos2phi, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn equilibrium_k105_both_branches() {
        // Oracle: direct high-precision evaluation of the arcsine formula.
        let expected_plus = 0.5 * (-1.0f64 / 1.05).asin();
        let eq = equilibrium(1.05, Branch::Plus, 0).unwrap();
        assert_abs_diff_eq!(eq.phi, expected_plus, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.phi, -0.630_475_843_526_634_8, epsilon = 1e-12);
        assert_abs_diff_eq!(eq.sin2phi, -1.0 / 1.05, epsilon = 1e-12);

        let eqm = equilibrium(1.05, Branch::Minus, 0).unwrap();
        assert_abs_diff_eq!(eqm.phi, 2.2012721703215314, epsilon = 1e-12);
        assert_abs_diff_eq!(eqm.sin2phi, -1.0 / 1.05, epsilon = 1e-12);
        assert!(eqm.cos2phi < 0.0);
    }

    #[test]
    fn equilibrium_rejects_k_below_one() {
        assert!(matches!(
            equilibrium(0.9, Branch::Plus, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sin2phi_identity_across_k_and_windings() {
        for i in 0..=90 {
            let k = 1.0 + 0.1 * i as f64;
            for branch in [Branch::Plus, Branch::Minus] {
                for n in [-2, -1, 0, 1, 3] {
                    let eq = equilibrium(k, branch, n).unwrap();
                    assert!(
                        (eq.sin2phi + 1.0 / k).abs() < 1e-12,
                        "sin(2 phi) = -1/K violated at K={k} {branch:?} n={n}"
                    );
                }
            }
        }
    }

    #[test]
    fn linearize_k1_plus_branch() {
        let params = ModelParams::new(1.0, 0.5, 1.0, 2).unwrap();
        let eq = equilibrium(1.0, Branch::Plus, 0).unwrap();
        let lin = linearize(&params, &eq);
        assert_abs_diff_eq!(lin.alpha, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(lin.beta, 0.5, epsilon = 1e-14);
        assert_eq!(lin.a0, Matrix2::new(0.0, 1.0, lin.alpha, -0.5));
        assert_eq!(lin.a_tau, Matrix2::new(0.0, 0.0, lin.beta, 0.0));
    }

    #[test]
    fn linearize_k105_plus_branch_values() {
        // Oracle: cos(arcsin(-1/1.05)) evaluated in double precision.
        let params = ModelParams::new(1.05, 0.15, 7.46, 2).unwrap();
        let eq = equilibrium(1.05, Branch::Plus, 0).unwrap();
        let lin = linearize(&params, &eq);
        let c2 = (1.0f64 - (1.0 / 1.05f64).powi(2)).sqrt();
        assert_abs_diff_eq!(eq.cos2phi, c2, epsilon = 1e-12);
        assert_abs_diff_eq!(lin.alpha, -0.10947656821925363, epsilon = 1e-12);
        assert_abs_diff_eq!(lin.beta, 0.205_523_431_780_746_4, epsilon = 1e-12);
    }

    #[test]
    fn beta_minus_alpha_is_two_k_mu() {
        for (k, mu) in [(1.0, 0.5), (1.05, 0.15), (2.0, 1.3), (7.5, 0.01)] {
            let params = ModelParams::new(k, mu, 1.0, 3).unwrap();
            for branch in [Branch::Plus, Branch::Minus] {
                let eq = equilibrium(k, branch, 0).unwrap();
                let lin = linearize(&params, &eq);
                assert_abs_diff_eq!(lin.beta - lin.alpha, 2.0 * k * mu, epsilon = 1e-14);
                // minus-branch example from the contract: beta < alpha + 2 K mu
                // holds with equality margin zero, so check the identity form.
                assert!(lin.beta <= lin.alpha + 2.0 * k * mu + 1e-14);
            }
        }
    }

    #[test]
    fn f2_vanishes_at_origin_with_zero_gradient() {
        let params = ModelParams::new(1.05, 0.15, 7.46, 2).unwrap();
        let eq = equilibrium(1.05, Branch::Minus, 0).unwrap();
        let nl = nonlinear_coeffs(&params, &eq);
        assert_eq!(f2_eval(0.0, 0.0, &nl), 0.0);
        let h = 1e-7;
        let gx = (f2_eval(h, 0.0, &nl) - f2_eval(-h, 0.0, &nl)) / (2.0 * h);
        let gt = (f2_eval(0.0, h, &nl) - f2_eval(0.0, -h, &nl)) / (2.0 * h);
        assert!(gx.abs() < 1e-9 && gt.abs() < 1e-9);
    }

    #[test]
    fn f2_antisymmetric_arguments_leave_only_minus_cubic() {
        let nl = NonlinearCoeffs {
            quad: 0.3,
            cubic_minus: -0.2,
            cubic_plus: 0.7,
        };
        for x in [0.05f64, -0.3, 1.1] {
            let expect = nl.cubic_minus * (-2.0 * x).powi(3);
            assert_abs_diff_eq!(f2_eval(x, -x, &nl), expect, epsilon = 1e-14);
        }
    }

    /// Third-order Taylor expansion of the exact coupling, extracted by
    /// central finite differences along each evaluation direction; f2_eval
    /// must agree with it to relative 1e-6 for |x| <= 1e-2.
    #[test]
    fn f2_matches_finite_difference_taylor_of_full_coupling() {
        let params = ModelParams::new(1.05, 0.15, 7.46, 2).unwrap();
        for branch in [Branch::Plus, Branch::Minus] {
            let eq = equilibrium(1.05, branch, 0).unwrap();
            let nl = nonlinear_coeffs(&params, &eq);
            let km = params.k * params.mu;
            // Exact forcing minus its value and linear part at the equilibrium.
            let remainder = |x0: f64, xt: f64| -> f64 {
                let g = km * ((xt - x0).sin() + (2.0 * eq.phi + xt + x0).sin()) + params.mu;
                let alpha = km * (-1.0 + eq.cos2phi);
                let beta = km * (1.0 + eq.cos2phi);
                g - alpha * x0 - beta * xt
            };
            for (x0, xt) in [(0.01, 0.01), (0.01, -0.007), (-0.004, 0.01), (0.002, 0.0)] {
                // Directional derivatives of s -> remainder(s x0, s xt) at 0.
                let g = |s: f64| remainder(s * x0, s * xt);
                let h = 0.1;
                let d2 = (g(h) - 2.0 * g(0.0) + g(-h)) / (h * h);
                let d3 = (g(2.0 * h) - 2.0 * g(h) + 2.0 * g(-h) - g(-2.0 * h)) / (2.0 * h * h * h);
                let taylor3 = 0.5 * d2 + d3 / 6.0;
                let cubic = f2_eval(x0, xt, &nl);
                let scale = cubic.abs().max(1e-12);
                assert!(
                    ((cubic - taylor3) / scale).abs() < 1e-6,
                    "branch {branch:?} at ({x0},{xt}): cubic {cubic:.6e} vs FD Taylor {taylor3:.6e}"
                );
            }
        }
    }

    #[test]
    fn full_rhs_zero_at_synchronized_fixed_point() {
        // Oracle: solve sin(2 Phi) = -1/K by bisection on [(-pi/2)/2, 0].
        let k = 1.4;
        let f = |phi: f64| (2.0 * phi).sin() + 1.0 / k;
        let (mut lo, mut hi) = (-std::f64::consts::FRAC_PI_4, 0.0);
        assert!(f(lo) <= 0.0 && f(hi) >= 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let phi_star = 0.5 * (lo + hi);
        let params = ModelParams::new(k, 0.3, 2.0, 5).unwrap();
        let n = params.n_nodes;
        let mut state = vec![phi_star; n];
        state.extend(std::iter::repeat_n(0.0, n));
        let delayed = vec![phi_star; n];
        let out = full_rhs(&state, &delayed, &params).unwrap();
        for v in out {
            assert!(v.abs() < 1e-12, "nonzero derivative {v:.3e} at fixed point");
        }
    }

    #[test]
    fn full_rhs_symmetry_and_zero_coupling_limit() {
        let params = ModelParams::new(1.2, 0.4, 1.0, 2).unwrap();
        let state = vec![0.3, 0.3, 0.1, 0.1];
        let delayed = vec![0.25, 0.25];
        let out = full_rhs(&state, &delayed, &params).unwrap();
        assert_abs_diff_eq!(out[2], out[3], epsilon = 1e-15);

        // K -> 0 limit: with zero rates every second component equals mu.
        let raw = ModelParams {
            k: 0.0,
            mu: 0.4,
            tau: 1.0,
            n_nodes: 2,
        };
        let out = full_rhs(&[0.3, -0.2, 0.0, 0.0], &[0.1, 0.4], &raw).unwrap();
        assert_abs_diff_eq!(out[2], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(out[3], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn full_rhs_rejects_dimension_mismatch() {
        let params = ModelParams::new(1.2, 0.4, 1.0, 3).unwrap();
        assert!(matches!(
            full_rhs(&[0.0; 4], &[0.0; 3], &params),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            full_rhs(&[0.0; 6], &[0.0; 2], &params),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn subspace_rhs_matches_full_rhs_on_identical_states() {
        let params = ModelParams::new(1.05, 0.15, 7.46, 4).unwrap();
        let (phi, rate, phi_tau) = (0.37, -0.05, 0.21);
        let sub = subspace_rhs([phi, rate], phi_tau, &params);
        let n = params.n_nodes;
        let mut state = vec![phi; n];
        state.extend(std::iter::repeat_n(rate, n));
        let full = full_rhs(&state, &vec![phi_tau; n], &params).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(full[i], sub[0], epsilon = 1e-15);
            assert_abs_diff_eq!(full[n + i], sub[1], epsilon = 1e-15);
        }
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 0.1, 1.0, 2).is_err());
        assert!(ModelParams::new(1.0, 0.0, 1.0, 2).is_err());
        assert!(ModelParams::new(1.0, 0.1, -0.1, 2).is_err());
        assert!(ModelParams::new(1.0, 0.1, 1.0, 1).is_err());
        assert!(ModelParams::new(1.0, 0.1, 0.0, 2).is_ok());
    }
}
