//! Characteristic equation of the subspace linearization and Hopf-curve
//! tracing in the (mu, tau) plane.
//!
//! The linearization has the transcendental characteristic function
//! `Delta(lambda) = lambda^2 + mu lambda - alpha - beta e^(-lambda tau)`.
//! Imaginary-axis crossings are obtained in closed form: the crossing
//! frequencies solve the biquadratic
//! `w^4 + (2 alpha + mu^2) w^2 + (alpha^2 - beta^2) = 0`,
//! and each frequency carries a ladder of delays
//! `tau_n = (atan2(-mu w / beta, -(w^2 + alpha)/beta) + 2 pi n) / w`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{equilibrium, linearize, Branch, ModelParams, SubspaceLinearization};
use crate::tol;

/// A parameter-plane locus where a simple pair +-iw crosses the imaginary
/// axis. `transversality` stores the signed crossing speed Re(dlambda/dtau).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfPoint {
    pub mu: f64,
    pub tau: f64,
    pub omega: f64,
    pub n_branch: i32,
    pub transversality: f64,
    pub k: f64,
}

/// One continuous Hopf curve: fixed equilibrium branch, delay-ladder index
/// and frequency-root index, swept over mu.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HopfCurve {
    pub points: Vec<HopfPoint>,
    pub branch: Branch,
    pub n_branch: i32,
    /// 0 = larger crossing frequency (destabilizing family), 1 = smaller.
    pub root_index: usize,
}

/// Result of a mu-sweep: curves plus warnings for skipped degenerate points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HopfSweep {
    pub curves: Vec<HopfCurve>,
    pub warnings: Vec<String>,
}

/// Inclusive mu sweep `start, start+step, ..., <= stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuRange {
    pub start: f64,
    pub step: f64,
    pub stop: f64,
}

impl MuRange {
    pub fn new(start: f64, step: f64, stop: f64) -> Result<Self> {
        let finite = start.is_finite() && step.is_finite() && stop.is_finite();
        if !finite || step <= 0.0 || stop < start {
            return Err(Error::Domain(format!(
                "invalid mu range {start}:{step}:{stop}"
            )));
        }
        Ok(Self { start, step, stop })
    }

    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1.0 + 1e-9).floor() as usize;
        (0..count)
            .map(|i| self.start + i as f64 * self.step)
            .collect()
    }
}

/// `Delta(lambda) = lambda^2 + mu lambda - alpha - beta e^(-lambda tau)`.
pub fn char_residual(lambda: Complex64, lin: &SubspaceLinearization, tau: f64) -> Complex64 {
    lambda * lambda + lin.mu * lambda - lin.alpha - lin.beta * (-lambda * tau).exp()
}

/// `dDelta/dlambda = 2 lambda + mu + tau beta e^(-lambda tau)`.
pub fn char_derivative(lambda: Complex64, lin: &SubspaceLinearization, tau: f64) -> Complex64 {
    2.0 * lambda + lin.mu + tau * lin.beta * (-lambda * tau).exp()
}

/// All real positive crossing frequencies of the imaginary axis, sorted
/// descending (index 0 is the destabilizing family). Empty when the
/// biquadratic has no positive roots.
pub fn omega_candidates(lin: &SubspaceLinearization) -> Vec<f64> {
    let b = 2.0 * lin.alpha + lin.mu * lin.mu;
    let c = lin.alpha * lin.alpha - lin.beta * lin.beta;
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // Cancellation-safe quadratic roots in u = omega^2.
    let u_big = if b <= 0.0 {
        (-b + sq) / 2.0
    } else {
        -2.0 * c / (b + sq)
    };
    let u_small = if b <= 0.0 {
        if u_big != 0.0 {
            c / u_big
        } else {
            (-b - sq) / 2.0
        }
    } else {
        (-b - sq) / 2.0
    };
    let mut out = Vec::new();
    if u_big > 0.0 {
        out.push(u_big.sqrt());
    }
    if u_small > 0.0 && u_small != u_big {
        out.push(u_small.sqrt());
    }
    out
}

/// Delay ladder for one crossing frequency: all `tau_n >= 0` with `n` in the
/// given range, each satisfying `Delta(i omega; tau_n) = 0`.
pub fn tau_branches(
    omega: f64,
    lin: &SubspaceLinearization,
    n_range: std::ops::RangeInclusive<i32>,
) -> Result<Vec<(f64, i32)>> {
    if lin.beta == 0.0 {
        return Err(Error::Degenerate(
            "beta = 0: no delayed coupling, no Hopf mechanism from the delay".into(),
        ));
    }
    let cos_t = -(omega * omega + lin.alpha) / lin.beta;
    let sin_t = -lin.mu * omega / lin.beta;
    let theta = sin_t.atan2(cos_t);
    let mut out = Vec::new();
    for n in n_range {
        let tau = (theta + 2.0 * PI * n as f64) / omega;
        if tau >= 0.0 {
            out.push((tau, n));
        }
    }
    Ok(out)
}

/// Crossing speed Re(dlambda/dtau) from implicit differentiation of
/// `Delta(lambda, tau) = 0` at `lambda = i omega`.
pub fn transversality(omega: f64, tau: f64, lin: &SubspaceLinearization) -> Result<f64> {
    let lambda = Complex64::new(0.0, omega);
    let e = lin.beta * (-lambda * tau).exp();
    let denom = 2.0 * lambda + lin.mu + tau * e;
    if denom.norm() < tol::SIMPLE {
        return Err(Error::Degenerate(
            "vanishing dDelta/dlambda: crossing speed undefined (assumption (a) fails)".into(),
        ));
    }
    Ok((-(lambda * e) / denom).re)
}

/// Outcome of the three standing assumptions at a Hopf point: the critical
/// pair is simple, no `i k omega` eigenvalues for k in {0, +-2, +-3}, and the
/// crossing speed is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub simple: bool,
    pub nonresonant: bool,
    pub transversal: bool,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.simple && self.nonresonant && self.transversal
    }
}

pub fn check_assumptions(hp: &HopfPoint, lin: &SubspaceLinearization) -> AssumptionReport {
    let iw = Complex64::new(0.0, hp.omega);
    let simple = char_derivative(iw, lin, hp.tau).norm() > tol::SIMPLE;
    let nonresonant = [0i32, 2, -2, 3, -3].iter().all(|&k| {
        let lam = Complex64::new(0.0, k as f64 * hp.omega);
        char_residual(lam, lin, hp.tau).norm() > tol::RESONANCE
    });
    let transversal = transversality(hp.omega, hp.tau, lin)
        .map(|v| v.abs() > 1e-12)
        .unwrap_or(false);
    AssumptionReport {
        simple,
        nonresonant,
        transversal,
    }
}

/// Build a fully checked Hopf point from a crossing frequency and delay:
/// a single complex Newton polish must not move the root, and the residual
/// must clear the acceptance threshold.
pub fn make_hopf_point(
    k: f64,
    omega: f64,
    tau: f64,
    n_branch: i32,
    lin: &SubspaceLinearization,
) -> Result<HopfPoint> {
    let iw = Complex64::new(0.0, omega);
    let res = char_residual(iw, lin, tau);
    let deriv = char_derivative(iw, lin, tau);
    if deriv.norm() < tol::SIMPLE {
        return Err(Error::Multiplicity(format!(
            "dDelta/dlambda ~ 0 at mu={}, tau={tau}: double root",
            lin.mu
        )));
    }
    let newton_move = (res / deriv).norm();
    if newton_move > tol::NEWTON_POLISH {
        return Err(Error::Degenerate(format!(
            "Newton polish moved the root by {newton_move:.3e} (> {:.1e}) at mu={}, tau={tau}",
            tol::NEWTON_POLISH,
            lin.mu
        )));
    }
    if res.norm() > tol::RESIDUAL {
        return Err(Error::Degenerate(format!(
            "characteristic residual {:.3e} above tolerance at mu={}, tau={tau}",
            res.norm(),
            lin.mu
        )));
    }
    let tv = transversality(omega, tau, lin)?;
    Ok(HopfPoint {
        mu: lin.mu,
        tau,
        omega,
        n_branch,
        transversality: tv,
        k,
    })
}

/// Sweep mu and assemble Hopf curves keyed by (frequency root, delay ladder
/// index) on the chosen equilibrium branch. Degenerate double-frequency
/// points are skipped with a warning.
pub fn hopf_curves(
    k: f64,
    mu_range: &MuRange,
    n_range: std::ops::RangeInclusive<i32>,
    branch: Branch,
) -> Result<HopfSweep> {
    if !k.is_finite() || k <= 1.0 {
        return Err(Error::Degenerate(format!(
            "Hopf curve tracing needs K > 1 (K = {k} is the degenerate codimension-two case)"
        )));
    }
    // Per mu value: (mu, points tagged by (frequency root, ladder index), warning).
    type MuSlice = (f64, Vec<(usize, i32, HopfPoint)>, Option<String>);
    let mus = mu_range.values();
    let per_mu: Vec<MuSlice> = mus
        .par_iter()
        .map(|&mu| {
            let mut pts = Vec::new();
            let mut warning = None;
            let params = match ModelParams::new(k, mu, 0.0, 2) {
                Ok(p) => p,
                Err(e) => return (mu, pts, Some(format!("mu={mu}: {e}"))),
            };
            let eq = match equilibrium(k, branch, 0) {
                Ok(eq) => eq,
                Err(e) => return (mu, pts, Some(format!("mu={mu}: {e}"))),
            };
            let lin = linearize(&params, &eq);
            let omegas = omega_candidates(&lin);
            if omegas.len() == 2 {
                let (w0, w1) = (omegas[0], omegas[1]);
                if (w0 - w1).abs() < tol::DOUBLE_ROOT * w0.max(1.0) {
                    return (
                        mu,
                        pts,
                        Some(format!(
                            "mu={mu}: coincident crossing frequencies (double root), skipped"
                        )),
                    );
                }
            }
            for (root_index, &omega) in omegas.iter().enumerate() {
                let ladders = match tau_branches(omega, &lin, n_range.clone()) {
                    Ok(l) => l,
                    Err(e) => {
                        warning = Some(format!("mu={mu}: {e}"));
                        continue;
                    }
                };
                for (tau, n) in ladders {
                    match make_hopf_point(k, omega, tau, n, &lin) {
                        Ok(hp) => pts.push((root_index, n, hp)),
                        Err(e) => warning = Some(format!("mu={mu}: {e}")),
                    }
                }
            }
            (mu, pts, warning)
        })
        .collect();

    let mut curves: Vec<HopfCurve> = Vec::new();
    let mut warnings = Vec::new();
    for (_, pts, warning) in per_mu {
        if let Some(w) = warning {
            warnings.push(w);
        }
        for (root_index, n, hp) in pts {
            match curves
                .iter_mut()
                .find(|c| c.n_branch == n && c.root_index == root_index)
            {
                Some(curve) => curve.points.push(hp),
                None => curves.push(HopfCurve {
                    points: vec![hp],
                    branch,
                    n_branch: n,
                    root_index,
                }),
            }
        }
    }
    curves.sort_by_key(|a| (a.n_branch, a.root_index));
    Ok(HopfSweep { curves, warnings })
}

/// Locate the Hopf point of the given equilibrium branch closest in delay to
/// `tau_hint` at fixed mu.
pub fn nearest_hopf_point(
    k: f64,
    mu: f64,
    tau_hint: f64,
    branch: Branch,
    n_range: std::ops::RangeInclusive<i32>,
) -> Result<HopfPoint> {
    let params = ModelParams::new(k, mu, 0.0, 2)?;
    let eq = equilibrium(k, branch, 0)?;
    let lin = linearize(&params, &eq);
    let mut best: Option<HopfPoint> = None;
    for omega in omega_candidates(&lin) {
        for (tau, n) in tau_branches(omega, &lin, n_range.clone())? {
            let hp = make_hopf_point(k, omega, tau, n, &lin)?;
            if best
                .map(|b| (hp.tau - tau_hint).abs() < (b.tau - tau_hint).abs())
                .unwrap_or(true)
            {
                best = Some(hp);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Domain(format!(
            "no Hopf points at K={k}, mu={mu} on the {branch} branch"
        ))
    })
}

pub const HOPF_CSV_HEADER: &str = "mu,tau,omega,n,transversality_sign";

impl HopfPoint {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{},{}",
            self.mu,
            self.tau,
            self.omega,
            self.n_branch,
            if self.transversality >= 0.0 { 1 } else { -1 }
        )
    }

    /// Parse a CSV row written by [`HopfPoint::to_csv_row`]. The
    /// transversality field carries only the sign.
    pub fn from_csv_row(row: &str, k: f64) -> Result<Self> {
        let fields: Vec<&str> = row.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Domain(format!("expected 5 CSV fields, got {row}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Domain(format!("bad float `{s}`: {e}")))
        };
        Ok(HopfPoint {
            mu: parse(fields[0])?,
            tau: parse(fields[1])?,
            omega: parse(fields[2])?,
            n_branch: fields[3]
                .parse()
                .map_err(|e| Error::Domain(format!("bad n `{}`: {e}", fields[3])))?,
            transversality: parse(fields[4])?,
            k,
        })
    }
}
