//! Consistency check between the analytic stability prediction (sign of the
//! Lyapunov coefficient) and the empirically observed criticality from
//! direct integration around a Hopf point.
//!
//! Empirical protocol: on the side where the equilibrium is unstable, a small
//! constant-offset perturbation either settles onto a small periodic orbit
//! whose squared amplitude grows linearly in the offset (supercritical) or
//! leaves the neighborhood (subcritical). On the stable side, a ladder of
//! perturbation sizes probes for a finite basin boundary: the unstable orbit
//! of a subcritical bifurcation separates decaying from escaping kicks.

use serde::Serialize;

use crate::centermanifold::{lyapunov_a, NormalForm};
use crate::ddesim::{hopf_side_scan, OrbitClass, SimConfig, Verdict};
use crate::error::{Error, Result};
use crate::model::{equilibrium, linearize, nonlinear_coeffs, Branch, ModelParams};
use crate::spectrum::{check_assumptions, nearest_hopf_point, AssumptionReport, HopfPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmpiricalCriticality {
    Supercritical,
    Subcritical,
    Undecided,
}

/// Controls for the verification scans.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyConfig {
    /// Unstable-side offsets as fractions of the Hopf delay.
    pub offsets_rel: Vec<f64>,
    /// Perturbation size for the unstable-side scan.
    pub eps: f64,
    /// Stable-side perturbation ladder for the basin-boundary probe.
    pub ladder: Vec<f64>,
    /// Stable-side offset as a fraction of the Hopf delay.
    pub stable_offset_rel: f64,
    /// Phase deviation beyond which a run counts as escaped.
    pub escape_threshold: f64,
    /// Minimum R^2 of the squared-amplitude fit for the square-root law.
    pub r2_min: f64,
    /// The largest-offset squared amplitude must exceed the smallest by this
    /// factor for the square-root law to count (guards against flat fits on
    /// frozen transients).
    pub amp_sq_growth_min: f64,
    /// Integration controls for the unstable-side scan (long runs: the
    /// amplitude must saturate).
    pub unstable_sim: SimConfig,
    /// Integration controls for the ladder runs.
    pub ladder_sim: SimConfig,
    /// Delay-ladder indices searched when locating the Hopf point.
    pub n_max: i32,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            offsets_rel: vec![0.004, 0.0067, 0.0094],
            eps: 1e-2,
            ladder: vec![0.01, 0.05, 0.10, 0.15, 0.20],
            stable_offset_rel: 0.0094,
            escape_threshold: 0.5,
            r2_min: 0.95,
            amp_sq_growth_min: 2.0,
            // 64 steps per delay keeps the scheme error well below the
            // weakest physical damping probed (near-fold points sit at
            // |Re lambda| ~ 1e-4).
            unstable_sim: SimConfig {
                dt_divisor: 64,
                t_end_factor: 2500.0,
                settle_fraction: 0.8,
            },
            ladder_sim: SimConfig {
                dt_divisor: 64,
                t_end_factor: 500.0,
                settle_fraction: 0.5,
            },
            n_max: 6,
        }
    }
}

/// One integration outcome within the scans.
#[derive(Debug, Clone, Serialize)]
pub struct ScanEntry {
    pub dtau: f64,
    pub eps: f64,
    pub verdict: Verdict,
    pub final_amplitude: f64,
    pub max_deviation: f64,
    pub period: Option<f64>,
    pub escaped: bool,
}

impl ScanEntry {
    fn from_class(dtau: f64, eps: f64, oc: &OrbitClass, escape_threshold: f64) -> Self {
        ScanEntry {
            dtau,
            eps,
            verdict: oc.verdict,
            final_amplitude: oc.final_amplitude,
            max_deviation: oc.max_deviation,
            period: oc.period_estimate,
            escaped: oc.verdict == Verdict::Grows || oc.max_deviation >= escape_threshold,
        }
    }
}

/// Full verification report; serializes to the JSON emitted by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub k: f64,
    pub mu: f64,
    pub branch: Branch,
    pub hopf: HopfPoint,
    pub assumptions: AssumptionReport,
    pub normal_form: NormalForm,
    pub lyapunov_sign: i32,
    pub analytic_supercritical: bool,
    pub unstable_side: Vec<ScanEntry>,
    pub stable_side_ladder: Vec<ScanEntry>,
    pub empirical: EmpiricalCriticality,
    pub sqrt_fit_r2: Option<f64>,
    pub period_linear: f64,
    pub period_measured: Option<f64>,
    pub period_rel_err: Option<f64>,
    pub consistent: bool,
}

fn linear_fit_r2(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let fit = ym + slope * (p.0 - xm);
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - ym) * (p.1 - ym)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        0.0
    };
    (slope, r2)
}

/// Run the analytic reduction and the empirical scans at the Hopf point
/// nearest to `(mu, tau_hint)` and compare verdicts.
pub fn run_verify(
    k: f64,
    mu: f64,
    tau_hint: f64,
    branch: Branch,
    cfg: &VerifyConfig,
) -> Result<VerifyReport> {
    let hp = nearest_hopf_point(k, mu, tau_hint, branch, 0..=cfg.n_max)?;
    if (hp.tau - tau_hint).abs() > 0.05 * hp.tau {
        return Err(Error::Domain(format!(
            "requested tau = {tau_hint} is not near a Hopf point (closest: {})",
            hp.tau
        )));
    }
    let params = ModelParams::new(k, mu, hp.tau, 2)?;
    let eq = equilibrium(k, branch, 0)?;
    let lin = linearize(&params, &eq);
    let nl = nonlinear_coeffs(&params, &eq);
    let assumptions = check_assumptions(&hp, &lin);
    let normal_form = lyapunov_a(&hp, &lin, &nl)?;
    let analytic_supercritical = normal_form.a < 0.0;

    // Unstable side: equilibrium destabilized for sign(tv) * dtau > 0.
    let side = hp.transversality.signum();
    let unstable_offsets: Vec<f64> = cfg.offsets_rel.iter().map(|r| side * r * hp.tau).collect();
    let scan = hopf_side_scan(
        &hp,
        &params,
        &eq,
        &unstable_offsets,
        cfg.eps,
        &cfg.unstable_sim,
    )?;
    let unstable_side: Vec<ScanEntry> = scan
        .iter()
        .map(|(d, oc)| ScanEntry::from_class(*d, cfg.eps, oc, cfg.escape_threshold))
        .collect();

    // Stable side: fixed offset, ladder of perturbation sizes.
    let stable_offset = -side * cfg.stable_offset_rel * hp.tau;
    let mut stable_side_ladder = Vec::new();
    for &eps in &cfg.ladder {
        let scan = hopf_side_scan(&hp, &params, &eq, &[stable_offset], eps, &cfg.ladder_sim)?;
        stable_side_ladder.push(ScanEntry::from_class(
            stable_offset,
            eps,
            &scan[0].1,
            cfg.escape_threshold,
        ));
    }

    // Square-root amplitude law on the unstable side.
    let periodic: Vec<&ScanEntry> = unstable_side
        .iter()
        .filter(|e| e.verdict == Verdict::ConvergesToPeriodic && !e.escaped)
        .collect();
    let mut sqrt_fit_r2 = None;
    let mut sqrt_law = false;
    if periodic.len() >= 2 {
        let pts: Vec<(f64, f64)> = periodic
            .iter()
            .map(|e| (e.dtau.abs(), e.final_amplitude * e.final_amplitude))
            .collect();
        let (slope, r2) = linear_fit_r2(&pts);
        sqrt_fit_r2 = Some(r2);
        let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.1).fold(0.0f64, f64::max);
        sqrt_law = slope > 0.0 && r2 >= cfg.r2_min && hi >= cfg.amp_sq_growth_min * lo;
    }

    let ladder_escape = stable_side_ladder.iter().any(|e| e.escaped);
    let ladder_bounded_below_escape = {
        // Some perturbation smaller than the smallest escaping one stays bounded.
        let min_escape = stable_side_ladder
            .iter()
            .filter(|e| e.escaped)
            .map(|e| e.eps)
            .fold(f64::INFINITY, f64::min);
        stable_side_ladder
            .iter()
            .any(|e| !e.escaped && e.eps < min_escape)
    };
    let unstable_escape = unstable_side.iter().any(|e| e.escaped);

    let empirical = if sqrt_law && periodic.len() == unstable_side.len() && !ladder_escape {
        EmpiricalCriticality::Supercritical
    } else if (ladder_escape && ladder_bounded_below_escape) || (unstable_escape && !sqrt_law) {
        EmpiricalCriticality::Subcritical
    } else {
        EmpiricalCriticality::Undecided
    };

    let period_linear = 2.0 * std::f64::consts::PI / hp.omega;
    let period_measured = periodic
        .iter()
        .min_by(|a, b| a.dtau.abs().partial_cmp(&b.dtau.abs()).unwrap())
        .and_then(|e| e.period);
    let period_rel_err = period_measured.map(|p| (p - period_linear).abs() / period_linear);

    let consistent = matches!(
        (analytic_supercritical, empirical),
        (true, EmpiricalCriticality::Supercritical) | (false, EmpiricalCriticality::Subcritical)
    );

    Ok(VerifyReport {
        k,
        mu,
        branch,
        hopf: hp,
        assumptions,
        normal_form,
        lyapunov_sign: if normal_form.a >= 0.0 { 1 } else { -1 },
        analytic_supercritical,
        unstable_side,
        stable_side_ladder,
        empirical,
        sqrt_fit_r2,
        period_linear,
        period_measured,
        period_rel_err,
        consistent,
    })
}
