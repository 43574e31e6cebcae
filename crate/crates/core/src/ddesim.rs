//! Direct integration of the delay equations by the method of steps, with
//! dense cubic-Hermite output and simulation-based orbit classification.
//!
//! The step size must divide the delay exactly, so every delayed lookup
//! falls on a completed step (grid point or midpoint) and the classical
//! 4-stage scheme keeps its order. Identical inputs produce bit-identical
//! trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{subspace_rhs, Equilibrium, ModelParams};
use crate::spectrum::HopfPoint;
use crate::tol;

/// Initial data on [-tau, 0].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HistoryFunction {
    /// Constant state; covers equilibrium and constant-offset perturbations.
    Constant(Vec<f64>),
    /// Equilibrium phase with a constant offset on the phase component and
    /// zero rate. `dim` entries per node pair are generated on evaluation.
    EquilibriumOffset { phi: f64, eps: f64 },
    /// Uniform samples over [-tau, 0] with piecewise-linear interpolation.
    Sampled { tau: f64, states: Vec<Vec<f64>> },
}

impl HistoryFunction {
    pub fn equilibrium(eq: &Equilibrium) -> Self {
        HistoryFunction::EquilibriumOffset {
            phi: eq.phi,
            eps: 0.0,
        }
    }

    pub fn perturbed(eq: &Equilibrium, eps: f64) -> Self {
        HistoryFunction::EquilibriumOffset { phi: eq.phi, eps }
    }

    /// Evaluate at `t` in [-tau, 0]; `dim` is the state dimension the caller
    /// integrates with.
    pub fn eval(&self, t: f64, tau: f64, dim: usize) -> Result<Vec<f64>> {
        if t < -tau - 1e-12 || t > 1e-12 {
            return Err(Error::Domain(format!(
                "history evaluated outside [-tau, 0]: t = {t}, tau = {tau}"
            )));
        }
        match self {
            HistoryFunction::Constant(v) => {
                if v.len() != dim {
                    return Err(Error::Dimension(format!(
                        "history dimension {} != state dimension {dim}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
            HistoryFunction::EquilibriumOffset { phi, eps } => {
                let half = dim / 2;
                let mut v = vec![*phi + *eps; half];
                v.extend(std::iter::repeat_n(0.0, dim - half));
                Ok(v)
            }
            HistoryFunction::Sampled { tau: tau_s, states } => {
                if states.len() < 2 {
                    return Err(Error::Domain("sampled history needs >= 2 samples".into()));
                }
                if (tau_s - tau).abs() > 1e-9 * tau.max(1.0) {
                    return Err(Error::Domain(format!(
                        "sampled history covers tau = {tau_s}, integrator uses {tau}"
                    )));
                }
                let n = states.len() - 1;
                let s = ((t + tau) / tau * n as f64).clamp(0.0, n as f64);
                let i = (s.floor() as usize).min(n - 1);
                let frac = s - i as f64;
                let (a, b) = (&states[i], &states[i + 1]);
                if a.len() != dim || b.len() != dim {
                    return Err(Error::Dimension(
                        "sampled history dimension mismatch".into(),
                    ));
                }
                Ok(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)).collect())
            }
        }
    }
}

/// Which system a trajectory belongs to; decides the CSV layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryKind {
    Subspace,
    Network { n_nodes: usize },
}

/// A sampled solution with node states and derivatives per grid point; the
/// cubic Hermite interpolant of each step provides dense output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
    pub dt: f64,
    pub tau: f64,
    pub kind: TrajectoryKind,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.first().map(|s| s.len()).unwrap_or(0)
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Dense evaluation by the per-step cubic Hermite interpolant.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::Domain("empty trajectory".into()));
        }
        if t < -1e-12 || t > self.t_end() + 1e-12 {
            return Err(Error::Domain(format!(
                "dense evaluation outside [0, {}]: t = {t}",
                self.t_end()
            )));
        }
        let i = ((t / self.dt).floor() as usize).min(n.saturating_sub(2));
        let s = ((t - self.times[i]) / self.dt).clamp(0.0, 1.0);
        let (h00, h10, h01, h11) = hermite_basis(s);
        let out = (0..self.dim())
            .map(|d| {
                h00 * self.states[i][d]
                    + h10 * self.dt * self.derivs[i][d]
                    + h01 * self.states[i + 1][d]
                    + h11 * self.dt * self.derivs[i + 1][d]
            })
            .collect();
        Ok(out)
    }
}

fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

/// Validate that dt divides tau with an integer quotient m >= 20.
fn steps_per_delay(tau: f64, dt: f64) -> Result<usize> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::StepSize(format!("dt must be positive, got {dt}")));
    }
    let m = (tau / dt).round();
    if m < 20.0 {
        return Err(Error::StepSize(format!(
            "dt = {dt} gives tau/dt = {m}, need an integer >= 20"
        )));
    }
    if (m * dt - tau).abs() > 1e-9 * tau.max(1.0) {
        return Err(Error::StepSize(format!(
            "dt = {dt} does not divide tau = {tau} (tau/dt = {})",
            tau / dt
        )));
    }
    Ok(m as usize)
}

/// Method-of-steps engine over a generic right-hand side
/// `rhs(state, delayed_state, out)`.
fn integrate_steps<F>(
    dim: usize,
    tau: f64,
    dt: f64,
    t_end: f64,
    history: &HistoryFunction,
    kind: TrajectoryKind,
    rhs: F,
) -> Result<Trajectory>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    let m = steps_per_delay(tau, dt)?;
    if !t_end.is_finite() || t_end <= 10.0 * tau {
        return Err(Error::Domain(format!(
            "t_end = {t_end} must exceed 10 tau = {}",
            10.0 * tau
        )));
    }
    let n_steps = (t_end / dt).ceil() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    let mut derivs: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);

    // Delayed state at a completed grid node (c = 0 or 1) or step midpoint.
    enum Stage {
        Node(i64),
        Mid(i64),
    }
    let delayed =
        |states: &Vec<Vec<f64>>, derivs: &Vec<Vec<f64>>, stage: Stage| -> Result<Vec<f64>> {
            match stage {
                Stage::Node(j) => {
                    if j < 0 {
                        history.eval(j as f64 * dt, tau, dim)
                    } else {
                        Ok(states[j as usize].clone())
                    }
                }
                Stage::Mid(j) => {
                    if j < 0 {
                        history.eval((j as f64 + 0.5) * dt, tau, dim)
                    } else {
                        let (x0, x1) = (&states[j as usize], &states[j as usize + 1]);
                        let (f0, f1) = (&derivs[j as usize], &derivs[j as usize + 1]);
                        Ok((0..dim)
                            .map(|d| 0.5 * (x0[d] + x1[d]) + dt / 8.0 * (f0[d] - f1[d]))
                            .collect())
                    }
                }
            }
        };

    let x0 = history.eval(0.0, tau, dim)?;
    let mut f0 = vec![0.0; dim];
    let d0 = delayed(&states, &derivs, Stage::Node(-(m as i64)))?;
    rhs(&x0, &d0, &mut f0);
    times.push(0.0);
    states.push(x0);
    derivs.push(f0);

    let mut k = vec![vec![0.0; dim]; 4];
    let mut stage_state = vec![0.0; dim];
    for i in 0..n_steps {
        // The start-of-step delayed value is already folded into derivs[i].
        let j = i as i64 - m as i64;
        let d_mid = delayed(&states, &derivs, Stage::Mid(j))?;
        let d_end = delayed(&states, &derivs, Stage::Node(j + 1))?;

        let x = states[i].clone();
        k[0].copy_from_slice(&derivs[i]);
        for d in 0..dim {
            stage_state[d] = x[d] + 0.5 * dt * k[0][d];
        }
        let mut k1 = std::mem::take(&mut k[1]);
        rhs(&stage_state, &d_mid, &mut k1);
        k[1] = k1;
        for d in 0..dim {
            stage_state[d] = x[d] + 0.5 * dt * k[1][d];
        }
        let mut k2 = std::mem::take(&mut k[2]);
        rhs(&stage_state, &d_mid, &mut k2);
        k[2] = k2;
        for d in 0..dim {
            stage_state[d] = x[d] + dt * k[2][d];
        }
        let mut k3 = std::mem::take(&mut k[3]);
        rhs(&stage_state, &d_end, &mut k3);
        k[3] = k3;

        let mut next = vec![0.0; dim];
        for d in 0..dim {
            next[d] = x[d] + dt / 6.0 * (k[0][d] + 2.0 * k[1][d] + 2.0 * k[2][d] + k[3][d]);
        }
        let t_next = (i + 1) as f64 * dt;
        let norm = next.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mut f_next = vec![0.0; dim];
        rhs(&next, &d_end, &mut f_next);
        times.push(t_next);
        states.push(next);
        derivs.push(f_next);
        if norm > tol::DIVERGENCE_NORM {
            return Err(Error::Divergence {
                t: t_next,
                limit: tol::DIVERGENCE_NORM,
                partial: Box::new(Trajectory {
                    times,
                    states,
                    derivs,
                    dt,
                    tau,
                    kind,
                }),
            });
        }
    }
    Ok(Trajectory {
        times,
        states,
        derivs,
        dt,
        tau,
        kind,
    })
}

/// Integrate the scalar subspace model (full sine dynamics restricted to
/// identical nodes) from the given history. The equilibrium is the
/// classification reference and must belong to the same gain as `params`.
pub fn integrate_subspace(
    params: &ModelParams,
    eq: &Equilibrium,
    history: &HistoryFunction,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if (eq.sin2phi + 1.0 / params.k).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "equilibrium (sin 2 phi = {}) does not belong to K = {}",
            eq.sin2phi, params.k
        )));
    }
    let p = *params;
    integrate_steps(
        2,
        params.tau,
        dt,
        t_end,
        history,
        TrajectoryKind::Subspace,
        move |x, xd, out| {
            let r = subspace_rhs([x[0], x[1]], xd[0], &p);
            out[0] = r[0];
            out[1] = r[1];
        },
    )
}

/// Integrate the full 2N-dimensional network. Every node gets its own
/// history function (dimension 2 each: phase and rate).
pub fn integrate_network(
    params: &ModelParams,
    histories: &[HistoryFunction],
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let n = params.n_nodes;
    if histories.len() != n {
        return Err(Error::Dimension(format!(
            "need {n} node histories, got {}",
            histories.len()
        )));
    }
    let per_node: Vec<HistoryFunction> = histories.to_vec();
    let tau = params.tau;
    let combined = CombinedHistory {
        nodes: per_node,
        tau,
    };
    let p = *params;
    // The delayed argument carries the full state; the coupling needs only
    // the leading N phase components.
    let rhs = move |x: &[f64], xd: &[f64], out: &mut [f64]| {
        crate::model::full_rhs_into(x, &xd[..n], &p, out);
    };
    integrate_steps(
        2 * n,
        tau,
        dt,
        t_end,
        &combined.as_history(),
        TrajectoryKind::Network { n_nodes: n },
        rhs,
    )
}

/// Helper that packs per-node histories into one 2N-dimensional history.
struct CombinedHistory {
    nodes: Vec<HistoryFunction>,
    tau: f64,
}

impl CombinedHistory {
    fn as_history(&self) -> HistoryFunction {
        // Sample densely and store; per-node kinds are piecewise smooth, and
        // constant/offset histories are exactly represented.
        let n = self.nodes.len();
        let samples = 256;
        let mut states = Vec::with_capacity(samples + 1);
        for i in 0..=samples {
            let t = -self.tau + i as f64 / samples as f64 * self.tau;
            let mut state = vec![0.0; 2 * n];
            for (node, h) in self.nodes.iter().enumerate() {
                let v = h
                    .eval(t.min(0.0), self.tau, 2)
                    .expect("node history evaluation");
                state[node] = v[0];
                state[n + node] = v[1];
            }
            states.push(state);
        }
        HistoryFunction::Sampled {
            tau: self.tau,
            states,
        }
    }
}

/// Verdict of the simulation-based orbit classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    DecaysToEquilibrium,
    ConvergesToPeriodic,
    Grows,
    Undecided,
}

/// Classification of a trajectory relative to an equilibrium: per-period
/// peak amplitudes of the phase deviation and the averaged time between
/// like-direction zero crossings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitClass {
    pub verdict: Verdict,
    pub amplitude_series: Vec<f64>,
    pub period_estimate: Option<f64>,
    pub max_deviation: f64,
    pub final_amplitude: f64,
}

/// Amplitude floor below which the state counts as returned to equilibrium.
const DECAY_FLOOR: f64 = 1e-5;

/// Discard the settling fraction, then classify the tail of the phase
/// deviation `x1(t) - phi_eq`.
pub fn classify_orbit(traj: &Trajectory, eq: &Equilibrium, settle_fraction: f64) -> OrbitClass {
    let n = traj.states.len();
    let start = ((n as f64) * settle_fraction.clamp(0.0, 0.95)) as usize;
    let x: Vec<f64> = traj.states[start..].iter().map(|s| s[0] - eq.phi).collect();
    let dt = traj.dt;
    let max_deviation = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    // Up-crossings of zero, linearly refined.
    let mut crossings = Vec::new();
    for i in 0..x.len().saturating_sub(1) {
        if x[i] < 0.0 && x[i + 1] >= 0.0 {
            let frac = -x[i] / (x[i + 1] - x[i]);
            crossings.push((i as f64 + frac) * dt);
        }
    }
    let mut amplitudes = Vec::new();
    for pair in crossings.windows(2) {
        let i0 = (pair[0] / dt) as usize;
        let i1 = ((pair[1] / dt) as usize + 1).min(x.len() - 1);
        let peak = x[i0..=i1].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        amplitudes.push(peak);
    }
    let periods: Vec<f64> = crossings.windows(2).map(|p| p[1] - p[0]).collect();
    let period_estimate = if periods.is_empty() {
        None
    } else {
        let tail = &periods[periods.len().saturating_sub(10)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    };
    let final_amplitude = amplitudes.last().copied().unwrap_or(max_deviation);

    let tail_max = x[x.len().saturating_sub((traj.tau / dt) as usize + 2)..]
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));

    let verdict = if tail_max < DECAY_FLOOR {
        Verdict::DecaysToEquilibrium
    } else if amplitudes.len() < 5 {
        Verdict::Undecided
    } else {
        let last5 = &amplitudes[amplitudes.len() - 5..];
        let (lo, hi) = last5
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        let within_1pct = lo > 0.0 && hi / lo - 1.0 < 0.01;
        if within_1pct && hi > DECAY_FLOOR {
            Verdict::ConvergesToPeriodic
        } else if amplitudes.len() >= 11 {
            let last11 = &amplitudes[amplitudes.len() - 11..];
            let monotone = last11.windows(2).all(|p| p[1] >= p[0]);
            let growth = last11[10] / last11[0];
            if monotone && growth >= 1.05f64.powi(10) {
                Verdict::Grows
            } else {
                decay_or_undecided(&amplitudes)
            }
        } else {
            decay_or_undecided(&amplitudes)
        }
    };
    OrbitClass {
        verdict,
        amplitude_series: amplitudes,
        period_estimate,
        max_deviation,
        final_amplitude,
    }
}

fn decay_or_undecided(amplitudes: &[f64]) -> Verdict {
    let n = amplitudes.len();
    let last5 = &amplitudes[n - 5..];
    let decreasing = last5.windows(2).all(|p| p[1] <= p[0]);
    let max_amp = amplitudes.iter().fold(0.0f64, |a, v| a.max(*v));
    if decreasing && last5[4] <= 0.5 * max_amp {
        Verdict::DecaysToEquilibrium
    } else {
        Verdict::Undecided
    }
}

/// Integration controls for the scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Steps per delay interval (dt = tau / dt_divisor), at least 20.
    pub dt_divisor: usize,
    /// Total time in units of the delay.
    pub t_end_factor: f64,
    /// Fraction of the trajectory discarded before classification.
    pub settle_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_divisor: 40,
            t_end_factor: 200.0,
            settle_fraction: 0.5,
        }
    }
}

/// Integrate and classify at `tau = hp.tau + dtau` for each offset; the
/// verdict pattern across the Hopf point reveals super/subcriticality.
/// A divergence error is folded into a `Grows` verdict.
pub fn hopf_side_scan(
    hp: &HopfPoint,
    params: &ModelParams,
    eq: &Equilibrium,
    offsets: &[f64],
    amp: f64,
    cfg: &SimConfig,
) -> Result<Vec<(f64, OrbitClass)>> {
    for &dtau in offsets {
        if dtau.abs() > 0.05 * hp.tau {
            return Err(Error::Domain(format!(
                "offset {dtau} exceeds 5% of tau = {}",
                hp.tau
            )));
        }
    }
    offsets
        .par_iter()
        .map(|&dtau| {
            let tau = hp.tau + dtau;
            let p = params.with_tau(tau)?;
            let history = HistoryFunction::perturbed(eq, amp);
            let dt = tau / cfg.dt_divisor as f64;
            match integrate_subspace(&p, eq, &history, cfg.t_end_factor * tau, dt) {
                Ok(traj) => Ok((dtau, classify_orbit(&traj, eq, cfg.settle_fraction))),
                Err(Error::Divergence { partial, .. }) => {
                    let mut oc = classify_orbit(&partial, eq, 0.0);
                    oc.verdict = Verdict::Grows;
                    Ok((dtau, oc))
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// CSV export; subspace layout is `t,x1,x2`, network layout is
/// `t,phi_1..phi_N,dphi_1..dphi_N`.
pub fn trajectory_csv_header(kind: TrajectoryKind) -> String {
    match kind {
        TrajectoryKind::Subspace => "t,x1,x2".to_string(),
        TrajectoryKind::Network { n_nodes } => {
            let mut h = String::from("t");
            for i in 1..=n_nodes {
                h.push_str(&format!(",phi_{i}"));
            }
            for i in 1..=n_nodes {
                h.push_str(&format!(",dphi_{i}"));
            }
            h
        }
    }
}

pub fn write_trajectory_csv<W: std::io::Write>(
    traj: &Trajectory,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "{}", trajectory_csv_header(traj.kind))?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        write!(out, "{t:.16e}")?;
        for v in s {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
