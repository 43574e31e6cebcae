//! Command-line front end: equilibria tables, Hopf-curve and Lyapunov-map
//! CSV export, analytic/empirical verification reports, and trajectory
//! simulation.
//!
//! Exit codes: 0 success, 2 input/domain error, 3 analytic/empirical
//! inconsistency, 4 divergence (partial output retained).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pllhopf::centermanifold::{lyapunov_map, point_report, LYAP_CSV_HEADER};
use pllhopf::ddesim::{
    classify_orbit, integrate_network, integrate_subspace, write_trajectory_csv, HistoryFunction,
};
use pllhopf::model::{equilibrium, linearize, nonlinear_coeffs, Branch, ModelParams};
use pllhopf::spectrum::{hopf_curves, nearest_hopf_point, MuRange, HOPF_CSV_HEADER};
use pllhopf::verify::{run_verify, VerifyConfig};
use pllhopf::{tol, Error};

const EXIT_DOMAIN: u8 = 2;
const EXIT_INCONSISTENT: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "pllhopf",
    about = "Hopf bifurcation and periodic-orbit stability analysis for delay-coupled PLL networks",
    disable_version_flag = true
)]
struct Cli {
    /// Print a machine-readable version report (includes tolerance constants).
    #[arg(long, global = true)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// List synchronized equilibria for a gain value.
    Equilibria(EquilibriaArgs),
    /// Trace Hopf curves in the (mu, tau) plane and export them as CSV.
    Hopf(SweepArgs),
    /// Evaluate the Lyapunov coefficient along the Hopf curves.
    Lyapunov(LyapunovArgs),
    /// Check analytic stability against direct simulation at one Hopf point.
    Verify(VerifyArgs),
    /// Integrate the delay model and export the trajectory as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Output path (default: stdout).
    #[arg(long, env = "PLLHOPF_OUTPUT")]
    output: Option<String>,
    /// Output format.
    #[arg(long, env = "PLLHOPF_FORMAT", default_value = "csv")]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct EquilibriaArgs {
    /// Coupling gain K (requires K >= 1).
    #[arg(long = "K", env = "PLLHOPF_K")]
    k: f64,
    /// Winding-index range, e.g. `0..1` (inclusive).
    #[arg(long = "n", env = "PLLHOPF_N_RANGE", default_value = "0..0")]
    n_range: String,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Coupling gain K (requires K > 1).
    #[arg(long = "K", env = "PLLHOPF_K")]
    k: f64,
    /// mu sweep `start:step:stop`, e.g. `0.05:0.005:0.5`.
    #[arg(long = "mu", env = "PLLHOPF_MU", default_value = "0.05:0.005:0.5")]
    mu: String,
    /// Delay-ladder index range, e.g. `0..6` (inclusive).
    #[arg(long = "n", env = "PLLHOPF_N_RANGE", default_value = "0..6")]
    n_range: String,
    /// Equilibrium branch (the reference curves live on `minus`).
    #[arg(long, env = "PLLHOPF_BRANCH", default_value = "minus")]
    branch: String,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct LyapunovArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Evaluate a single point `MU,TAU` instead of the sweep and emit a
    /// verbose JSON report with every intermediate coefficient.
    #[arg(long = "at", env = "PLLHOPF_AT")]
    at: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Coupling gain K (requires K > 1).
    #[arg(long = "K", env = "PLLHOPF_K")]
    k: f64,
    /// Loop parameter mu.
    #[arg(long, env = "PLLHOPF_MU")]
    mu: f64,
    /// Delay near the Hopf point to verify.
    #[arg(long, env = "PLLHOPF_TAU")]
    tau: f64,
    /// Equilibrium branch.
    #[arg(long, env = "PLLHOPF_BRANCH", default_value = "minus")]
    branch: String,
    /// Perturbation size for the unstable-side scan.
    #[arg(long, env = "PLLHOPF_EPS", default_value_t = 1e-2)]
    eps: f64,
    /// Integration length for the unstable-side runs, in delay units.
    #[arg(long, env = "PLLHOPF_T_END_FACTOR", default_value_t = 2500.0)]
    t_end_factor: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Coupling gain K (requires K >= 1 for the equilibrium reference).
    #[arg(long = "K", env = "PLLHOPF_K")]
    k: f64,
    /// Loop parameter mu.
    #[arg(long, env = "PLLHOPF_MU")]
    mu: f64,
    /// Delay tau.
    #[arg(long, env = "PLLHOPF_TAU")]
    tau: f64,
    /// Node count; when given, the full network is integrated instead of the
    /// fixed-point-subspace scalar model.
    #[arg(long = "N", env = "PLLHOPF_NODES")]
    n_nodes: Option<usize>,
    /// Whether all nodes start from the same perturbed history (network
    /// runs); `false` spreads graduated offsets across the nodes.
    #[arg(
        long,
        env = "PLLHOPF_IDENTICAL_HISTORY",
        default_value_t = true,
        action = clap::ArgAction::Set
    )]
    identical_history: bool,
    /// Equilibrium branch for the reference state.
    #[arg(long, env = "PLLHOPF_BRANCH", default_value = "minus")]
    branch: String,
    /// Constant phase offset of the initial history (0 = equilibrium).
    #[arg(long, env = "PLLHOPF_EPS", default_value_t = 1e-2)]
    eps: f64,
    /// Step size; must divide tau with quotient >= 20 (default tau/40).
    #[arg(long, env = "PLLHOPF_DT")]
    dt: Option<f64>,
    /// Integration end time (default 200 tau).
    #[arg(long, env = "PLLHOPF_T_END")]
    t_end: Option<f64>,
    /// Also write an orbit-classification JSON report to this path
    /// ("-" for stderr).
    #[arg(long, env = "PLLHOPF_CLASSIFY")]
    classify: Option<String>,
    /// Settling fraction discarded before classification.
    #[arg(long, env = "PLLHOPF_SETTLE", default_value_t = 0.5)]
    settle: f64,
    #[command(flatten)]
    out: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!("{}", version_json());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given (try --help)");
        return ExitCode::from(EXIT_DOMAIN);
    };
    match dispatch(command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn version_json() -> String {
    format!(
        concat!(
            "{{\"name\":\"pllhopf\",\"version\":\"{}\",\"tolerances\":{{",
            "\"residual\":{:e},\"resonance\":{:e},\"newton_polish\":{:e},",
            "\"simple\":{:e},\"orthonormality\":{:e},\"h_ode\":{:e},",
            "\"divergence_norm\":{:e},\"double_root\":{:e}}}}}"
        ),
        env!("CARGO_PKG_VERSION"),
        tol::RESIDUAL,
        tol::RESONANCE,
        tol::NEWTON_POLISH,
        tol::SIMPLE,
        tol::ORTHONORMALITY,
        tol::H_ODE,
        tol::DIVERGENCE_NORM,
        tol::DOUBLE_ROOT,
    )
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => EXIT_DIVERGENCE,
        _ => EXIT_DOMAIN,
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Equilibria(args) => cmd_equilibria(args),
        Command::Hopf(args) => cmd_hopf(args),
        Command::Lyapunov(args) => cmd_lyapunov(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn writer_for(output: &Option<String>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match output {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn parse_branch(s: &str) -> anyhow::Result<Branch> {
    s.parse::<Branch>()
        .map_err(|e| anyhow::Error::new(Error::Domain(e)))
}

/// Parse `a..b` into an inclusive range.
fn parse_n_range(s: &str) -> anyhow::Result<std::ops::RangeInclusive<i32>> {
    let parts: Vec<&str> = s.split("..").collect();
    let err = || Error::Domain(format!("malformed index range `{s}` (expected a..b)"));
    if parts.len() != 2 {
        return Err(err().into());
    }
    let lo: i32 = parts[0].trim().parse().map_err(|_| err())?;
    let hi: i32 = parts[1].trim().parse().map_err(|_| err())?;
    if hi < lo {
        return Err(err().into());
    }
    Ok(lo..=hi)
}

/// Parse `start:step:stop`.
fn parse_mu_range(s: &str) -> anyhow::Result<MuRange> {
    let parts: Vec<&str> = s.split(':').collect();
    let err = || {
        Error::Domain(format!(
            "malformed mu range `{s}` (expected start:step:stop)"
        ))
    };
    if parts.len() != 3 {
        return Err(err().into());
    }
    let vals: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| err())?;
    Ok(MuRange::new(vals[0], vals[1], vals[2])?)
}

fn cmd_equilibria(args: EquilibriaArgs) -> anyhow::Result<ExitCode> {
    let n_range = parse_n_range(&args.n_range)?;
    let mut rows = Vec::new();
    for n in n_range {
        for branch in [Branch::Plus, Branch::Minus] {
            rows.push(equilibrium(args.k, branch, n)?);
        }
    }
    let mut out = writer_for(&args.out.output)?;
    match args.out.format {
        Format::Csv => {
            writeln!(out, "branch,n,phi,sin2phi,cos2phi")?;
            for eq in &rows {
                writeln!(
                    out,
                    "{},{},{:.16e},{:.16e},{:.16e}",
                    eq.branch, eq.winding, eq.phi, eq.sin2phi, eq.cos2phi
                )?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &rows)?;
            writeln!(out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_hopf(args: SweepArgs) -> anyhow::Result<ExitCode> {
    let branch = parse_branch(&args.branch)?;
    let mu_range = parse_mu_range(&args.mu)?;
    let n_range = parse_n_range(&args.n_range)?;
    let sweep = hopf_curves(args.k, &mu_range, n_range, branch)?;
    for w in &sweep.warnings {
        eprintln!("warning: {w}");
    }
    let mut out = writer_for(&args.out.output)?;
    match args.out.format {
        Format::Csv => {
            writeln!(out, "{HOPF_CSV_HEADER}")?;
            for curve in &sweep.curves {
                for p in &curve.points {
                    writeln!(out, "{}", p.to_csv_row())?;
                }
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &sweep.curves)?;
            writeln!(out)?;
        }
    }
    drop(out);
    let (mut tau_min, mut tau_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut count = 0usize;
    for p in sweep.curves.iter().flat_map(|c| &c.points) {
        tau_min = tau_min.min(p.tau);
        tau_max = tau_max.max(p.tau);
        count += 1;
    }
    if count == 0 {
        eprintln!(
            "0 curves, 0 points, mu in [{}, {}]",
            mu_range.start, mu_range.stop
        );
    } else {
        eprintln!(
            "{} curves, {count} points, mu in [{}, {}], tau in [{tau_min:.4}, {tau_max:.4}]",
            sweep.curves.len(),
            mu_range.start,
            mu_range.stop,
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_lyapunov(args: LyapunovArgs) -> anyhow::Result<ExitCode> {
    let sweep_args = args.sweep;
    let branch = parse_branch(&sweep_args.branch)?;
    if let Some(at) = &args.at {
        // Single-point verbose report.
        let parts: Vec<&str> = at.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Domain(format!("--at expects MU,TAU, got `{at}`")).into());
        }
        let mu: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("bad mu in --at `{at}`")))?;
        let tau: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("bad tau in --at `{at}`")))?;
        let hp = nearest_hopf_point(sweep_args.k, mu, tau, branch, 0..=6)?;
        let params = ModelParams::new(sweep_args.k, mu, hp.tau, 2)?;
        let eq = equilibrium(sweep_args.k, branch, 0)?;
        let lin = linearize(&params, &eq);
        let nl = nonlinear_coeffs(&params, &eq);
        let report = point_report(&hp, &lin, &nl)?;
        let mut out = writer_for(&sweep_args.out.output)?;
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
        return Ok(ExitCode::SUCCESS);
    }

    let mu_range = parse_mu_range(&sweep_args.mu)?;
    let n_range = parse_n_range(&sweep_args.n_range)?;
    let sweep = hopf_curves(sweep_args.k, &mu_range, n_range, branch)?;
    let map = lyapunov_map(sweep_args.k, &sweep.curves);

    let mut out = writer_for(&sweep_args.out.output)?;
    match sweep_args.out.format {
        Format::Csv => {
            writeln!(out, "{LYAP_CSV_HEADER}")?;
            for row in &map.rows {
                writeln!(out, "{}", row.to_csv_row())?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &map)?;
            writeln!(out)?;
        }
    }
    drop(out);

    // Per-point failures go to a sidecar file next to the output.
    if !map.failures.is_empty() {
        match &sweep_args.out.output {
            Some(path) => {
                let sidecar = format!("{path}.failures.log");
                let mut f = File::create(&sidecar)?;
                for line in &map.failures {
                    writeln!(f, "{line}")?;
                }
                eprintln!("{} point failures logged to {sidecar}", map.failures.len());
            }
            None => {
                for line in &map.failures {
                    eprintln!("point failure: {line}");
                }
            }
        }
    }
    for change in &map.sign_changes {
        eprintln!(
            "sign change of a at mu* = {:.6} on the {} family (n = {}, root {})",
            change.mu_star,
            if change.negative_transversality {
                "Re(lambda') < 0"
            } else {
                "Re(lambda') > 0"
            },
            change.n_branch,
            change.root_index,
        );
    }
    if map.sign_changes.is_empty() {
        eprintln!("no sign change of a detected in the sweep window");
    }
    let total = map.rows.len() + map.failures.len();
    if total > 0 && (map.rows.len() as f64) < 0.9 * total as f64 {
        eprintln!(
            "error: only {}/{total} points evaluated successfully",
            map.rows.len()
        );
        return Ok(ExitCode::from(EXIT_DOMAIN));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let branch = parse_branch(&args.branch)?;
    let mut cfg = VerifyConfig {
        eps: args.eps,
        ..VerifyConfig::default()
    };
    cfg.unstable_sim.t_end_factor = args.t_end_factor;
    let report = run_verify(args.k, args.mu, args.tau, branch, &cfg)?;
    let mut out = writer_for(&args.out.output)?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    drop(out);
    if report.consistent {
        eprintln!(
            "consistent: analytic sign(a) = {} matches empirical {:?}",
            report.lyapunov_sign, report.empirical
        );
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "INCONSISTENT: analytic sign(a) = {} vs empirical {:?}",
            report.lyapunov_sign, report.empirical
        );
        Ok(ExitCode::from(EXIT_INCONSISTENT))
    }
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let branch = parse_branch(&args.branch)?;
    let n_nodes = args.n_nodes.unwrap_or(2);
    let params = ModelParams::new(args.k, args.mu, args.tau, n_nodes)?;
    let eq = equilibrium(args.k, branch, 0)?;
    let dt = args.dt.unwrap_or(args.tau / 40.0);
    let t_end = args.t_end.unwrap_or(200.0 * args.tau);

    let result = if args.n_nodes.is_some() {
        let history = if args.identical_history {
            vec![HistoryFunction::perturbed(&eq, args.eps); n_nodes]
        } else {
            // Deterministic per-node offsets spread around the equilibrium.
            (0..n_nodes)
                .map(|i| {
                    HistoryFunction::perturbed(&eq, args.eps * (i as f64 + 1.0) / n_nodes as f64)
                })
                .collect()
        };
        integrate_network(&params, &history, t_end, dt)
    } else {
        let history = HistoryFunction::perturbed(&eq, args.eps);
        integrate_subspace(&params, &eq, &history, t_end, dt)
    };

    let (traj, exit) = match result {
        Ok(traj) => (traj, ExitCode::SUCCESS),
        Err(Error::Divergence { t, limit, partial }) => {
            eprintln!("divergence at t = {t:.4} (norm > {limit:.1e}); partial trajectory retained");
            (*partial, ExitCode::from(EXIT_DIVERGENCE))
        }
        Err(e) => return Err(e.into()),
    };

    let mut out = writer_for(&args.out.output)?;
    match args.out.format {
        Format::Csv => write_trajectory_csv(&traj, &mut out)?,
        Format::Json => {
            serde_json::to_writer(&mut out, &traj)?;
            writeln!(out)?;
        }
    }
    drop(out);

    if let Some(path) = &args.classify {
        let oc = classify_orbit(&traj, &eq, args.settle);
        let json = serde_json::to_string_pretty(&oc)?;
        if path == "-" {
            eprintln!("{json}");
        } else {
            let mut f = File::create(path)?;
            writeln!(f, "{json}")?;
        }
    }
    Ok(exit)
}
