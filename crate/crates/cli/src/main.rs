//! Command-line front end: simulate, reduce, reconstruct and verify the
//! bundled example systems.
//!
//! Coordinates on the command line and in files are always listed
//! base-first: `particle2d` is `x,y`; `disk` is `phi,x,y,theta`;
//! `particle3d` is `x,y,z`. Numbers are serialized with 17 significant
//! digits so files round-trip losslessly.
//!
//! Exit codes: 0 on success, 1 on solver failures, 2 on validation
//! failures.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

use nonholorec::bundle::BundlePoint;
use nonholorec::examples::{
    make_particle_2d, make_particle_3d, make_rolling_disk, ExampleBundle, ReductionMode,
};
use nonholorec::group::{AlgebraCovector, GroupElement};
use nonholorec::reconstruction::{horizontal_lift_path, reconstruct};
use nonholorec::reduction::{build_chaplygin, build_horizontal, ReducedCurve, ReducedState, ReducedSystem};
use nonholorec::solver::{dla_residual, dla_trajectory, SolverConfig};
use nonholorec::system::DiscreteCurve;
use nonholorec::verify::{verify_example, VerifyOptions};
use nonholorec::Error;

#[derive(Parser)]
#[command(
    name = "nonholorec",
    about = "Discrete nonholonomic mechanics: simulate, reduce, reconstruct, verify",
    after_help = "The NONHOLOREC_TOL environment variable overrides the default residual tolerance."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the discrete Lagrange-D'Alembert equations and write the
    /// trajectory.
    Simulate(SimulateArgs),
    /// Integrate the reduced system and write the reduced trajectory.
    Reduce(ReduceArgs),
    /// Lift a reduced trajectory file back to the configuration bundle.
    Reconstruct(ReconstructArgs),
    /// Run the invariant suite and write a JSON report.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct SystemArgs {
    /// Example system: particle2d, disk or particle3d.
    #[arg(long)]
    example: String,
    /// Mass.
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    /// Discrete connection slope of particle2d (1 = Chaplygin).
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Disk radius.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Disk inertia about the rolling axis.
    #[arg(long, default_value_t = 1.0)]
    inertia_spin: f64,
    /// Disk inertia about the vertical axis.
    #[arg(long, default_value_t = 1.0)]
    inertia_steer: f64,
    /// Momentum level of particle3d (default: matched to the initial
    /// pair).
    #[arg(long)]
    mu_z: Option<f64>,
    /// Initial point, comma-separated coordinates (base first).
    #[arg(long)]
    q0: Option<String>,
    /// Second point, comma-separated coordinates (base first).
    #[arg(long)]
    q1: Option<String>,
    /// Residual tolerance (overrides NONHOLOREC_TOL and the default).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Number of steps (the trajectory has steps + 1 points).
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ReduceArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Reduction pipeline; defaults to the example's natural mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Reduced trajectory file produced by `reduce`.
    #[arg(long)]
    reduced: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    /// Example to verify; all three when omitted.
    #[arg(long)]
    example: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 1.0)]
    inertia_spin: f64,
    #[arg(long, default_value_t = 1.0)]
    inertia_steer: f64,
    #[arg(long)]
    mu_z: Option<f64>,
    /// Random samples per structural check.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Trajectory length for the dynamic checks.
    #[arg(long)]
    steps: Option<usize>,
    /// Displace an interior trajectory point by this amount first, to
    /// demonstrate the sensitivity of the residual checks.
    #[arg(long)]
    perturb: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    General,
    Chaplygin,
    Horizontal,
}

/// Failures mapped to process exit codes.
enum Failure {
    /// Exit 1: the solver did not produce an answer.
    Solver(String),
    /// Exit 2: the request was invalid.
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } | Error::SingularJacobian { .. } | Error::NonFinite(_) => {
                Failure::Solver(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Reduce(args) => cmd_reduce(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failure: {msg}");
            ExitCode::from(2)
        }
    }
}

/// 17 significant digits, lossless for f64.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn solver_config(tol: Option<f64>) -> Result<SolverConfig, Failure> {
    let tol = match tol {
        Some(t) => Some(t),
        None => match std::env::var("NONHOLOREC_TOL") {
            Ok(s) => Some(s.parse::<f64>().map_err(|_| {
                Failure::Validation(format!("NONHOLOREC_TOL is not a number: {s}"))
            })?),
            Err(_) => None,
        },
    };
    let mut cfg = SolverConfig::default();
    if let Some(t) = tol {
        if t <= 0.0 || !t.is_finite() {
            return Err(Failure::Validation("tolerance must be positive".into()));
        }
        cfg.residual_tolerance = t;
    }
    Ok(cfg)
}

fn parse_point(ex: &ExampleBundle, text: &str, what: &str) -> Result<BundlePoint, Failure> {
    let coords: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Validation(format!("{what}: cannot parse `{text}`")))?;
    let bundle = ex.system.bundle();
    if coords.len() != bundle.dim() {
        return Err(Failure::Validation(format!(
            "{what}: expected {} coordinates (base first), got {}",
            bundle.dim(),
            coords.len()
        )));
    }
    Ok(bundle.point_from_coords(&DVector::from_row_slice(&coords)))
}

/// Build the requested example; for particle3d the momentum level defaults
/// to the one carried by the initial pair.
fn load_example(args: &SystemArgs) -> Result<(ExampleBundle, BundlePoint, BundlePoint), Failure> {
    let proto = match args.example.as_str() {
        "particle2d" => make_particle_2d(args.m, args.b),
        "disk" => make_rolling_disk(args.m, args.radius, args.inertia_spin, args.inertia_steer),
        "particle3d" => make_particle_3d(args.m, args.mu_z.unwrap_or(0.0)),
        other => {
            return Err(Failure::Validation(format!(
                "unknown example `{other}` (expected particle2d, disk or particle3d)"
            )))
        }
    }
    .map_err(Failure::from)?;

    let q0 = match &args.q0 {
        Some(t) => parse_point(&proto, t, "--q0")?,
        None => proto.default_initial.0.clone(),
    };
    let q1 = match &args.q1 {
        Some(t) => parse_point(&proto, t, "--q1")?,
        None => proto.default_initial.1.clone(),
    };

    if args.example == "particle3d" {
        let dz = q1.fiber().coords()[0] - q0.fiber().coords()[0];
        let mu = args.mu_z.unwrap_or(args.m * dz);
        if (mu - args.m * dz).abs() > 1e-9 {
            return Err(Failure::Validation(format!(
                "--mu-z {} is inconsistent with the initial pair (m dz = {})",
                mu,
                args.m * dz
            )));
        }
        let ex = make_particle_3d(args.m, mu).map_err(Failure::from)?;
        return Ok((ex, q0, q1));
    }
    Ok((proto, q0, q1))
}

fn reduced_system(ex: &ExampleBundle) -> ReducedSystem {
    ReducedSystem::new(
        Arc::clone(&ex.system),
        Arc::clone(&ex.connection),
        Arc::clone(&ex.discrete_connection),
    )
}

fn params_json(ex: &ExampleBundle) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for (name, value) in &ex.params {
        map.insert((*name).to_string(), json!(value));
    }
    serde_json::Value::Object(map)
}

fn trajectory_rows(curve: &DiscreteCurve) -> Vec<Vec<f64>> {
    curve.iter().map(|q| q.coords().iter().copied().collect()).collect()
}

fn write_trajectory(
    path: &PathBuf,
    format: Format,
    ex: &ExampleBundle,
    curve: &DiscreteCurve,
    multipliers: &[DVector<f64>],
    residual: (f64, f64),
) -> Result<(), Failure> {
    match format {
        Format::Csv => {
            let mut out = String::new();
            for (k, q) in curve.iter().enumerate() {
                let mut row = vec![k.to_string()];
                row.extend(q.coords().iter().map(|&x| fmt(x)));
                // Multipliers belong to interior points.
                if k >= 1 && k - 1 < multipliers.len() {
                    row.extend(multipliers[k - 1].iter().map(|&x| fmt(x)));
                }
                out.push_str(&row.join(","));
                out.push('\n');
            }
            fs::write(path, out)?;
        }
        Format::Json => {
            let doc = json!({
                "example": ex.name,
                "params": params_json(ex),
                "trajectory": trajectory_rows(curve),
                "multipliers": multipliers.iter().map(|l| l.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
                "residuals": {"dla": residual.0, "constraint": residual.1},
            });
            fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(())
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Validation(format!("json error: {e}"))
    }
}

fn trajectory_residuals(
    ex: &ExampleBundle,
    curve: &DiscreteCurve,
) -> Result<(f64, f64), Failure> {
    let mut dla: f64 = 0.0;
    let mut chi: f64 = 0.0;
    for k in 1..curve.len().saturating_sub(1) {
        let (proj, constraint) = dla_residual(
            &ex.system,
            curve.point(k - 1),
            curve.point(k),
            curve.point(k + 1),
        )
        .map_err(Failure::from)?;
        dla = dla.max(proj.amax());
        if !constraint.is_empty() {
            chi = chi.max(constraint.amax());
        }
    }
    for k in 0..curve.len().saturating_sub(1) {
        let c = ex.system.constraint_residual(curve.point(k), curve.point(k + 1));
        if !c.is_empty() {
            chi = chi.max(c.amax());
        }
    }
    Ok((dla, chi))
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, Failure> {
    let cfg = solver_config(args.system.tol)?;
    let (ex, q0, q1) = load_example(&args.system)?;
    let (curve, multipliers) = dla_trajectory(&ex.system, &q0, &q1, args.steps, &cfg)?;
    let residual = trajectory_residuals(&ex, &curve)?;
    write_trajectory(&args.out, args.format, &ex, &curve, &multipliers, residual)?;
    Ok(ExitCode::SUCCESS)
}

fn effective_mode(ex: &ExampleBundle, requested: Option<Mode>) -> Mode {
    requested.unwrap_or(match ex.mode {
        ReductionMode::General => Mode::General,
        ReductionMode::Chaplygin => Mode::Chaplygin,
        ReductionMode::TwoStage(_) => Mode::Horizontal,
    })
}

fn write_reduced(
    path: &PathBuf,
    format: Format,
    ex: &ExampleBundle,
    mode: &str,
    curve: &ReducedCurve,
) -> Result<(), Failure> {
    match format {
        Format::Csv => {
            let mut out = String::new();
            for (k, state) in curve.states.iter().enumerate() {
                let mut row = vec![k.to_string()];
                row.extend(state.base.iter().map(|&x| fmt(x)));
                row.extend(state.fiber_step.coords().iter().map(|&x| fmt(x)));
                out.push_str(&row.join(","));
                out.push('\n');
            }
            let mut last = vec![curve.states.len().to_string()];
            last.extend(curve.terminal_base.iter().map(|&x| fmt(x)));
            out.push_str(&last.join(","));
            out.push('\n');
            fs::write(path, out)?;
        }
        Format::Json => {
            let doc = json!({
                "example": ex.name,
                "params": params_json(ex),
                "mode": mode,
                "states": curve.states.iter().map(|s| {
                    s.base.iter().chain(s.fiber_step.coords().iter()).copied().collect::<Vec<_>>()
                }).collect::<Vec<_>>(),
                "terminal_base": curve.terminal_base.iter().copied().collect::<Vec<_>>(),
            });
            fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(())
}

/// Momentum covector for the horizontal pipeline, from the flags or the
/// initial pair.
fn horizontal_momentum(ex: &ExampleBundle, q0: &BundlePoint, q1: &BundlePoint) -> AlgebraCovector {
    match &ex.mode {
        ReductionMode::TwoStage(mu) => mu.clone(),
        _ => {
            let dz = q1.fiber().displacement_from(q0.fiber());
            AlgebraCovector::new(dz * ex.param("m").unwrap_or(1.0))
        }
    }
}

fn reduce_curve(
    ex: &ExampleBundle,
    mode: Mode,
    q0: &BundlePoint,
    q1: &BundlePoint,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<ReducedCurve, Failure> {
    match mode {
        Mode::General => {
            let red = reduced_system(ex);
            let theta0 = ex
                .discrete_connection
                .form(q0, q1)
                .conjugate(&q0.fiber().inverse());
            Ok(red.trajectory(q0.project(), &theta0, q1.project(), steps, cfg)?)
        }
        Mode::Chaplygin => {
            let ch = build_chaplygin(
                Arc::clone(&ex.system),
                Arc::clone(&ex.discrete_connection),
            )?;
            let path = ch.base.trajectory(q0.project(), q1.project(), steps, cfg)?;
            Ok(base_path_to_curve(ex, path))
        }
        Mode::Horizontal => {
            let mu = horizontal_momentum(ex, q0, q1);
            let inner = SolverConfig::with_tolerance(1e-13);
            let hr = build_horizontal(
                Arc::clone(&ex.system),
                Arc::clone(&ex.connection),
                mu,
                &inner,
            )?;
            let path = hr.base.trajectory(q0.project(), q1.project(), steps, cfg)?;
            Ok(base_path_to_curve(ex, path))
        }
    }
}

/// Base trajectories carry identity fiber steps in reduced-file form.
fn base_path_to_curve(ex: &ExampleBundle, path: Vec<DVector<f64>>) -> ReducedCurve {
    let e = ex.system.bundle().group().identity();
    let terminal_base = path.last().cloned().unwrap_or_else(|| DVector::zeros(0));
    let states = path[..path.len() - 1]
        .iter()
        .map(|r| ReducedState {
            base: r.clone(),
            fiber_step: e.clone(),
        })
        .collect();
    ReducedCurve {
        states,
        terminal_base,
    }
}

fn cmd_reduce(args: ReduceArgs) -> Result<ExitCode, Failure> {
    let cfg = solver_config(args.system.tol)?;
    let (ex, q0, q1) = load_example(&args.system)?;
    let mode = effective_mode(&ex, args.mode);
    let curve = reduce_curve(&ex, mode, &q0, &q1, args.steps, &cfg)?;
    let mode_name = match mode {
        Mode::General => "general",
        Mode::Chaplygin => "chaplygin",
        Mode::Horizontal => "horizontal",
    };
    write_reduced(&args.out, args.format, &ex, mode_name, &curve)?;
    Ok(ExitCode::SUCCESS)
}

fn read_reduced(ex: &ExampleBundle, path: &PathBuf) -> Result<ReducedCurve, Failure> {
    let text = fs::read_to_string(path)?;
    let bundle = ex.system.bundle();
    let (nb, nf) = (bundle.base_dim(), bundle.fiber_dim());
    let mut states = Vec::new();
    let mut terminal: Option<DVector<f64>> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| {
            Failure::Validation(format!(
                "reduced file line {}: {what}",
                lineno + 1
            ))
        };
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("cannot parse coordinates"))?;
        if values.len() == nb + nf {
            states.push(ReducedState {
                base: DVector::from_row_slice(&values[..nb]),
                fiber_step: GroupElement::new(
                    bundle.group(),
                    DVector::from_row_slice(&values[nb..]),
                ),
            });
        } else if values.len() == nb {
            terminal = Some(DVector::from_row_slice(&values));
        } else {
            return Err(bad(&format!(
                "expected {} or {} coordinates, got {}",
                nb + nf,
                nb,
                values.len()
            )));
        }
    }
    let terminal_base = terminal
        .ok_or_else(|| Failure::Validation("reduced file has no terminal base row".into()))?;
    if states.is_empty() {
        return Err(Failure::Validation("reduced file has no states".into()));
    }
    Ok(ReducedCurve {
        states,
        terminal_base,
    })
}

fn cmd_reconstruct(args: ReconstructArgs) -> Result<ExitCode, Failure> {
    let cfg = solver_config(args.system.tol)?;
    let (ex, q0, q1) = load_example(&args.system)?;
    let mode = effective_mode(&ex, args.mode);
    let curve = read_reduced(&ex, &args.reduced)?;
    let tol = cfg.residual_tolerance.max(1e-9);
    let lifted = match mode {
        Mode::General | Mode::Chaplygin => {
            let q1_check = args.system.q1.is_some().then_some(&q1);
            reconstruct(
                &ex.system,
                &ex.discrete_connection,
                &curve,
                &q0,
                q1_check,
                tol,
            )?
        }
        Mode::Horizontal => {
            let mu = horizontal_momentum(&ex, &q0, &q1);
            let inner = SolverConfig::with_tolerance(1e-13);
            let hr = build_horizontal(
                Arc::clone(&ex.system),
                Arc::clone(&ex.connection),
                mu,
                &inner,
            )?;
            let mut bases: Vec<DVector<f64>> =
                curve.states.iter().map(|s| s.base.clone()).collect();
            bases.push(curve.terminal_base.clone());
            horizontal_lift_path(&hr.connection, &bases, &q0, tol)?
        }
    };
    let residual = trajectory_residuals(&ex, &lifted)?;
    write_trajectory(&args.out, args.format, &ex, &lifted, &[], residual)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Failure> {
    let cfg = solver_config(args.tol)?;
    let names: Vec<&str> = match &args.example {
        Some(name) => vec![name.as_str()],
        None => vec!["particle2d", "disk", "particle3d"],
    };
    let mut reports = Vec::new();
    for name in names {
        let ex = match name {
            "particle2d" => make_particle_2d(args.m, args.b),
            "disk" => make_rolling_disk(args.m, args.radius, args.inertia_spin, args.inertia_steer),
            "particle3d" => {
                let mu = args.mu_z.unwrap_or(args.m * 0.02);
                make_particle_3d(args.m, mu)
            }
            other => {
                return Err(Failure::Validation(format!(
                    "unknown example `{other}` (expected particle2d, disk or particle3d)"
                )))
            }
        }
        .map_err(Failure::from)?;
        let opts = VerifyOptions {
            samples: args.samples,
            steps: args.steps,
            perturbation: args.perturb,
            solver: cfg,
            ..Default::default()
        };
        reports.push(verify_example(&ex, &opts)?);
    }

    let all_passed = reports.iter().all(|r| r.passed());
    let doc = json!({
        "passed": all_passed,
        "reports": reports.iter().map(|r| json!({
            "example": r.example,
            "passed": r.passed(),
            "max_residual": r.max_residual(),
            "checks": r.checks.iter().map(|c| json!({
                "name": c.name,
                "max_residual": c.max_residual,
                "tolerance": c.tolerance,
                "passed": c.passed(),
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&doc)?;
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    if all_passed {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}
