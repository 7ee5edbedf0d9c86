//! Command-line front end: `mesh`, `solve`, `check` and `converge`.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 numerical failure,
//! 3 a check or acceptance window failed. Data goes to stdout or files,
//! diagnostics to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::expr::Expr;
use crate::fem::{solve_dirichlet, CoefficientField, FeSpace, FemError, LinearSolver};
use crate::io::{read_msh_with_warnings, write_csv, write_field_vtk, write_msh};
use crate::linalg::{BicgstabOptions, Preconditioner};
use crate::mesh::{build_disc_mesh, mesh_size, Mesh, Point2};
use crate::verify::{convergence_study, ConvergenceTable};
use crate::wellposed::{analyze, discriminants, AnalysisOptions, MODEL_CONTINUITY};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Rate windows judged on the finest pair of a convergence study.
pub const L2_RATE_WINDOW: (f64, f64) = (1.8, 2.2);
pub const H1_RATE_WINDOW: (f64, f64) = (0.85, 1.15);

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::CheckFailed(_) => EXIT_CHECK,
        }
    }
}

impl From<FemError> for CliError {
    fn from(e: FemError) -> Self {
        match e {
            FemError::Expr(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ellipfem",
    version,
    about = "P1 finite elements for u_xx + x u_xy + u_yy = f on the unit disc"
)]
pub struct Cli {
    /// key=value file whose entries are applied as flags (command-line flags win)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Log progress to stderr (read by the binary before logging starts)
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Triangulate the unit disc and write a .msh file
    Mesh(MeshArgs),
    /// Solve the Dirichlet problem and write the field
    Solve(SolveArgs),
    /// Report the well-posedness constants and run the property checks
    Check(CheckArgs),
    /// Manufactured-solution convergence study
    Converge(ConvergeArgs),
}

#[derive(Debug, Args)]
pub struct MeshSource {
    /// Points on the boundary circle
    #[arg(long, default_value_t = 50, value_name = "N")]
    pub boundary_points: usize,

    /// Read the mesh from a .msh file instead of generating it
    #[arg(long, value_name = "FILE")]
    pub mesh: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct Source {
    /// Right-hand side f of u_xx + x u_xy + u_yy = f
    #[arg(long = "f", value_name = "EXPR", allow_hyphen_values = true)]
    pub f: Option<String>,

    /// Weak-form right-hand side f1 = -f
    #[arg(long = "f1", value_name = "EXPR", allow_hyphen_values = true)]
    pub f1: Option<String>,
}

impl Source {
    /// `f1`, negating `--f` when that was given.
    fn f1(&self, default: Option<&str>) -> Result<Expr, CliError> {
        let parse = |s: &str| {
            s.parse::<Expr>()
                .map_err(|e| CliError::Usage(format!("bad expression `{s}`: {e}")))
        };
        match (&self.f, &self.f1, default) {
            (Some(f), None, _) => Ok(Expr::negated(parse(f)?)),
            (None, Some(f1), _) => parse(f1),
            (None, None, Some(d)) => parse(d),
            (None, None, None) => Err(CliError::Usage("one of --f or --f1 is required".into())),
            (Some(_), Some(_), _) => Err(CliError::Usage("--f and --f1 are mutually exclusive".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    Bicgstab,
    Lu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PreconditionerChoice {
    Jacobi,
    None,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = SolverChoice::Bicgstab)]
    pub solver: SolverChoice,

    /// Relative residual tolerance for BiCGSTAB
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,

    /// BiCGSTAB iteration cap (default 10 n)
    #[arg(long)]
    pub max_iter: Option<usize>,

    #[arg(long, value_enum, default_value_t = PreconditionerChoice::Jacobi)]
    pub preconditioner: PreconditionerChoice,
}

impl SolverArgs {
    fn solver(&self) -> Result<LinearSolver, CliError> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(CliError::Usage(format!("--tol must be positive, got {}", self.tol)));
        }
        Ok(match self.solver {
            SolverChoice::Lu => LinearSolver::DenseLu,
            SolverChoice::Bicgstab => LinearSolver::Bicgstab(BicgstabOptions {
                tol: self.tol,
                max_iter: self.max_iter,
                preconditioner: match self.preconditioner {
                    PreconditionerChoice::Jacobi => Preconditioner::Jacobi,
                    PreconditionerChoice::None => Preconditioner::None,
                },
            }),
        })
    }
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long, default_value_t = 50, value_name = "N")]
    pub boundary_points: usize,

    /// Output .msh path (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub mesh: MeshSource,
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub solver: SolverArgs,

    /// VTK output path
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// CSV output path (x,y,u per node)
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,

    /// Also save the mesh
    #[arg(long, value_name = "FILE")]
    pub msh: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub mesh: MeshSource,
    /// Source for the stability check (default f1 = x*y)
    #[command(flatten)]
    pub source: Source,

    /// Random field pairs for the coercivity and continuity checks
    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    /// Exact solution; should vanish on the unit circle
    #[arg(long, value_name = "EXPR", allow_hyphen_values = true)]
    pub exact: String,

    /// Boundary point counts, strictly increasing
    #[arg(long, value_delimiter = ',', default_values_t = [25, 50, 100, 200])]
    pub levels: Vec<usize>,

    /// CSV output path for the table
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

const SUBCOMMANDS: [&str; 4] = ["mesh", "solve", "check", "converge"];

/// Reads `key = value` lines as `(flag, value)` pairs. Blank lines and `#`
/// comments are skipped; underscores in keys become dashes.
pub fn config_entries(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        entries.push((key.trim().replace('_', "-"), value.trim().trim_matches('"').to_string()));
    }
    Ok(entries)
}

/// Flag arguments for config entries; `true` becomes a bare flag and
/// `false` drops it.
pub fn config_to_args(text: &str) -> Result<Vec<String>, CliError> {
    let mut args = Vec::new();
    for (key, value) in config_entries(text)? {
        match value.as_str() {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => {
                args.push(format!("--{key}"));
                args.push(value);
            }
        }
    }
    Ok(args)
}

/// Flags that occupy the same slot: setting one on the command line hides
/// the others in the config file.
fn slot(key: &str) -> &str {
    match key {
        "f" | "f1" => "source",
        other => other,
    }
}

/// Splices config-file flags in right after the subcommand, skipping any
/// the command line already sets.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let given: Vec<&str> = args
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| slot(a.split('=').next().unwrap_or(a)))
        .collect();
    let mut extra = Vec::new();
    for (key, value) in config_entries(&text)? {
        if key == "config" || given.contains(&slot(&key)) {
            continue;
        }
        match value.as_str() {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => extra.extend([format!("--{key}"), value]),
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Usage(format!("cannot write to stdout: {e}")))
}

fn load_mesh(src: &MeshSource) -> Result<Mesh, CliError> {
    match &src.mesh {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let read =
                read_msh_with_warnings(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            for w in &read.warnings {
                eprintln!("warning: {}: {w}", path.display());
            }
            Ok(read.mesh)
        }
        None => disc_mesh(src.boundary_points),
    }
}

fn disc_mesh(n: usize) -> Result<Mesh, CliError> {
    if n < 3 {
        return Err(CliError::Usage(format!(
            "--boundary-points must be at least 3, got {n}"
        )));
    }
    build_disc_mesh(n).map_err(|e| CliError::Numerical(e.to_string()))
}

fn cmd_mesh(args: &MeshArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mesh = disc_mesh(args.boundary_points)?;
    let text = write_msh(&mesh);
    let stats = format!(
        "nodes={}\ntriangles={}\nboundary_edges={}\nh={:.10}\narea={:.10}\n",
        mesh.n_nodes(),
        mesh.n_triangles(),
        mesh.boundary_edges().len(),
        mesh_size(&mesh),
        mesh.area()
    );
    match &args.out {
        Some(path) => {
            write_file(path, &text)?;
            emit(out, &stats)
        }
        None => {
            eprint!("{stats}");
            emit(out, &text)
        }
    }
}

fn cmd_solve(args: &SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let f1 = args.source.f1(None)?;
    let solver = args.solver.solver()?;
    let mesh = load_mesh(&args.mesh)?;
    if let Some(path) = &args.msh {
        write_file(path, &write_msh(&mesh))?;
    }
    let space = FeSpace::new(mesh)?;
    let coeff = CoefficientField::model_problem();
    let sol = solve_dirichlet(&space, &coeff, &f1, &solver)?;
    let xi = sol.field.free_values();
    let (k, m) = crate::wellposed::reduced_laplace_and_mass(&space).map_err(|e| CliError::Numerical(e.to_string()))?;
    let h1 = (k.bilinear(&xi, &xi).map_err(num)? + m.bilinear(&xi, &xi).map_err(num)?).sqrt();
    let mut report = format!(
        "nodes={}\ntriangles={}\ninterior_nodes={}\nf1={}\nsolver={}\niterations={}\nrelative_residual={:.3e}\nconverged={}\nh1_norm={:.12e}\n",
        space.n_total(),
        space.mesh().n_triangles(),
        space.n_free(),
        f1,
        match solver {
            LinearSolver::DenseLu => "lu",
            LinearSolver::Bicgstab(_) => "bicgstab",
        },
        sol.stats.iterations,
        sol.stats.relative_residual,
        sol.stats.converged,
        h1,
    );
    if let Ok(c) = sol.field.evaluate(Point2::new(0.0, 0.0)) {
        report.push_str(&format!("u_at_origin={c:.12e}\n"));
    }
    emit(out, &report)?;
    if !sol.stats.converged {
        return Err(CliError::Numerical(format!(
            "BiCGSTAB did not converge: {} iterations, relative residual {:.3e}",
            sol.stats.iterations, sol.stats.relative_residual
        )));
    }
    if let Some(path) = &args.out {
        write_file(path, &write_field_vtk(&sol.field, "uh").map_err(num)?)?;
    }
    if let Some(path) = &args.csv {
        write_file(path, &write_csv(space.mesh(), sol.field.values()).map_err(num)?)?;
    }
    Ok(())
}

fn num<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

fn cmd_check(args: &CheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let f1 = args.source.f1(Some("x*y"))?;
    let mesh = load_mesh(&args.mesh)?;
    let space = FeSpace::new(mesh)?;
    let coeff = CoefficientField::model_problem();

    let mesh = space.mesh();
    let samples = mesh
        .nodes()
        .iter()
        .copied()
        .chain((0..mesh.n_triangles()).map(|t| mesh.centroid(t)));
    let (mut d2_min, mut d2_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in samples {
        let (_, d2) = discriminants(&coeff, p.x, p.y).map_err(num)?;
        d2_min = d2_min.min(d2);
        d2_max = d2_max.max(d2);
    }

    let opts = AnalysisOptions {
        continuity_c: MODEL_CONTINUITY,
        trials: args.trials,
        seed: args.seed,
    };
    let theta = crate::wellposed::ellipticity_theta(&coeff, mesh).map_err(num)?;
    let solution = if theta > 0.0 {
        let sol = solve_dirichlet(&space, &coeff, &f1, &LinearSolver::default())?;
        if !sol.stats.converged {
            return Err(CliError::Numerical(format!(
                "solve for the stability check did not converge (relative residual {:.3e})",
                sol.stats.relative_residual
            )));
        }
        Some(sol.field)
    } else {
        None
    };
    let report = analyze(&space, &coeff, solution.as_ref().map(|u| (u, &f1)), &opts).map_err(num)?;
    let mut text = format!("{report}\n");
    text.push_str(&format!("discriminant D2 range [{d2_min:.6}, {d2_max:.6}]\n\n"));
    text.push_str(&format!(
        "nodes={}\ninterior_nodes={}\n",
        space.n_total(),
        space.n_free()
    ));
    text.push_str(&format!("d2_min={d2_min:.12}\nd2_max={d2_max:.12}\n"));
    text.push_str(&report.to_key_values());
    emit(out, &text)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed("well-posedness checks failed".into()))
    }
}

/// True when the finest pair's rates fall in both windows, or when every
/// error is already at round-off level.
pub fn rates_acceptable(table: &ConvergenceTable) -> bool {
    let exact = table
        .rows()
        .iter()
        .all(|r| r.error_l2 <= 1e-12 && r.error_h1_semi <= 1e-12);
    let in_window = |r: Option<f64>, (lo, hi): (f64, f64)| r.is_some_and(|v| (lo..=hi).contains(&v));
    let (r2, r1) = table.final_rates();
    exact || (in_window(r2, L2_RATE_WINDOW) && in_window(r1, H1_RATE_WINDOW))
}

fn cmd_converge(args: &ConvergeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let exact: Expr = args
        .exact
        .parse()
        .map_err(|e| CliError::Usage(format!("bad expression `{}`: {e}", args.exact)))?;
    if args.levels.is_empty() || args.levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage("--levels must be strictly increasing".into()));
    }
    let coarse = disc_mesh(args.levels[0])?;
    let mut worst = 0.0f64;
    for (p, _) in coarse.nodes().iter().zip(coarse.node_is_boundary()).filter(|(_, &b)| b) {
        worst = worst.max(exact.eval(p.x, p.y).map_err(|e| CliError::Usage(e.to_string()))?.abs());
    }
    let sound = worst <= crate::fem::TRACE_TOL;
    if !sound {
        eprintln!(
            "warning: manufactured solution violates u = 0 on the boundary (|u| up to {worst:.3e}); results are unsound"
        );
    }
    let table = convergence_study(&args.levels, &exact).map_err(num)?;
    if let Some(path) = &args.csv {
        write_file(path, &table.to_csv())?;
    }
    let ok = sound && rates_acceptable(&table);
    let (r2, r1) = table.final_rates();
    let show = |r: Option<f64>| r.map_or("none".to_string(), |v| format!("{v:.4}"));
    emit(
        out,
        &format!(
            "{table}\nfinal_rate_l2={}\nfinal_rate_h1={}\nsound={sound}\npassed={ok}\n",
            show(r2),
            show(r1)
        ),
    )?;
    if !sound {
        Err(CliError::CheckFailed(
            "exact solution does not vanish on the boundary; run marked unsound".into(),
        ))
    } else if ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed(
            "convergence rates outside the acceptance windows".into(),
        ))
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Mesh(a) => cmd_mesh(a, out),
        Command::Solve(a) => cmd_solve(a, out),
        Command::Check(a) => cmd_check(a, out),
        Command::Converge(a) => cmd_converge(a, out),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run(args: Vec<String>, out: &mut dyn Write) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
