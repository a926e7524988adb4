//! `momt`: generate, solve, export and benchmark transport problems.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use momt::bench::{self, Suite};
use momt::export::{FrameFormat, FrameSet};
use momt::generate::{self, Marginals, ShapeParams};
use momt::io::{self, LoadedProblem, ProblemFile, SolutionArchive};
use momt::{Error, Graph, Grid, OperatorBasis, SolveResult, SolverConfig, TransportProblem};

#[derive(Parser)]
#[command(
    name = "momt",
    version,
    about = "Matrix- and vector-valued dynamic optimal mass transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic problem file.
    Gen(GenArgs),
    /// Solve a problem file, writing a solution archive and a trace CSV.
    Solve(SolveArgs),
    /// Turn a solution archive into glyph CSV or PPM frames.
    Export(ExportArgs),
    /// Run a benchmark suite and print its table.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Matrix,
    Vector,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Generator {
    /// Centered disk (ball in 3D) to corner quarters (octants).
    Disk,
    /// Both marginals equal to the disk generator's terminal density.
    Identical,
    /// Seeded random positive fields.
    Random,
}

#[derive(Parser)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, value_enum, default_value = "disk")]
    generator: Generator,
    /// Spatial extents, e.g. 32x32 or 16x16x16 (3D is matrix only).
    #[arg(long, default_value = "16x16")]
    grid: String,
    #[arg(long, default_value_t = 10)]
    nt: usize,
    #[arg(long, default_value_t = 10.0)]
    contrast: f64,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    /// Block size (matrix) or node count (vector). The disk generators use 3.
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ShapeParams::default().disk_radius)]
    disk_radius: f64,
    #[arg(long, default_value_t = ShapeParams::default().quarter_radius)]
    quarter_radius: f64,
    #[arg(long, default_value_t = ShapeParams::default().sigma_cells)]
    sigma: f64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Parser)]
struct SolveArgs {
    input: PathBuf,
    /// Overrides the problem's gamma.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tol_outer: Option<f64>,
    #[arg(long)]
    tol_inner: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Solution archive (default: input with extension `sol`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Trace CSV (default: input with extension `trace.csv`).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Parser)]
struct ExportArgs {
    archive: PathBuf,
    /// glyph-csv or ppm.
    #[arg(long, default_value = "ppm")]
    format: FrameFormat,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Parser)]
struct BenchArgs {
    /// table1 .. table6 or table7-3d.
    suite: Suite,
    /// Row indices to run (default: all).
    #[arg(long, value_delimiter = ',')]
    rows: Option<Vec<usize>>,
    /// Report CSV path.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Exit status for errors: bad input is 2, a solver that did not get there is 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(
            Error::NotConverged { .. }
            | Error::LineSearchFailed { .. }
            | Error::BreakdownDetected(_)
            | Error::FactorizationFailed
            | Error::PositivityLost,
        ) => 1,
        _ => 2,
    }
}

fn parse_extents(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split('x')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("bad grid extent {t:?} in {s:?}"))
        })
        .collect()
}

fn gen(args: GenArgs) -> anyhow::Result<()> {
    let extents = parse_extents(&args.grid)?;
    let grid = Grid::new(&extents, args.nt)?;
    let params = ShapeParams {
        disk_radius: args.disk_radius,
        quarter_radius: args.quarter_radius,
        sigma_cells: args.sigma,
    };
    let disk = |grid: &Grid<f64>| -> momt::Result<Marginals<f64>> {
        match (args.kind, extents.len()) {
            (Kind::Matrix, 3) => generate::matrix_ball_to_octants(grid, args.contrast, &params),
            (Kind::Matrix, _) => generate::matrix_disk_to_quarters(grid, args.contrast, &params),
            (Kind::Vector, _) => generate::vector_disk_to_quarters(grid, args.contrast, &params),
        }
    };
    let (marginals, name) = match args.generator {
        Generator::Disk => (disk(&grid)?, "disk-to-quarters"),
        Generator::Identical => (generate::identical(&disk(&grid)?.rho1), "identical"),
        Generator::Random => match args.kind {
            Kind::Matrix => (generate::random_matrix(&grid, args.n, args.seed)?, "random"),
            Kind::Vector => (generate::random_vector(&grid, args.n, args.seed)?, "random"),
        },
    };
    let n = if args.generator == Generator::Random { args.n } else { 3 };
    let file = match args.kind {
        Kind::Matrix => {
            let basis = OperatorBasis::default_for(n)?;
            ProblemFile::matrix(&grid, &basis, args.gamma, &marginals, name, args.seed)
        }
        Kind::Vector => {
            let graph = Graph::complete(n)?;
            ProblemFile::vector(&grid, &graph, args.gamma, &marginals, name, args.seed)
        }
    };
    file.write(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} ({} grid {}x{}, contrast {:.2})",
        args.out.display(),
        name,
        args.grid,
        args.nt,
        marginals.contrast
    );
    Ok(())
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension(ext);
    p
}

fn run_solver<P: TransportProblem<f64>>(prob: &P, config: &SolverConfig) -> momt::Result<SolveResult<f64>> {
    momt::sqp::solve(prob, config)
}

fn solve(args: SolveArgs) -> anyhow::Result<bool> {
    let mut file = ProblemFile::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    if let Some(g) = args.gamma {
        file.gamma = g;
    }
    let loaded = file.load()?;
    let mut config = match loaded {
        LoadedProblem::Matrix(_) => SolverConfig::matrix(),
        LoadedProblem::Vector(_) => SolverConfig::vector(),
    };
    if let Some(t) = args.tol_outer {
        config.tol_outer = t;
    }
    if let Some(t) = args.tol_inner {
        config.tol_inner = t;
    }
    if let Some(m) = args.max_outer {
        config.max_outer = m;
    }
    config.validate()?;
    let start = Instant::now();
    let result = match &loaded {
        LoadedProblem::Matrix(p) => run_solver(p, &config)?,
        LoadedProblem::Vector(p) => run_solver(p, &config)?,
    };
    let seconds = start.elapsed().as_secs_f64();

    let out = args.out.unwrap_or_else(|| with_extension(&args.input, "sol"));
    let trace = args.trace.unwrap_or_else(|| with_extension(&args.input, "trace.csv"));
    std::fs::write(&trace, io::trace_csv(&result.trace)?).with_context(|| format!("writing {}", trace.display()))?;
    SolutionArchive::new(file, &result)
        .write(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    info!("archive {}, trace {}", out.display(), trace.display());
    println!(
        "distance2 {:.10e} iterations {} converged {} residual {:.3e} time {:.2}s",
        result.distance2,
        result.iterations(),
        result.converged,
        result.residual,
        seconds
    );
    Ok(result.converged)
}

fn export(args: ExportArgs) -> anyhow::Result<()> {
    let archive =
        SolutionArchive::read(&args.archive).with_context(|| format!("reading {}", args.archive.display()))?;
    let frames = FrameSet::from_archive(&archive)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let files = frames.write(&args.out, args.format)?;
    let masses = frames.masses();
    let (lo, hi) = masses
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
    println!(
        "wrote {} file(s) to {} ({} frames, mass range [{lo:.6}, {hi:.6}])",
        files.len(),
        args.out.display(),
        masses.len()
    );
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<bool> {
    let cases = args.suite.cases();
    if let Some(rows) = &args.rows {
        if let Some(&r) = rows.iter().find(|&&r| r >= cases.len()) {
            bail!("row {r} out of range: {} has {} rows", args.suite.name(), cases.len());
        }
    }
    let rows = bench::run_suite(args.suite, args.rows.as_deref(), |row| {
        info!(
            "{} {}: {} iterations in {:.1}s",
            args.suite.name(),
            row.case.grid_label(),
            row.iterations,
            row.seconds
        );
    });
    if let Some(out) = &args.out {
        std::fs::write(out, bench::report_csv(&rows)?).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", bench::report_table(args.suite, &rows));
    Ok(rows.iter().all(|r| r.ok()))
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("MOMT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("MOMT_THREADS={v:?} is not a count"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Gen(a) => gen(a).map(|()| true),
        Command::Solve(a) => solve(a),
        Command::Export(a) => export(a).map(|()| true),
        Command::Bench(a) => bench(a),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
