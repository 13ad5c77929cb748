mod verify;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use tensordg::basis::BasisKind;
use tensordg::error::DgError;
use tensordg::geometry::GeometryVariant;
use tensordg::mesh::{all_dirichlet, Mapping, Mesh};
use tensordg::operators::{Equation, Operator, OperatorConfig};
use tensordg::perf::{append_csv, model_flops, read_csv, roofline, run_bench, TimingPlan};

use verify::{Filters, Suite};

#[derive(Parser)]
#[command(name = "dgbench", version, about = "Verify and benchmark matrix-free DG operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorArg {
    Mass,
    Invmass,
    Advection,
    Laplace,
}

impl From<OperatorArg> for Equation {
    fn from(o: OperatorArg) -> Self {
        match o {
            OperatorArg::Mass => Equation::Mass,
            OperatorArg::Invmass => Equation::InverseMass,
            OperatorArg::Advection => Equation::Advection,
            OperatorArg::Laplace => Equation::Laplacian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Cartesian,
    G1,
    G2,
    G3,
    G4,
}

impl From<GeometryArg> for GeometryVariant {
    fn from(g: GeometryArg) -> Self {
        match g {
            GeometryArg::Cartesian => GeometryVariant::Compressed,
            GeometryArg::G1 => GeometryVariant::G1,
            GeometryArg::G2 => GeometryVariant::G2,
            GeometryArg::G3 => GeometryVariant::G3,
            GeometryArg::G4 => GeometryVariant::G4,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Gll,
    Gauss,
    Hermite,
}

impl From<BasisArg> for BasisKind {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Gll => BasisKind::LagrangeGaussLobatto,
            BasisArg::Gauss => BasisKind::LagrangeGauss,
            BasisArg::Hermite => BasisKind::HermiteLike,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run verification suites; exits 1 if any check fails.
    Verify {
        #[arg(long, value_enum)]
        suite: Option<Suite>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        degree: Option<usize>,
    },
    /// Time one operator configuration and append the result to a CSV file.
    Bench {
        #[arg(long, value_enum)]
        operator: OperatorArg,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        dim: u8,
        #[arg(long)]
        degree: usize,
        /// Cells per direction.
        #[arg(long)]
        cells: usize,
        /// Defaults to hermite for the Laplacian at degree 3 and above, gll otherwise.
        #[arg(long, value_enum)]
        basis: Option<BasisArg>,
        /// `cartesian` runs on an affine mesh, the other variants on a curved one.
        #[arg(long, value_enum, default_value = "cartesian")]
        geometry: GeometryArg,
        #[arg(long, default_value_t = 4, value_parser = parse_lanes)]
        lanes: usize,
        #[arg(long, default_value_t = 1)]
        ranks: usize,
        /// Timed repetitions; at least five are always run.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 500)]
        warmup_ms: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Manufactured-solution study on refined unit squares or cubes.
    Convergence {
        #[arg(long, value_enum)]
        operator: OperatorArg,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        degree: usize,
        /// Refinement levels `A..B`; level L has 2^L cells per direction.
        #[arg(long, default_value = "2..4", value_parser = parse_levels)]
        levels: (u32, u32),
    },
    /// Classify CSV records against a roofline.
    Roofline {
        /// Peak arithmetic throughput in flop/s.
        #[arg(long)]
        peak: f64,
        /// Memory bandwidth in bytes/s.
        #[arg(long)]
        bw: f64,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn parse_lanes(s: &str) -> Result<usize, String> {
    match s.parse() {
        Ok(w @ (1 | 2 | 4 | 8)) => Ok(w),
        _ => Err(format!("lane width must be 1, 2, 4 or 8, got `{s}`")),
    }
}

fn parse_levels(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u32 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|e| format!("{e}"))?;
    if a > b || b > 12 {
        return Err(format!("invalid level range {a}..{b}"));
    }
    Ok((a, b))
}

enum Failure {
    Usage(anyhow::Error),
    Verification(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<DgError>() {
            Some(
                DgError::InvalidArgument(_)
                | DgError::UnsupportedBasis(_)
                | DgError::Unsupported(_)
                | DgError::GuardExceeded(_),
            ) => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<DgError> for Failure {
    fn from(e: DgError) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Verify { suite, dim, degree } => cmd_verify(suite, Filters { dim, degree }),
        Command::Bench { operator, dim, degree, cells, basis, geometry, lanes, ranks, reps, warmup_ms, csv } => {
            let mut cfg = OperatorConfig::new(operator.into(), dim as usize, degree);
            if let Some(b) = basis {
                cfg = cfg.with_basis(b.into());
            }
            let cfg = cfg.with_geometry(geometry.into()).with_lanes(lanes);
            let plan = TimingPlan {
                warmup: Duration::from_millis(warmup_ms),
                repetitions: reps.max(5),
                ..TimingPlan::default()
            };
            cmd_bench(&cfg, cells, matches!(geometry, GeometryArg::Cartesian), ranks, plan, csv)
        }
        Command::Convergence { operator, dim, degree, levels } => cmd_convergence(operator.into(), dim, degree, levels),
        Command::Roofline { peak, bw, csv } => cmd_roofline(peak, bw, &csv),
    }
}

fn cmd_verify(suite: Option<Suite>, filters: Filters) -> Result<(), Failure> {
    let suites: Vec<Suite> = match suite {
        Some(s) => vec![s],
        None => Suite::all().to_vec(),
    };
    let (mut passed, mut failed, mut warned) = (0, 0, 0);
    for s in suites {
        verify::run_suite(s, filters, &mut |c| {
            println!("{}", c.line());
            match (c.passed, c.soft) {
                (true, _) => passed += 1,
                (false, true) => warned += 1,
                (false, false) => failed += 1,
            }
        })?;
    }
    println!("{passed} passed, {failed} failed, {warned} warnings");
    if failed > 0 {
        return Err(Failure::Verification(format!("{failed} checks failed")));
    }
    Ok(())
}

fn cmd_bench(
    cfg: &OperatorConfig,
    cells: usize,
    cartesian: bool,
    ranks: usize,
    plan: TimingPlan,
    csv: Option<PathBuf>,
) -> Result<(), Failure> {
    cfg.validate()?;
    if cells == 0 || ranks == 0 {
        return Err(Failure::Usage(anyhow!("cells and ranks must be positive")));
    }
    let mapping =
        if cartesian { Mapping::Cartesian } else { Mapping::PolynomialDeformation { degree: 2, amplitude: 0.05 } };
    let mesh = Mesh::unit_box(cfg.dim, cells, mapping, all_dirichlet())?;
    let op = Operator::new(cfg, &mesh, ranks)?;
    let record = run_bench(&op, plan)?;
    let model = model_flops(cfg, &op)?;
    println!(
        "{} d={} p={} cells={} geometry={} W={} ranks={}",
        record.operator, record.dim, record.degree, record.cells, record.geometry, record.lanes, record.ranks
    );
    println!("  dofs            {}", record.n_dofs);
    println!("  time per apply  {:.4e} s", record.time_s);
    println!("  throughput      {:.4e} dofs/s", record.dofs_per_s);
    println!("  flops counted   {} ({:.3e} flop/s)", record.flops, record.flops as f64 / record.time_s);
    println!(
        "  flops model     {} ({:+.1}% vs counted, kernel schedule only)",
        model,
        100.0 * (model as f64 / record.flops as f64 - 1.0)
    );
    println!("  bytes model     {}", record.bytes);
    println!("  intensity       {:.3} flop/byte", record.intensity);
    if let Some(path) = csv {
        append_csv(&path, &[record]).map_err(|e| Failure::Runtime(e.into()))?;
        println!("  appended to {}", path.display());
    }
    Ok(())
}

fn cmd_convergence(equation: Equation, dim: usize, degree: usize, levels: (u32, u32)) -> Result<(), Failure> {
    let cfg = OperatorConfig::new(equation, dim, degree);
    cfg.validate()?;
    let rows =
        tensordg::convergence::run_convergence(equation, dim, degree, levels.0..=levels.1, Mapping::Cartesian, 4)
            .map_err(|e| match e {
                DgError::ContractViolation(m) => Failure::Verification(format!("solver failed: {m}")),
                other => Failure::from(other),
            })?;
    println!("{:>6} {:>9} {:>7} {:>12} {:>6}", "cells", "dofs", "iters", "L2 error", "rate");
    for r in &rows {
        let rate = r.rate.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!("{:>6} {:>9} {:>7} {:>12.4e} {:>6}", r.cells_per_dim, r.n_dofs, r.iterations, r.l2_error, rate);
    }
    Ok(())
}

fn cmd_roofline(peak: f64, bw: f64, csv: &std::path::Path) -> Result<(), Failure> {
    if !(peak > 0.0 && bw > 0.0) {
        return Err(Failure::Usage(anyhow!("peak and bandwidth must be positive")));
    }
    if !csv.exists() {
        return Err(Failure::Usage(anyhow!("CSV file {} not found", csv.display())));
    }
    let records = read_csv(csv).with_context(|| format!("reading {}", csv.display())).map_err(Failure::Runtime)?;
    println!("knee at {:.3} flop/byte", peak / bw);
    println!(
        "{:<10} {:>3} {:>3} {:<9} {:>2} {:>5} {:>10} {:>12} {:>12} bound",
        "operator", "d", "p", "geometry", "W", "ranks", "intensity", "flop/s", "ceiling"
    );
    for r in &records {
        let pt = roofline(r, peak, bw);
        println!(
            "{:<10} {:>3} {:>3} {:<9} {:>2} {:>5} {:>10.3} {:>12.4e} {:>12.4e} {}",
            r.operator,
            r.dim,
            r.degree,
            r.geometry,
            r.lanes,
            r.ranks,
            pt.intensity,
            pt.achieved_flops,
            pt.ceiling,
            pt.bound.label()
        );
    }
    Ok(())
}
