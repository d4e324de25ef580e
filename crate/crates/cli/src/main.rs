use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, ValueEnum};
use serde::Serialize;
use stheat::bench::{kernel_bench, BenchRow};
use stheat::heat::{adaptive_loop, Config, Inversion, Problem, ProblemKind, Record};
use stheat::space::{Marks, Vid};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Adaptive,
    KernelBench,
}

/// Adaptive space-time solver for the heat equation.
#[derive(Debug, Parser)]
#[command(name = "stheat", version)]
struct Args {
    /// smooth | moving-peak | cylinder | singular
    #[arg(long, value_parser = parse_problem)]
    problem: Option<ProblemKind>,
    /// Dörfler marking parameter in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// Relative accuracy of the inner solve in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    xi: f64,
    /// Stop once dim X^δ reaches this size.
    #[arg(long, default_value_t = 10_000)]
    max_dofs: usize,
    /// V-cycles per spatial block solve.
    #[arg(long, default_value_t = 2)]
    mg_cycles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Adaptive)]
    mode: Mode,
    /// Writes the final spatial mesh (union of all space fibers).
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
}

fn parse_problem(s: &str) -> Result<ProblemKind, String> {
    s.parse()
}

#[derive(Serialize)]
struct Row {
    iteration: usize,
    dim_x: usize,
    dim_xbar: usize,
    dim_y: usize,
    residual_norm: f64,
    beta: f64,
    pcg_iters: usize,
    solve_ms: f64,
    estimate_ms: f64,
    mark_ms: f64,
    refine_ms: f64,
    opcount_solve: u64,
    opcount_estimate: u64,
}

impl From<&Record> for Row {
    fn from(r: &Record) -> Self {
        Row {
            iteration: r.iteration,
            dim_x: r.dim_x,
            dim_xbar: r.dim_xbar,
            dim_y: r.dim_y,
            residual_norm: r.residual_norm,
            beta: r.beta,
            pcg_iters: r.pcg_iters,
            solve_ms: r.solve_ms,
            estimate_ms: r.estimate_ms,
            mark_ms: r.mark_ms,
            refine_ms: r.refine_ms,
            opcount_solve: r.opcount_solve,
            opcount_estimate: r.opcount_estimate,
        }
    }
}

#[derive(Serialize)]
struct BenchCsv<'a> {
    kernel: &'a str,
    shape: &'a str,
    n: usize,
    ops: u64,
    ops_per_n: f64,
    ms: f64,
    ms_per_n: f64,
}

fn writer(out: &Option<PathBuf>) -> anyhow::Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn run(args: &Args) -> anyhow::Result<()> {
    let mut w = writer(&args.out)?;
    match args.mode {
        Mode::KernelBench => {
            let mut err = None;
            kernel_bench(args.seed, |r: &BenchRow| {
                let row = BenchCsv {
                    kernel: &r.kernel,
                    shape: r.shape.name(),
                    n: r.n,
                    ops: r.ops,
                    ops_per_n: r.ops as f64 / r.n as f64,
                    ms: r.ms,
                    ms_per_n: r.ms / r.n as f64,
                };
                if let Err(e) = w.serialize(row).and_then(|_| w.flush().map_err(Into::into)) {
                    err.get_or_insert(e);
                }
            });
            if let Some(e) = err {
                return Err(e.into());
            }
        }
        Mode::Adaptive => {
            anyhow::ensure!(args.theta > 0.0 && args.theta <= 1.0, "--theta must lie in (0, 1]");
            anyhow::ensure!(args.xi > 0.0 && args.xi < 1.0, "--xi must lie in (0, 1)");
            anyhow::ensure!(args.mg_cycles > 0, "--mg-cycles must be positive");
            let problem = Problem::new(args.problem.context("--problem is required in adaptive mode")?);
            let cfg = Config {
                theta: args.theta,
                xi: args.xi,
                max_dofs: args.max_dofs,
                inversion: Inversion::Multigrid { cycles: args.mg_cycles },
                ..Config::default()
            };
            let mut err = None;
            let outcome = adaptive_loop(&problem, &cfg, |r| {
                if let Err(e) = w.serialize(Row::from(r)).and_then(|_| w.flush().map_err(Into::into)) {
                    err.get_or_insert(e);
                }
            })?;
            if let Some(e) = err {
                return Err(e.into());
            }
            if let Some(path) = &args.dump_mesh {
                let mut verts: Vec<Vid> = outcome.mesh.root_vertices().to_vec();
                verts.extend(outcome.disc.lam.project1().iter().map(|&v| v as Vid));
                verts.sort_unstable();
                verts.dedup();
                let text = outcome.mesh.dump(&verts, &mut Marks::new());
                std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if matches!(args.mode, Mode::Adaptive) && args.problem.is_none() {
        Args::command().error(ErrorKind::MissingRequiredArgument, "--problem is required in adaptive mode").exit();
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stheat: {e:#}");
            ExitCode::FAILURE
        }
    }
}
