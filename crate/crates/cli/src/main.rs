//! `frameflow` command-line experiments.

mod commands;
mod failure;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "frameflow",
    version,
    about = "Simulate elliptic diffusions with frame-bundle schemes"
)]
struct Cli {
    /// Worker threads for path loops (default: all cores).
    #[arg(long, global = true, env = "FRAMEFLOW_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate sample paths of one scheme and write every state.
    Simulate(SimulateArgs),
    /// Estimate an error series over a dyadic step ladder.
    Convergence(ConvergenceArgs),
    /// Brownian motion on the unit sphere through its SO(3) frame.
    Sphere(SphereArgs),
    /// Roll the sphere along a planar curve read from CSV.
    Develop(DevelopArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long)]
    pub scheme: String,
    /// Step size; accepts `2^-k`.
    #[arg(long, value_parser = parse_step)]
    pub h: f64,
    #[arg(long = "t", default_value_t = 1.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Lévy-area substeps per step.
    #[arg(long, default_value_t = 64)]
    pub substeps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Strong,
    Weak,
    W2,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long)]
    pub scheme: String,
    #[arg(long, value_enum, default_value_t = Mode::Strong)]
    pub mode: Mode,
    /// Exponent range `a:b` for steps `2^-a, …, 2^-b`.
    #[arg(long, value_parser = parse_ladder)]
    pub ladder: (u32, u32),
    /// Reference step exponent for strong and w2 modes (default: b + 3).
    #[arg(long)]
    pub ref_exp: Option<u32>,
    #[arg(long = "t", default_value_t = 1.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Lévy-area substeps per step of the finest grid.
    #[arg(long, default_value_t = 64)]
    pub substeps: usize,
    /// Weak mode: pair each path with its reflection.
    #[arg(long)]
    pub antithetic: bool,
    /// Weak mode: importance-sampling drift of the driving motion.
    #[arg(long, allow_negative_numbers = true)]
    pub tilt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SphereArgs {
    #[arg(long = "t", default_value_t = 1.0)]
    pub t_end: f64,
    /// Step size; accepts `2^-k`.
    #[arg(long, value_parser = parse_step, default_value = "2^-8")]
    pub h: f64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the first path as `step,t,x,y,z`.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DevelopArgs {
    /// CSV with columns `t,q1,q2`; a header line is optional.
    pub curve: PathBuf,
    #[arg(long, default_value = "sphere")]
    pub surface: String,
    /// RK4 substeps per curve segment.
    #[arg(long, default_value_t = 64)]
    pub substeps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_step(s: &str) -> Result<f64, String> {
    let h = match s.strip_prefix("2^") {
        Some(exp) => {
            let k: i32 = exp.parse().map_err(|_| format!("bad exponent in `{s}`"))?;
            2f64.powi(k)
        }
        None => s.parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(format!("step must be positive, got `{s}`"))
    }
}

fn parse_ladder(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected `a:b`, got `{s}`"))?;
    let a: u32 = a.trim().parse().map_err(|_| format!("bad exponent `{a}`"))?;
    let b: u32 = b.trim().parse().map_err(|_| format!("bad exponent `{b}`"))?;
    if a > b {
        return Err(format!("ladder `{s}` must run from coarse to fine"));
    }
    Ok((a, b))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(anyhow::anyhow!(e)))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Convergence(a) => commands::convergence(&a),
        Command::Sphere(a) => commands::sphere(&a),
        Command::Develop(a) => commands::develop(&a),
        Command::Selftest => selftest::run(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
