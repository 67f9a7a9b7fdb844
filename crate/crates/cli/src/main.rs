use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nnparafac2::exec::available_jobs;
use nnparafac2::montecarlo::{BenchmarkGrid, DEFAULT_SIGMAS};
use nnparafac2::{SolverConfig, SolverKind, SynthSpec};
use nnparafac2_cli::{cmd_benchmark, cmd_decompose, cmd_simulate, CliError};

#[derive(Parser)]
#[command(name = "nnparafac2", version, about = "Nonnegative flexibly coupled PARAFAC2")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a shifted synthetic dataset and its ground truth.
    Simulate {
        #[command(flatten)]
        shape: Shape,
        /// Noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output P2RT file; ground truth goes to `<out>.truth`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Decompose a P2RT file.
    Decompose {
        /// Input P2RT file.
        data: PathBuf,
        #[arg(long, default_value = "flexible")]
        solver: SolverKind,
        #[arg(long, default_value_t = 3)]
        rank: usize,
        #[command(flatten)]
        solver_args: SolverArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        inits: usize,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = available_jobs())]
        jobs: usize,
    },
    /// Run the noise-sweep comparison and write detail and summary CSVs.
    Benchmark {
        #[command(flatten)]
        shape: Shape,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIGMAS.to_vec())]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        replicates: usize,
        #[arg(long, default_value_t = 5)]
        inits: usize,
        /// Comma-separated solvers.
        #[arg(long = "solver", value_delimiter = ',', default_value = "classic,flexible")]
        solvers: Vec<SolverKind>,
        #[command(flatten)]
        solver_args: SolverArgs,
        /// Base seed; replicate i uses `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Detail CSV; the summary goes to `<stem>.summary.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = available_jobs())]
        jobs: usize,
    },
}

#[derive(Args)]
struct Shape {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 30)]
    m: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    /// Row shift between consecutive slices.
    #[arg(long, default_value_t = 1)]
    shift_step: i64,
}

impl Shape {
    fn spec(&self, sigma: f64, seed: u64) -> SynthSpec {
        SynthSpec { n: self.n, m: self.m, k: self.k, rank: self.rank, sigma, seed, shift_step: self.shift_step }
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Relative objective change that stops a run.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 1.02)]
    mu_growth: f64,
    #[arg(long, default_value_t = 10.0)]
    mu_cap: f64,
}

impl SolverArgs {
    fn config(&self, rank: usize, seed: u64) -> SolverConfig {
        SolverConfig {
            rank,
            max_iter: self.max_iter,
            rel_tol: self.tol,
            snr_db: self.snr_db,
            mu_growth: self.mu_growth,
            mu_cap: self.mu_cap,
            seed,
            ..SolverConfig::default()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { shape, sigma, seed, out, force } => {
            let seed = cmd_simulate(&shape.spec(sigma, seed), &out, force)?;
            println!("seed {seed}");
        }
        Command::Decompose { data, solver, rank, solver_args, seed, inits, out_dir, force, jobs } => {
            let meta = cmd_decompose(&data, &solver_args.config(rank, seed), solver, inits, &out_dir, force, jobs)?;
            println!(
                "{} best init {} of {}: relative fit {:.6e}, {} iterations ({})",
                meta.config.solver, meta.best_init, inits, meta.relative_fit, meta.iterations, meta.termination
            );
        }
        Command::Benchmark { shape, sigmas, replicates, inits, solvers, solver_args, seed, out, force, jobs } => {
            let grid = BenchmarkGrid {
                sigmas,
                replicates,
                inits_per_run: inits,
                solvers,
                base_seed: seed,
                spec: shape.spec(0.0, seed),
                config: solver_args.config(shape.rank, seed),
                ..BenchmarkGrid::default()
            };
            let (_, summary) = cmd_benchmark(&grid, &out, force, jobs)?;
            println!("{:>9} {:>9} {:>12} {:>12} {:>12}", "sigma", "solver", "best_mean", "single_mean", "single_band");
            for s in summary {
                println!(
                    "{:>9.1e} {:>9} {:>12.4e} {:>12.4e} {:>12.4e}",
                    s.sigma,
                    s.solver.name(),
                    s.best.mean,
                    s.single.mean,
                    s.single.band()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
