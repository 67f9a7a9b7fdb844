//! The three subcommands as library functions.

use std::fs;
use std::path::{Path, PathBuf};

use nnparafac2::exec::with_jobs;
use nnparafac2::montecarlo::{run_grid, summarize, BenchmarkGrid, DetailRow, SummaryRow};
use nnparafac2::{fit_multistart, gen_dataset, SolverConfig, SolverKind, SynthSpec, Termination};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::format::{read_tensor, truth_path, write_tensor, write_truth};
use crate::output;

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(CliError::RefusedOverwrite(path.to_path_buf()));
    }
    Ok(())
}

/// Generates a dataset, writes it and its `.truth` sibling, and returns the
/// seed used.
pub fn cmd_simulate(spec: &SynthSpec, out_path: &Path, force: bool) -> Result<u64> {
    spec.validate()?;
    let truth_file = truth_path(out_path);
    refuse_existing(out_path, force)?;
    refuse_existing(&truth_file, force)?;
    let (tensor, truth) = gen_dataset(spec)?;
    write_tensor(out_path, &tensor)?;
    write_truth(&truth_file, &truth)?;
    Ok(spec.seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub solver: String,
    pub rank: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub snr_db: f64,
    pub mu_init_factor: f64,
    pub mu_growth: f64,
    pub mu_cap: f64,
    pub nnls_inner_iters: usize,
    pub seed: u64,
    pub inits: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub input: PathBuf,
    pub config: ConfigEcho,
    pub best_init: usize,
    pub best_init_seed: u64,
    pub relative_fit: f64,
    pub termination: String,
    pub iterations: usize,
    pub warnings: usize,
    pub wall_seconds: f64,
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIter => "max_iter",
    }
}

/// Fits `inits` random starts and writes the best one to `out_dir`.
///
/// Files: `A.csv`, `C.csv`, `Bstar.csv`, `B_<k>.csv`, `P_<k>.csv`,
/// `report.csv`, `residuals.csv`, `attempts.csv` and `run.json`. Only
/// `run.json` carries wall-clock time.
pub fn cmd_decompose(
    data_path: &Path,
    config: &SolverConfig,
    solver: SolverKind,
    inits: usize,
    out_dir: &Path,
    force: bool,
    jobs: usize,
) -> Result<RunMetadata> {
    config.validate()?;
    if inits == 0 {
        return Err(CliError::InvalidInput("--inits must be at least 1".into()));
    }
    let tensor = read_tensor(data_path)?;
    if out_dir.exists() && !force && fs::read_dir(out_dir).map_err(CliError::io(out_dir))?.next().is_some() {
        return Err(CliError::RefusedOverwrite(out_dir.to_path_buf()));
    }

    let (attempts, best) = with_jobs(jobs, || fit_multistart(&tensor, config, solver, inits))?;
    let chosen = &attempts[best];
    let f = &chosen.factors;

    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    output::write_matrix(&out_dir.join("A.csv"), &f.a)?;
    output::write_matrix(&out_dir.join("C.csv"), &f.c)?;
    output::write_matrix(&out_dir.join("Bstar.csv"), &f.bstar)?;
    for (k, (bk, pk)) in f.b.iter().zip(&f.p).enumerate() {
        output::write_matrix(&out_dir.join(format!("B_{}.csv", k + 1)), bk)?;
        output::write_matrix(&out_dir.join(format!("P_{}.csv", k + 1)), pk)?;
    }
    output::write_report(&out_dir.join("report.csv"), &chosen.report, tensor.num_slices())?;
    output::write_residuals(&out_dir.join("residuals.csv"), &chosen.report)?;
    let rows: Vec<_> = attempts
        .iter()
        .map(|a| (a.init_seed, a.relative_fit, a.report.iterations, termination_name(a.report.termination)))
        .collect();
    output::write_attempts(&out_dir.join("attempts.csv"), &rows)?;

    let meta = RunMetadata {
        input: data_path.to_path_buf(),
        config: ConfigEcho {
            solver: solver.name().into(),
            rank: config.rank,
            max_iter: config.max_iter,
            tol: config.rel_tol,
            snr_db: config.snr_db,
            mu_init_factor: config.mu_init_factor,
            mu_growth: config.mu_growth,
            mu_cap: config.mu_cap,
            nnls_inner_iters: config.nnls_inner_iters,
            seed: config.seed,
            inits,
        },
        best_init: best + 1,
        best_init_seed: chosen.init_seed,
        relative_fit: chosen.relative_fit,
        termination: termination_name(chosen.report.termination).into(),
        iterations: chosen.report.iterations,
        warnings: chosen.report.warnings.len(),
        wall_seconds: attempts.iter().map(|a| a.report.wall_seconds).sum(),
    };
    let json_path = out_dir.join("run.json");
    fs::write(&json_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(CliError::io(&json_path))?;
    Ok(meta)
}

/// `bench.csv` → `bench.summary.csv`.
pub fn summary_path(detail: &Path) -> PathBuf {
    detail.with_extension(match detail.extension() {
        Some(ext) => format!("summary.{}", ext.to_string_lossy()),
        None => "summary.csv".into(),
    })
}

/// Runs the grid and writes the detail CSV to `out_path` and the summary CSV
/// next to it.
pub fn cmd_benchmark(grid: &BenchmarkGrid, out_path: &Path, force: bool, jobs: usize) -> Result<(Vec<DetailRow>, Vec<SummaryRow>)> {
    grid.validate()?;
    let summary_file = summary_path(out_path);
    refuse_existing(out_path, force)?;
    refuse_existing(&summary_file, force)?;
    let rows = run_grid(grid, jobs)?;
    let summary = summarize(grid, &rows);
    output::write_detail(out_path, &rows)?;
    output::write_summary(&summary_file, &summary)?;
    Ok((rows, summary))
}
