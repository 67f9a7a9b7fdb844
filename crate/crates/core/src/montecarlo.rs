//! Monte Carlo comparison of the two solvers over a noise grid.
//!
//! For every `(sigma, replicate)` a dataset is drawn with seed
//! `base_seed + replicate`; the same datasets are reused across noise levels
//! so only the noise amplitude changes. Every solver then runs from the same
//! `inits_per_run` random starts, so comparisons are paired. The best start
//! is the one with the lowest relative reconstruction error.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::exec::{with_jobs, Execution};
use crate::metrics::{mean, quantile, relative_b_error, relative_fit};
use crate::solver::{best_index, derive_seed, random_init, SolverConfig, SolverKind};
use crate::synth::{gen_dataset, SynthSpec};

/// Noise levels swept by default.
pub const DEFAULT_SIGMAS: [f64; 6] = [5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5];

#[derive(Debug, Clone)]
pub struct BenchmarkGrid {
    pub sigmas: Vec<f64>,
    pub replicates: usize,
    pub inits_per_run: usize,
    pub solvers: Vec<SolverKind>,
    pub base_seed: u64,
    /// Dataset shape; its `sigma` and `seed` are overridden per cell.
    pub spec: SynthSpec,
    /// Solver settings; `rank` is forced to `spec.rank`.
    pub config: SolverConfig,
    /// How replicates are scheduled.
    pub execution: Execution,
}

impl Default for BenchmarkGrid {
    fn default() -> Self {
        Self {
            sigmas: DEFAULT_SIGMAS.to_vec(),
            replicates: 50,
            inits_per_run: 5,
            solvers: vec![SolverKind::Classic, SolverKind::Flexible],
            base_seed: 0,
            spec: SynthSpec::default(),
            config: SolverConfig::default(),
            execution: Execution::Parallel,
        }
    }
}

impl BenchmarkGrid {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("sigmas must be a nonempty list of positive values".into()));
        }
        if self.replicates == 0 || self.inits_per_run == 0 {
            return Err(Error::InvalidConfig("replicates and inits_per_run must be at least 1".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::InvalidConfig("no solver selected".into()));
        }
        self.spec.validate()?;
        self.solver_config().validate()
    }

    fn solver_config(&self) -> SolverConfig {
        SolverConfig { rank: self.spec.rank, ..self.config.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailRow {
    pub sigma: f64,
    pub replicate: usize,
    pub solver: SolverKind,
    /// Relative B error of the start with the lowest relative fit.
    pub best_error: f64,
    /// Relative B error of the first start alone.
    pub single_init_error: f64,
    pub best_fit: f64,
    pub iterations: usize,
    /// Wall time for all starts of this solver on this dataset.
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub q20: f64,
    pub q80: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            median: quantile(values, 0.5),
            q20: quantile(values, 0.2),
            q80: quantile(values, 0.8),
        }
    }

    pub fn band(&self) -> f64 {
        self.q80 - self.q20
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sigma: f64,
    pub solver: SolverKind,
    pub count: usize,
    pub best: Stats,
    pub single: Stats,
}

/// Runs one dataset through every solver and start.
fn run_cell(grid: &BenchmarkGrid, sigma: f64, replicate: usize) -> Result<Vec<DetailRow>> {
    let seed = grid.base_seed.wrapping_add(replicate as u64);
    let spec = SynthSpec { sigma, seed, ..grid.spec.clone() };
    let (tensor, truth) = gen_dataset(&spec)?;
    let config = grid.solver_config();
    let inits = (0..grid.inits_per_run)
        .map(|i| random_init(&tensor, config.rank, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(grid.solvers.len());
    for &solver in &grid.solvers {
        let start = Instant::now();
        let mut errors = Vec::with_capacity(inits.len());
        let mut fits = Vec::with_capacity(inits.len());
        let mut iterations = Vec::with_capacity(inits.len());
        for init in &inits {
            let (factors, report) = solver.run(&tensor, &config, init)?;
            errors.push(relative_b_error(&factors, &truth)?);
            fits.push(relative_fit(&tensor, &factors)?);
            iterations.push(report.iterations);
        }
        let best = best_index(fits.iter().copied());
        rows.push(DetailRow {
            sigma,
            replicate,
            solver,
            best_error: errors[best],
            single_init_error: errors[0],
            best_fit: fits[best],
            iterations: iterations[best],
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

/// Runs the whole grid on up to `jobs` threads. Rows come back sorted by
/// sigma (grid order), replicate and solver (grid order), independent of
/// scheduling.
pub fn run_grid(grid: &BenchmarkGrid, jobs: usize) -> Result<Vec<DetailRow>> {
    grid.validate()?;
    let cells: Vec<(usize, usize)> = (0..grid.sigmas.len())
        .flat_map(|s| (0..grid.replicates).map(move |r| (s, r)))
        .collect();
    let exec = grid.execution;
    let per_cell = with_jobs(jobs, || exec.try_map(cells.len(), |i| run_cell(grid, grid.sigmas[cells[i].0], cells[i].1)))?;

    let solver_pos = |s: SolverKind| grid.solvers.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    let sigma_pos = |v: f64| grid.sigmas.iter().position(|&x| x == v).unwrap_or(usize::MAX);
    let mut rows: Vec<DetailRow> = per_cell.into_iter().flatten().collect();
    rows.sort_by_key(|r| (sigma_pos(r.sigma), r.replicate, solver_pos(r.solver)));
    Ok(rows)
}

/// Mean, median and 20%/80% quantiles of both error variants per
/// `(sigma, solver)`, in grid order.
pub fn summarize(grid: &BenchmarkGrid, rows: &[DetailRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &sigma in &grid.sigmas {
        for &solver in &grid.solvers {
            let group: Vec<&DetailRow> = rows.iter().filter(|r| r.sigma == sigma && r.solver == solver).collect();
            if group.is_empty() {
                continue;
            }
            let best: Vec<f64> = group.iter().map(|r| r.best_error).collect();
            let single: Vec<f64> = group.iter().map(|r| r.single_init_error).collect();
            out.push(SummaryRow { sigma, solver, count: group.len(), best: Stats::of(&best), single: Stats::of(&single) });
        }
    }
    out
}
