//! Configuration, run reports, random initialization and best-of-N driving
//! shared by the classic and flexible solvers.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::flexible::{self, MuState};
use crate::metrics::relative_fit;
use crate::tensor::{normalize_columns_in_place, Parafac2Factors, RaggedTensor};
use crate::classic;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rank: usize,
    pub max_iter: usize,
    /// Stop when `|Δobjective| / objective` over one iteration drops below this.
    pub rel_tol: f64,
    /// Assumed signal-to-noise ratio (dB) used to calibrate the coupling weights.
    pub snr_db: f64,
    pub mu_init_factor: f64,
    pub mu_growth: f64,
    pub mu_cap: f64,
    pub nnls_inner_iters: usize,
    pub seed: u64,
    pub execution: Execution,
    /// Column-normalize `B*` after its weighted-average update.
    pub normalize_bstar: bool,
    /// Recalibrate the coupling weights from the residuals after iteration 1.
    pub calibrate_mu: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank: 3,
            max_iter: 1000,
            rel_tol: 1e-8,
            snr_db: 20.0,
            mu_init_factor: 1e-1,
            mu_growth: 1.02,
            mu_cap: 10.0,
            nnls_inner_iters: 50,
            seed: 0,
            execution: Execution::default(),
            normalize_bstar: true,
            calibrate_mu: true,
        }
    }
}

impl SolverConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self { rank, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.rank == 0 {
            return bad("rank must be at least 1");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite");
        }
        if !(self.mu_init_factor > 0.0) || !(self.mu_cap > 0.0) {
            return bad("mu_init_factor and mu_cap must be positive");
        }
        if !(self.mu_growth >= 1.0) || !self.mu_growth.is_finite() {
            return bad("mu_growth must be at least 1");
        }
        if self.nnls_inner_iters == 0 {
            return bad("nnls_inner_iters must be at least 1");
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, tensor: &RaggedTensor) -> Result<()> {
        self.validate()?;
        for (slice, width) in tensor.slice_widths().into_iter().enumerate() {
            if width < self.rank {
                return Err(Error::RankExceedsWidth { rank: self.rank, width, slice });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunWarning {
    /// The objective rose by more than `1e-10` relative in one iteration.
    ObjectiveIncrease { iteration: usize, relative: f64, mu_grew: bool },
    /// A Procrustes step met a rank-deficient target.
    RankDeficientProjection { iteration: usize, slice: usize },
    /// Coupling residual was exactly zero at calibration; `μ_k` set to the cap.
    PerfectCoupling { slice: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Objective after each outer iteration. The flexible solver records it on
    /// the norm-scaled data it optimizes.
    pub objective_trace: Vec<f64>,
    /// `||M_k − A D_k B_kᵀ||_F²` at termination, on the caller's data scale.
    pub fit_residuals: Vec<f64>,
    /// `||B_k − P_k B*||_F² / ||B_k||_F²` at termination.
    pub coupling_residuals: Vec<f64>,
    /// `μ_k` for every slice at the end of each iteration (empty for classic).
    pub mu_trace: Vec<Vec<f64>>,
    pub final_mu: Option<MuState>,
    pub iterations: usize,
    pub termination: Termination,
    pub wall_seconds: f64,
    pub warnings: Vec<RunWarning>,
}

impl RunReport {
    pub fn objective_increases(&self) -> impl Iterator<Item = &RunWarning> {
        self.warnings.iter().filter(|w| matches!(w, RunWarning::ObjectiveIncrease { .. }))
    }
}

/// Random starting point: `A`, `C` and every `B_k` uniform on `[0, 1)`,
/// `P_k` the zero-padded identity and `B*` the equally weighted average of
/// `P_kᵀ B_k`, column-normalized.
pub fn random_init(tensor: &RaggedTensor, rank: usize, seed: u64) -> Result<Parafac2Factors> {
    if rank == 0 {
        return Err(Error::InvalidConfig("rank must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize| DMatrix::from_fn(rows, rank, |_, _| rng.random::<f64>());
    let a = uniform(tensor.n());
    let c = uniform(tensor.num_slices());
    let b: Vec<_> = tensor.slice_widths().into_iter().map(&mut uniform).collect();
    let p: Vec<_> = b.iter().map(|bk| DMatrix::identity(bk.nrows(), rank)).collect();
    let mut bstar = flexible::update_bstar(&p, &b, &vec![1.0; b.len()])?;
    normalize_columns_in_place(&mut bstar);
    Ok(Parafac2Factors { a, c, b, p, bstar })
}

/// Mixes a base seed with an index (splitmix64 finalizer) so derived streams
/// do not overlap for neighbouring bases.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Classic,
    Flexible,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Classic => "classic",
            SolverKind::Flexible => "flexible",
        }
    }

    pub fn run(
        self,
        tensor: &RaggedTensor,
        config: &SolverConfig,
        init: &Parafac2Factors,
    ) -> Result<(Parafac2Factors, RunReport)> {
        match self {
            SolverKind::Classic => classic::run_classic(tensor, config, init),
            SolverKind::Flexible => flexible::run_flexible(tensor, config, init),
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(SolverKind::Classic),
            "flexible" => Ok(SolverKind::Flexible),
            other => Err(Error::InvalidConfig(format!("unknown solver '{other}'"))),
        }
    }
}

/// One finished run from a multi-start fit.
#[derive(Debug, Clone)]
pub struct Attempt {
    pub init_seed: u64,
    pub factors: Parafac2Factors,
    pub report: RunReport,
    pub relative_fit: f64,
}

/// Runs `inits` random starts (seeds `derive_seed(config.seed, i)`) and
/// returns every attempt plus the index of the one with the lowest relative
/// reconstruction error. Ties keep the earliest start.
pub fn fit_multistart(
    tensor: &RaggedTensor,
    config: &SolverConfig,
    solver: SolverKind,
    inits: usize,
) -> Result<(Vec<Attempt>, usize)> {
    if inits == 0 {
        return Err(Error::InvalidConfig("at least one initialization is required".into()));
    }
    let mut attempts = Vec::with_capacity(inits);
    for i in 0..inits {
        let init_seed = derive_seed(config.seed, i as u64);
        let init = random_init(tensor, config.rank, init_seed)?;
        let (factors, report) = solver.run(tensor, config, &init)?;
        let fit = relative_fit(tensor, &factors)?;
        attempts.push(Attempt { init_seed, factors, report, relative_fit: fit });
    }
    let best = best_index(attempts.iter().map(|a| a.relative_fit));
    Ok((attempts, best))
}

pub(crate) fn best_index(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        // NaN never wins
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// `|prev − cur| ≤ tol·prev`, or an exact zero objective.
pub(crate) fn has_converged(prev: f64, cur: f64, tol: f64) -> bool {
    cur == 0.0 || (prev - cur).abs() <= tol * prev.abs()
}
