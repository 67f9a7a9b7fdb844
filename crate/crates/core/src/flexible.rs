//! Flexibly coupled PARAFAC2 with nonnegativity on `A`, `B_k` and `D_k`.
//!
//! Instead of parameterizing `B_k = P_k B*`, the coupled factors are free
//! nonnegative matrices pulled towards `P_k B*` by a quadratic penalty:
//!
//! ```text
//! Σ_k ||M_k − A D_k B_kᵀ||_F² + μ_k ||B_k − P_k B*||_F²
//! s.t. A ≥ 0, B_k ≥ 0, D_k ≥ 0, unit-norm columns of A and B*
//! ```
//!
//! Each outer iteration updates, in order: the coupling weights `μ_k` (growth
//! after calibration), every `P_k` (Procrustes), `B*` (weighted average),
//! `A` (NNLS), every `B_k` (penalized NNLS) and every `D_k` (NNLS). The
//! weights are calibrated from the residuals once, at the end of iteration 1.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{nnls, procrustes, NnlsProblem, PolarFactor};
use crate::solver::{has_converged, RunReport, RunWarning, SolverConfig, Termination};
use crate::tensor::{fit_residuals, normalize_columns_in_place, scale_columns, Parafac2Factors, RaggedTensor};

/// Smallest coupling weight; a zero weight would drop the slice from the
/// `B*` average.
pub const MU_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuPhase {
    Initial,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuState {
    pub mu: Vec<f64>,
    pub phase: MuPhase,
    pub growth: f64,
    pub cap: f64,
}

impl MuState {
    pub fn total(&self) -> f64 {
        self.mu.iter().sum()
    }
}

/// Divides every slice by the total ℓ2 norm of the tensor.
pub fn preprocess(tensor: &RaggedTensor) -> Result<RaggedTensor> {
    let norm = tensor.total_norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroTensor);
    }
    Ok(tensor.scaled_by_inverse(norm))
}

/// `μ_k = mu_init_factor · ||M_k − A D_k B_kᵀ||² / ||B_k||²`, floored at
/// [`MU_FLOOR`].
pub fn init_mu(tensor: &RaggedTensor, factors: &Parafac2Factors, config: &SolverConfig) -> Result<MuState> {
    let fits = fit_residuals(tensor, factors)?;
    let mu = fits
        .iter()
        .zip(&factors.b)
        .enumerate()
        .map(|(slice, (fit, bk))| {
            let nb = bk.norm_squared();
            if nb > 0.0 {
                Ok((config.mu_init_factor * fit / nb).max(MU_FLOOR))
            } else {
                Err(Error::DegenerateFactor { slice })
            }
        })
        .collect::<Result<_>>()?;
    Ok(MuState { mu, phase: MuPhase::Initial, growth: config.mu_growth, cap: config.mu_cap })
}

/// `μ_k = 10^(−snr_db/10) · ||M_k − A D_k B_kᵀ||² / ||B_k − P_k B*||²`.
///
/// Slices whose coupling residual is exactly zero get `μ_k = cap` and are
/// returned in the second element.
pub fn recalibrate_mu(
    tensor: &RaggedTensor,
    factors: &Parafac2Factors,
    snr_db: f64,
    state: &MuState,
) -> Result<(MuState, Vec<usize>)> {
    let fits = fit_residuals(tensor, factors)?;
    let coupling = factors.coupling_residuals();
    let ratio = 10f64.powf(-snr_db / 10.0);
    let mut perfect = Vec::new();
    let mu = fits
        .iter()
        .zip(&coupling)
        .enumerate()
        .map(|(k, (&fit, &cpl))| {
            if cpl > 0.0 {
                (ratio * fit / cpl).max(MU_FLOOR)
            } else {
                perfect.push(k);
                state.cap
            }
        })
        .collect();
    Ok((MuState { mu, phase: MuPhase::Calibrated, ..state.clone() }, perfect))
}

/// Multiplies every `μ_k ≤ cap` by the growth factor.
pub fn grow_mu(state: &MuState) -> MuState {
    grow_mu_where(state, &vec![true; state.mu.len()])
}

/// As [`grow_mu`], restricted to slices whose `active` flag is set.
pub fn grow_mu_where(state: &MuState, active: &[bool]) -> MuState {
    let mu = state
        .mu
        .iter()
        .zip(active)
        .map(|(&m, &on)| if on && m <= state.cap { m * state.growth } else { m })
        .collect();
    MuState { mu, ..state.clone() }
}

/// `P_k = procrustes(B_k B*ᵀ)`: the orthonormal-column minimizer of
/// `||B_k − P_k B*||_F²`.
pub fn update_p(bk: &DMatrix<f64>, bstar: &DMatrix<f64>) -> Result<PolarFactor> {
    if bk.ncols() != bstar.nrows() {
        return Err(Error::ShapeMismatch(format!("B_k {:?} vs B* {:?}", bk.shape(), bstar.shape())));
    }
    procrustes(&(bk * bstar.transpose()))
}

/// `Σ_k μ_k P_kᵀ B_k / Σ_k μ_k`, before normalization.
pub fn weighted_bstar(p: &[DMatrix<f64>], b: &[DMatrix<f64>], mu: &[f64]) -> Result<DMatrix<f64>> {
    if p.is_empty() || p.len() != b.len() || b.len() != mu.len() {
        return Err(Error::ShapeMismatch(format!("{} P, {} B, {} μ", p.len(), b.len(), mu.len())));
    }
    let total: f64 = mu.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidConfig("coupling weights sum to zero".into()));
    }
    let r = b[0].ncols();
    let mut acc = DMatrix::zeros(r, r);
    for ((pk, bk), &w) in p.iter().zip(b).zip(mu) {
        if pk.shape() != bk.shape() || bk.ncols() != r {
            return Err(Error::ShapeMismatch("P_k and B_k shapes differ".into()));
        }
        acc += pk.tr_mul(bk) * w;
    }
    Ok(acc / total)
}

/// Weighted average of `P_kᵀ B_k`, column-normalized (zero columns kept).
pub fn update_bstar(p: &[DMatrix<f64>], b: &[DMatrix<f64>], mu: &[f64]) -> Result<DMatrix<f64>> {
    let mut bstar = weighted_bstar(p, b, mu)?;
    normalize_columns_in_place(&mut bstar);
    Ok(bstar)
}

/// Nonnegative update of `A` over all slices, warm-started from the current
/// `A`. Returns the column-normalized `A` and `C` with the norms absorbed.
pub fn update_a(
    tensor: &RaggedTensor,
    factors: &Parafac2Factors,
    inner_iters: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    factors.check_shapes(tensor)?;
    let r = factors.rank();
    let mut gram = DMatrix::zeros(r, r);
    let mut cross = DMatrix::zeros(tensor.n(), r);
    for (k, (mk, bk)) in tensor.slices().iter().zip(&factors.b).enumerate() {
        let bd = scale_columns(bk, factors.c.row(k).iter().copied());
        gram += bd.tr_mul(&bd);
        cross += mk * bd;
    }
    let problem = NnlsProblem::warm(gram, cross, &factors.a)?;
    let mut a = nnls(&problem, inner_iters);
    let norms = normalize_columns_in_place(&mut a);
    let mut c = factors.c.clone();
    for (mut col, s) in c.column_iter_mut().zip(norms) {
        col *= s;
    }
    Ok((a, c))
}

/// Nonnegative update of `B_k` for
/// `||M_k − A D_k B_kᵀ||² + μ_k ||B_k − P_k B*||²`, warm-started from `bk`.
#[allow(clippy::too_many_arguments)]
pub fn update_bk(
    mk: &DMatrix<f64>,
    a: &DMatrix<f64>,
    ck: &[f64],
    pk: &DMatrix<f64>,
    bstar: &DMatrix<f64>,
    mu_k: f64,
    bk: &DMatrix<f64>,
    inner_iters: usize,
) -> Result<DMatrix<f64>> {
    let ad = scale_columns(a, ck.iter().copied());
    let r = ad.ncols();
    let mut gram = ad.tr_mul(&ad);
    for i in 0..r {
        gram[(i, i)] += mu_k;
    }
    let cross = mk.tr_mul(&ad) + pk * bstar * mu_k;
    let problem = NnlsProblem::warm(gram, cross, bk)?;
    Ok(nnls(&problem, inner_iters))
}

/// Nonnegative update of the diagonal of `D_k`:
/// `argmin_{d≥0} ||vec(M_k) − (B_k ⊙ A) d||²`, solved from its normal
/// equations `((B_kᵀB_k) ∘ (AᵀA)) d = diag(Aᵀ M_k B_k)`.
pub fn update_dk(
    mk: &DMatrix<f64>,
    a: &DMatrix<f64>,
    bk: &DMatrix<f64>,
    ck: &[f64],
    inner_iters: usize,
) -> Result<Vec<f64>> {
    if mk.shape() != (a.nrows(), bk.nrows()) || a.ncols() != bk.ncols() || ck.len() != a.ncols() {
        return Err(Error::ShapeMismatch("D_k update inputs disagree".into()));
    }
    let gram = bk.tr_mul(bk).component_mul(&a.tr_mul(a));
    let amb = a.tr_mul(mk) * bk;
    let cross = DMatrix::from_fn(1, a.ncols(), |_, p| amb[(p, p)]);
    let x0 = DMatrix::from_row_slice(1, ck.len(), ck);
    let problem = NnlsProblem::warm(gram, cross, &x0)?;
    Ok(nnls(&problem, inner_iters).iter().copied().collect())
}

/// `Σ_k ||M_k − A D_k B_kᵀ||² + μ_k ||B_k − P_k B*||²`.
pub fn objective(tensor: &RaggedTensor, factors: &Parafac2Factors, mu: &MuState) -> Result<f64> {
    let fits = fit_residuals(tensor, factors)?;
    let coupling = factors.coupling_residuals();
    if mu.mu.len() != fits.len() {
        return Err(Error::ShapeMismatch(format!("{} weights for {} slices", mu.mu.len(), fits.len())));
    }
    Ok(fits.iter().zip(&coupling).zip(&mu.mu).map(|((f, c), m)| f + m * c).sum())
}

/// Rescales `C` by the least-squares scalar `⟨M, X⟩ / ||X||²` between the data
/// and the current model `X`, so the starting point lives on the data's scale.
/// Left untouched when that scalar is not positive.
pub fn match_data_scale(tensor: &RaggedTensor, factors: &mut Parafac2Factors) -> Result<()> {
    let mut inner = 0.0;
    let mut model_sq = 0.0;
    for (k, mk) in tensor.slices().iter().enumerate() {
        let model = factors.reconstruct_slice(k)?;
        inner += mk.dot(&model);
        model_sq += model.norm_squared();
    }
    if model_sq > 0.0 && inner > 0.0 {
        factors.c *= inner / model_sq;
    }
    Ok(())
}

/// State handed to an observer after each outer iteration. Factors are on the
/// norm-scaled data, so `C` differs from the returned factors by the total
/// norm of the input.
#[derive(Debug)]
pub struct IterationSnapshot<'a> {
    pub iteration: usize,
    pub factors: &'a Parafac2Factors,
    pub mu: &'a MuState,
    pub objective: f64,
}

/// Runs the flexible solver from `init`.
pub fn run_flexible(
    tensor: &RaggedTensor,
    config: &SolverConfig,
    init: &Parafac2Factors,
) -> Result<(Parafac2Factors, RunReport)> {
    run_flexible_observed(tensor, config, init, |_| {})
}

/// As [`run_flexible`], calling `observer` at the end of every iteration.
pub fn run_flexible_observed(
    tensor: &RaggedTensor,
    config: &SolverConfig,
    init: &Parafac2Factors,
    mut observer: impl FnMut(&IterationSnapshot<'_>),
) -> Result<(Parafac2Factors, RunReport)> {
    let start = Instant::now();
    config.check_against(tensor)?;
    init.check_shapes(tensor)?;
    if init.rank() != config.rank {
        return Err(Error::InvalidConfig(format!("init has rank {}, config {}", init.rank(), config.rank)));
    }
    let data = preprocess(tensor)?;
    let exec = config.execution;
    let kk = data.num_slices();
    let inner = config.nnls_inner_iters;
    let freeze_below = 10f64.powf(-config.snr_db / 10.0);

    let clip = |m: &DMatrix<f64>| m.map(|v| v.max(0.0));
    let mut f = Parafac2Factors {
        a: clip(&init.a),
        c: clip(&init.c),
        b: init.b.iter().map(clip).collect(),
        p: init.p.clone(),
        bstar: init.bstar.clone(),
    };
    match_data_scale(&data, &mut f)?;
    let mut mu = init_mu(&data, &f, config)?;

    let mut trace = Vec::new();
    let mut mu_trace = Vec::new();
    let mut warnings = Vec::new();
    let mut termination = Termination::MaxIter;
    let mut rel_coupling: Vec<f64> = f.relative_coupling_residuals();

    for iteration in 1..=config.max_iter {
        let mut mu_grew = false;
        if iteration >= 2 && mu.phase == MuPhase::Calibrated {
            let active: Vec<bool> = rel_coupling.iter().map(|&c| c > freeze_below).collect();
            let grown = grow_mu_where(&mu, &active);
            mu_grew = grown.mu != mu.mu;
            mu = grown;
        }

        let polar = exec.try_map(kk, |k| update_p(&f.b[k], &f.bstar))?;
        for (slice, pf) in polar.into_iter().enumerate() {
            if pf.rank_deficient {
                warnings.push(RunWarning::RankDeficientProjection { iteration, slice });
            }
            f.p[slice] = pf.p;
        }

        f.bstar = if config.normalize_bstar {
            update_bstar(&f.p, &f.b, &mu.mu)?
        } else {
            weighted_bstar(&f.p, &f.b, &mu.mu)?
        };

        let (a, c) = update_a(&data, &f, inner)?;
        f.a = a;
        f.c = c;

        let a_ref = &f.a;
        let c_ref = &f.c;
        let bstar_ref = &f.bstar;
        let new_b = exec.try_map(kk, |k| {
            let ck: Vec<f64> = c_ref.row(k).iter().copied().collect();
            update_bk(&data.slices()[k], a_ref, &ck, &f.p[k], bstar_ref, mu.mu[k], &f.b[k], inner)
        })?;
        f.b = new_b;

        let b_ref = &f.b;
        let new_d = exec.try_map(kk, |k| {
            let ck: Vec<f64> = c_ref.row(k).iter().copied().collect();
            update_dk(&data.slices()[k], a_ref, &b_ref[k], &ck, inner)
        })?;
        for (k, d) in new_d.into_iter().enumerate() {
            for (p, v) in d.into_iter().enumerate() {
                f.c[(k, p)] = v;
            }
        }

        if iteration == 1 && config.calibrate_mu {
            let (calibrated, perfect) = recalibrate_mu(&data, &f, config.snr_db, &mu)?;
            warnings.extend(perfect.into_iter().map(|slice| RunWarning::PerfectCoupling { slice }));
            mu = calibrated;
        }

        let obj = objective(&data, &f, &mu)?;
        rel_coupling = f.relative_coupling_residuals();
        let prev = trace.last().copied();
        trace.push(obj);
        mu_trace.push(mu.mu.clone());
        observer(&IterationSnapshot { iteration, factors: &f, mu: &mu, objective: obj });

        if let Some(prev) = prev {
            if obj > prev * (1.0 + 1e-10) {
                warnings.push(RunWarning::ObjectiveIncrease { iteration, relative: (obj - prev) / prev, mu_grew });
            }
            if has_converged(prev, obj, config.rel_tol) {
                termination = Termination::Converged;
                break;
            }
        } else if obj == 0.0 {
            termination = Termination::Converged;
            break;
        }
    }

    // Back to the caller's scale: M_k ≈ A (s·D_k) B_kᵀ.
    f.c *= tensor.total_norm();
    let report = RunReport {
        iterations: trace.len(),
        objective_trace: trace,
        fit_residuals: fit_residuals(tensor, &f)?,
        coupling_residuals: f.relative_coupling_residuals(),
        mu_trace,
        final_mu: Some(mu),
        termination,
        wall_seconds: start.elapsed().as_secs_f64(),
        warnings,
    };
    Ok((f, report))
}
