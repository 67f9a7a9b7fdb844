//! Unconstrained PARAFAC2 by alternating least squares.
//!
//! Each outer iteration solves the orthogonal Procrustes problem for every
//! `P_k`, projects the slices onto those bases (`Y_k = M_k P_k`), and runs a
//! single CP-ALS pass on the resulting `n × r × K` tensor. No sign or
//! nonnegativity constraint is imposed anywhere.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{khatri_rao, procrustes, solve_normal_equations, PolarFactor};
use crate::solver::{has_converged, RunReport, RunWarning, SolverConfig, Termination};
use crate::tensor::{normalize_columns_in_place, scale_columns, Parafac2Factors, RaggedTensor};

/// `P_k = procrustes(M_kᵀ · A · diag(c_k) · B*ᵀ)`, the orthonormal-column
/// minimizer of `||M_k − A diag(c_k) B*ᵀ P_kᵀ||_F²`.
pub fn update_projection_classic(
    mk: &DMatrix<f64>,
    a: &DMatrix<f64>,
    ck: &[f64],
    bstar: &DMatrix<f64>,
) -> Result<PolarFactor> {
    if mk.nrows() != a.nrows() || ck.len() != a.ncols() || bstar.shape() != (a.ncols(), a.ncols()) {
        return Err(Error::ShapeMismatch("projection update inputs disagree".into()));
    }
    let target = mk.transpose() * scale_columns(a, ck.iter().copied()) * bstar.transpose();
    procrustes(&target)
}

/// Frontal slices `Y_k = M_k P_k`.
pub fn project_slices(tensor: &RaggedTensor, p: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    if p.len() != tensor.num_slices() {
        return Err(Error::ShapeMismatch(format!("{} projections for {} slices", p.len(), tensor.num_slices())));
    }
    tensor
        .slices()
        .iter()
        .zip(p)
        .enumerate()
        .map(|(k, (mk, pk))| {
            if pk.nrows() != mk.ncols() {
                return Err(Error::ShapeMismatch(format!("P_{k} has {} rows, slice has {} columns", pk.nrows(), mk.ncols())));
            }
            Ok(mk * pk)
        })
        .collect()
}

/// CP factors of the projected tensor: `Y_k ≈ A · diag(C[k,:]) · B*ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    pub a: DMatrix<f64>,
    pub bstar: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// `Σ_k ||Y_k − A diag(C[k,:]) B*ᵀ||_F²`.
pub fn cp_fit(y: &[DMatrix<f64>], f: &CpFactors) -> f64 {
    let bt = f.bstar.transpose();
    y.iter()
        .enumerate()
        .map(|(k, yk)| (yk - scale_columns(&f.a, f.c.row(k).iter().copied()) * &bt).norm_squared())
        .sum()
}

/// One least-squares update of `A`, then `B*`, then `C`, each from the
/// matching unfolding of `Y` and the Khatri-Rao product of the other two
/// factors.
pub fn cp_als_pass(y: &[DMatrix<f64>], f: &CpFactors) -> Result<CpFactors> {
    let n = f.a.nrows();
    let r = f.a.ncols();
    let k = y.len();
    if f.bstar.shape() != (r, r) || f.c.shape() != (k, r) || y.iter().any(|yk| yk.shape() != (n, r)) {
        return Err(Error::ShapeMismatch("CP-ALS factors do not match the projected tensor".into()));
    }

    // Unfoldings with the column orderings matching khatri_rao(outer, inner).
    // mode 1: n × (K·r), column k·r + j holds Y_k[:, j]
    let y1 = DMatrix::from_fn(n, k * r, |i, col| y[col / r][(i, col % r)]);
    // mode 2: r × (K·n), column k·n + i holds Y_k[i, :]
    let y2 = DMatrix::from_fn(r, k * n, |j, col| y[col / n][(col % n, j)]);
    // mode 3: K × (r·n), row k is vec(Y_k) in column-major order
    let y3 = DMatrix::from_fn(k, r * n, |kk, col| y[kk][(col % n, col / n)]);

    let a = solve_normal_equations(
        &(f.c.transpose() * &f.c).component_mul(&(f.bstar.transpose() * &f.bstar)),
        &(y1 * khatri_rao(&f.c, &f.bstar)?),
    );
    let bstar = solve_normal_equations(
        &(f.c.transpose() * &f.c).component_mul(&(a.transpose() * &a)),
        &(y2 * khatri_rao(&f.c, &a)?),
    );
    let c = solve_normal_equations(
        &(bstar.transpose() * &bstar).component_mul(&(a.transpose() * &a)),
        &(y3 * khatri_rao(&bstar, &a)?),
    );
    Ok(CpFactors { a, bstar, c })
}

/// Unit-norm columns for `A` and `B*`, with their norms moved into `C`.
fn normalize_absorbing(f: &mut CpFactors) {
    for norms in [normalize_columns_in_place(&mut f.a), normalize_columns_in_place(&mut f.bstar)] {
        for (mut col, s) in f.c.column_iter_mut().zip(norms) {
            col *= s;
        }
    }
}

fn materialize(cp: &CpFactors, p: Vec<DMatrix<f64>>) -> Parafac2Factors {
    let b = p.iter().map(|pk| pk * &cp.bstar).collect();
    Parafac2Factors { a: cp.a.clone(), c: cp.c.clone(), b, p, bstar: cp.bstar.clone() }
}

/// Classic PARAFAC2 ALS. Only `A`, `C` and `B*` of `init` are used; the
/// returned `B_k` are materialized as `P_k B*`.
pub fn run_classic(
    tensor: &RaggedTensor,
    config: &SolverConfig,
    init: &Parafac2Factors,
) -> Result<(Parafac2Factors, RunReport)> {
    let start = Instant::now();
    config.check_against(tensor)?;
    init.check_shapes(tensor)?;
    if init.rank() != config.rank {
        return Err(Error::InvalidConfig(format!("init has rank {}, config {}", init.rank(), config.rank)));
    }

    let exec = config.execution;
    let kk = tensor.num_slices();
    let mut cp = CpFactors { a: init.a.clone(), bstar: init.bstar.clone(), c: init.c.clone() };
    let mut p = init.p.clone();
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut termination = Termination::MaxIter;

    for iteration in 1..=config.max_iter {
        let polar = exec.try_map(kk, |k| {
            let ck: Vec<f64> = cp.c.row(k).iter().copied().collect();
            update_projection_classic(&tensor.slices()[k], &cp.a, &ck, &cp.bstar)
        })?;
        p = Vec::with_capacity(kk);
        for (slice, pf) in polar.into_iter().enumerate() {
            if pf.rank_deficient {
                warnings.push(RunWarning::RankDeficientProjection { iteration, slice });
            }
            p.push(pf.p);
        }

        let y = project_slices(tensor, &p)?;
        cp = cp_als_pass(&y, &cp)?;
        normalize_absorbing(&mut cp);

        let objective = slice_objective(tensor, &cp, &p, exec).iter().sum::<f64>();
        let prev = trace.last().copied();
        trace.push(objective);
        if let Some(prev) = prev {
            if objective > prev * (1.0 + 1e-10) {
                warnings.push(RunWarning::ObjectiveIncrease {
                    iteration,
                    relative: (objective - prev) / prev,
                    mu_grew: false,
                });
            }
            if has_converged(prev, objective, config.rel_tol) {
                termination = Termination::Converged;
                break;
            }
        } else if objective == 0.0 {
            termination = Termination::Converged;
            break;
        }
    }

    let iterations = trace.len();
    let fit_residuals = slice_objective(tensor, &cp, &p, exec);
    let factors = materialize(&cp, p);
    let report = RunReport {
        objective_trace: trace,
        fit_residuals,
        coupling_residuals: vec![0.0; kk],
        mu_trace: Vec::new(),
        final_mu: None,
        iterations,
        termination,
        wall_seconds: start.elapsed().as_secs_f64(),
        warnings,
    };
    Ok((factors, report))
}

/// Per-slice `||M_k − A D_k (P_k B*)ᵀ||_F²`.
fn slice_objective(tensor: &RaggedTensor, cp: &CpFactors, p: &[DMatrix<f64>], exec: crate::exec::Execution) -> Vec<f64> {
    exec.map(tensor.num_slices(), |k| {
        let bk = &p[k] * &cp.bstar;
        let model = scale_columns(&cp.a, cp.c.row(k).iter().copied()) * bk.transpose();
        (&tensor.slices()[k] - model).norm_squared()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::random_init;
    use crate::tensor::fit_residuals;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn random_tensor(n: usize, widths: &[usize], seed: u64) -> RaggedTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RaggedTensor::new(n, widths.iter().map(|&w| gaussian(n, w, &mut rng)).collect()).unwrap()
    }

    #[test]
    fn projection_recovers_constructed_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, m, r) = (6, 5, 3);
        let a = gaussian(n, r, &mut rng);
        let bstar = gaussian(r, r, &mut rng);
        let ck = [1.5, 0.7, 2.0];
        let q = gaussian(m, r, &mut rng).qr().q();
        let mk = scale_columns(&a, ck) * (&q * &bstar).transpose();
        let p = update_projection_classic(&mk, &a, &ck, &bstar).unwrap();
        assert!((p.p - q).norm() < 1e-8);
    }

    #[test]
    fn projection_identity_fixed_point() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let p = update_projection_classic(&i3, &i3, &[1.0; 3], &i3).unwrap();
        assert!((p.p - i3).norm() < 1e-14);
    }

    #[test]
    fn projection_does_not_increase_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (n, m, r) = (5, 7, 2);
            let mk = gaussian(n, m, &mut rng);
            let a = gaussian(n, r, &mut rng);
            let bstar = gaussian(r, r, &mut rng);
            let ck = [0.5, 1.2];
            let before_p = gaussian(m, r, &mut rng).qr().q();
            let fit = |p: &DMatrix<f64>| (&mk - scale_columns(&a, ck) * (p * &bstar).transpose()).norm_squared();
            let after = update_projection_classic(&mk, &a, &ck, &bstar).unwrap().p;
            assert!(fit(&after) <= fit(&before_p) + 1e-12);
        }
    }

    #[test]
    fn project_identity_and_contraction() {
        let t = random_tensor(4, &[3, 5], 3);
        let p = vec![DMatrix::identity(3, 3), DMatrix::identity(5, 3)];
        let y = project_slices(&t, &p).unwrap();
        assert_eq!(y[0], t.slices()[0]);
        assert!(y[1].norm() <= t.slices()[1].norm());
        assert!(project_slices(&t, &p[..1]).is_err());
    }

    #[test]
    fn project_matches_direct_product() {
        let t = random_tensor(4, &[6], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = gaussian(6, 2, &mut rng).qr().q();
        let y = project_slices(&t, std::slice::from_ref(&p)).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let direct: f64 = (0..6).map(|l| t.slices()[0][(i, l)] * p[(l, j)]).sum();
                assert!((y[0][(i, j)] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cp_als_rank_one_fixed_point() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 0.5]);
        let b = DMatrix::from_column_slice(1, 1, &[1.5]);
        let c = DMatrix::from_column_slice(4, 1, &[0.3, 1.0, 2.0, 0.7]);
        let truth = CpFactors { a: a.clone(), bstar: b.clone(), c: c.clone() };
        let y: Vec<_> = (0..4).map(|k| &a * c[(k, 0)] * b.transpose()).collect();
        let out = cp_als_pass(&y, &truth).unwrap();
        let recon: Vec<_> = (0..4).map(|k| &out.a * out.c[(k, 0)] * out.bstar.transpose()).collect();
        for (r, yk) in recon.iter().zip(&y) {
            assert!((r - yk).norm() < 1e-10);
        }
        // direction of each factor preserved
        let cos = |x: &DMatrix<f64>, y: &DMatrix<f64>| x.dot(y) / (x.norm() * y.norm());
        assert!((cos(&out.a, &a) - 1.0).abs() < 1e-10);
        assert!((cos(&out.c, &c) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cp_als_does_not_increase_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let y: Vec<_> = (0..5).map(|_| gaussian(4, 3, &mut rng)).collect();
            let f = CpFactors { a: gaussian(4, 3, &mut rng), bstar: gaussian(3, 3, &mut rng), c: gaussian(5, 3, &mut rng) };
            let g = cp_als_pass(&y, &f).unwrap();
            assert!(cp_fit(&y, &g) <= cp_fit(&y, &f) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cp_als_zero_data() {
        let y = vec![DMatrix::zeros(3, 2); 4];
        let f = CpFactors { a: DMatrix::from_element(3, 2, 1.0), bstar: DMatrix::identity(2, 2), c: DMatrix::from_element(4, 2, 0.5) };
        let g = cp_als_pass(&y, &f).unwrap();
        assert_eq!(g.a, DMatrix::zeros(3, 2));
        let mut g = g;
        normalize_absorbing(&mut g);
        assert!(g.a.iter().chain(g.c.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn run_respects_budget_and_invariants() {
        let t = random_tensor(6, &[5, 7, 6], 7);
        let config = SolverConfig { max_iter: 1, ..SolverConfig::with_rank(2) };
        let init = random_init(&t, 2, 1).unwrap();
        let (f, rep) = run_classic(&t, &config, &init).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.termination, Termination::MaxIter);
        assert!(rep.coupling_residuals.iter().all(|&c| c == 0.0));

        let config = SolverConfig { max_iter: 200, ..SolverConfig::with_rank(2) };
        let (f2, rep) = run_classic(&t, &config, &init).unwrap();
        for w in rep.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10));
        }
        for (pk, bk) in f2.p.iter().zip(&f2.b) {
            assert!((pk.transpose() * pk - DMatrix::<f64>::identity(2, 2)).norm() <= 1e-10);
            let gram_k = bk.transpose() * bk;
            assert!((gram_k - f2.bstar.transpose() * &f2.bstar).norm() <= 1e-10);
        }
        let fits = fit_residuals(&t, &f2).unwrap();
        for (x, y) in fits.iter().zip(&rep.fit_residuals) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + x));
        }
        let _ = f;
    }

    #[test]
    fn run_rejects_rank_above_width() {
        let t = random_tensor(4, &[2, 5], 8);
        let init = random_init(&t, 3, 1);
        let config = SolverConfig::with_rank(3);
        assert!(init.is_err() || matches!(run_classic(&t, &config, &init.unwrap()), Err(Error::RankExceedsWidth { .. })));
    }
}
