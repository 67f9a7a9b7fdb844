//! Numerical kernels shared by both solvers: nonnegative least squares in
//! normal-equation form, orthogonal Procrustes, the Khatri-Rao product and a
//! guarded symmetric solve for unconstrained ALS steps.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-separable NNLS in normal-equation form:
/// minimize `½·tr(X·G·Xᵀ) − tr(cross·Xᵀ)` subject to `X ≥ 0`,
/// where `G = FᵀF` is the Gram matrix of the design `F` and each row of
/// `cross` is `bᵢᵀF` for one right-hand side.
#[derive(Debug, Clone)]
pub struct NnlsProblem {
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub x0: DMatrix<f64>,
}

impl NnlsProblem {
    pub fn new(gram: DMatrix<f64>, cross: DMatrix<f64>, x0: DMatrix<f64>) -> Result<Self> {
        let r = gram.nrows();
        if gram.ncols() != r || cross.ncols() != r || x0.shape() != cross.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gram {:?}, cross {:?}, x0 {:?}",
                gram.shape(),
                cross.shape(),
                x0.shape()
            )));
        }
        let asym = (&gram - gram.transpose()).amax();
        if asym > 1e-10 * (1.0 + gram.amax()) {
            return Err(Error::ShapeMismatch(format!("gram not symmetric (max |G − Gᵀ| = {asym:e})")));
        }
        if x0.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::ShapeMismatch("warm start must be finite and nonnegative".into()));
        }
        Ok(Self { gram, cross, x0 })
    }

    /// Warm start taken from `x0` with negative entries clipped to zero.
    pub fn warm(gram: DMatrix<f64>, cross: DMatrix<f64>, x0: &DMatrix<f64>) -> Result<Self> {
        Self::new(gram, cross, x0.map(|v| v.max(0.0)))
    }

    pub fn objective(&self, x: &DMatrix<f64>) -> f64 {
        0.5 * (x * &self.gram).component_mul(x).sum() - self.cross.component_mul(x).sum()
    }
}

/// Cyclic coordinate descent over columns, each coordinate set to its exact
/// minimizer clipped at zero. Stops after `inner_iters` sweeps or when the
/// largest change in a sweep falls below `1e-10·(1 + max|X|)`.
///
/// A zero (or negative, from rounding) diagonal entry of the Gram matrix marks
/// a dead component; its variables are set to zero.
pub fn nnls(problem: &NnlsProblem, inner_iters: usize) -> DMatrix<f64> {
    let g = &problem.gram;
    let cross = &problem.cross;
    let mut x = problem.x0.clone();
    let (q, r) = x.shape();

    for _ in 0..inner_iters {
        let mut max_change = 0.0f64;
        for j in 0..r {
            let gjj = g[(j, j)];
            for i in 0..q {
                let old = x[(i, j)];
                let new = if gjj > 0.0 {
                    let mut s = cross[(i, j)];
                    for l in 0..r {
                        if l != j {
                            s -= g[(j, l)] * x[(i, l)];
                        }
                    }
                    (s / gjj).max(0.0)
                } else {
                    0.0
                };
                x[(i, j)] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < 1e-10 * (1.0 + x.amax()) {
            break;
        }
    }
    x
}

/// Result of an orthogonal Procrustes solve.
#[derive(Debug, Clone)]
pub struct PolarFactor {
    pub p: DMatrix<f64>,
    /// Set when the smallest retained singular value is below `1e-12` times
    /// the largest. `p` is still orthonormal but the maximizer is not unique.
    pub rank_deficient: bool,
}

/// `P = U_r V_rᵀ` from the thin SVD of `m` (`m × r`, `m ≥ r`): the
/// orthonormal-column matrix maximizing `tr(Pᵀ m)`.
pub fn procrustes(m: &DMatrix<f64>) -> Result<PolarFactor> {
    let (rows, r) = m.shape();
    if rows < r {
        return Err(Error::ShapeMismatch(format!("procrustes needs rows ≥ cols, got {rows}×{r}")));
    }
    if let Some(idx) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { slice: 0, row: idx % rows, col: idx / rows });
    }
    let svd = m.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let rank_deficient = !(smin >= 1e-12 * smax) || smax == 0.0;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    Ok(PolarFactor { p: u * v_t, rank_deficient })
}

/// Column-wise Kronecker product: column `p` of the result is
/// `x[:, p] ⊗ y[:, p]`, so entry `(i·b + j, p)` equals `x[i,p]·y[j,p]`.
pub fn khatri_rao(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::ColumnMismatch { left: x.ncols(), right: y.ncols() });
    }
    let b = y.nrows();
    Ok(DMatrix::from_fn(x.nrows() * b, x.ncols(), |row, p| x[(row / b, p)] * y[(row % b, p)]))
}

/// Solves `X · gram = cross` for symmetric PSD `gram`. When Cholesky fails a
/// ridge of `1e-12·tr(gram)/r` is added; an all-zero Gram yields `X = 0`.
pub fn solve_normal_equations(gram: &DMatrix<f64>, cross: &DMatrix<f64>) -> DMatrix<f64> {
    let r = gram.nrows();
    let rhs = cross.transpose();
    if let Some(chol) = gram.clone().cholesky() {
        return chol.solve(&rhs).transpose();
    }
    let ridge = 1e-12 * gram.trace() / r as f64;
    if !(ridge > 0.0) {
        return DMatrix::zeros(cross.nrows(), r);
    }
    let mut jittered = gram.clone();
    for i in 0..r {
        jittered[(i, i)] += ridge;
    }
    match jittered.clone().cholesky() {
        Some(chol) => chol.solve(&rhs).transpose(),
        // Indefinite beyond rounding: fall back to the pseudo-inverse.
        None => {
            let pinv = jittered.pseudo_inverse(1e-14 * gram.amax()).unwrap_or_else(|_| DMatrix::zeros(r, r));
            cross * pinv
        }
    }
}
