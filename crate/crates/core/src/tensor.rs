//! Ragged third-order tensors and PARAFAC2 factor sets.
//!
//! A [`RaggedTensor`] holds `K` slices `M_k`, each `n × m_k`, sharing the row
//! dimension. A [`Parafac2Factors`] holds the shared loading `A` (`n × r`), the
//! slice weights `C` (`K × r`, row `k` is the diagonal of `D_k`), the coupled
//! factors `B_k` (`m_k × r`), the orthonormal coupling matrices `P_k` and the
//! latent `r × r` factor `B*`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RaggedTensor {
    n: usize,
    slices: Vec<DMatrix<f64>>,
    total_norm: f64,
}

impl RaggedTensor {
    /// Builds a tensor from its slices, validating shapes and finiteness and
    /// caching the total ℓ2 norm.
    pub fn new(n: usize, slices: Vec<DMatrix<f64>>) -> Result<Self> {
        validate_parts(n, &slices)?;
        let total_norm = slices.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt();
        Ok(Self { n, slices, total_norm })
    }

    /// Takes the row count from the first slice.
    pub fn from_slices(slices: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = slices.first().map(|s| s.nrows()).ok_or(Error::Empty)?;
        Self::new(n, slices)
    }

    /// Re-checks every invariant, including the cached norm.
    pub fn validate(&self) -> Result<()> {
        validate_parts(self.n, &self.slices)?;
        let norm = self.slices.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt();
        if (norm - self.total_norm).abs() > 1e-12 * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::ShapeMismatch(format!(
                "cached total norm {} differs from recomputed {}",
                self.total_norm, norm
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn slice_widths(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.ncols()).collect()
    }

    pub fn min_width(&self) -> usize {
        self.slices.iter().map(|s| s.ncols()).min().unwrap_or(0)
    }

    pub fn slices(&self) -> &[DMatrix<f64>] {
        &self.slices
    }

    pub fn slice(&self, k: usize) -> Result<&DMatrix<f64>> {
        self.slices.get(k).ok_or(Error::IndexOutOfRange { index: k, len: self.slices.len() })
    }

    pub fn total_norm(&self) -> f64 {
        self.total_norm
    }

    /// Divides every slice by `s`. The cached norm is rescaled, not recomputed.
    pub(crate) fn scaled_by_inverse(&self, s: f64) -> Self {
        Self {
            n: self.n,
            slices: self.slices.iter().map(|m| m / s).collect(),
            total_norm: self.total_norm / s,
        }
    }
}

fn validate_parts(n: usize, slices: &[DMatrix<f64>]) -> Result<()> {
    if slices.is_empty() || n == 0 {
        return Err(Error::Empty);
    }
    for (k, s) in slices.iter().enumerate() {
        if s.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "slice {k} has {} rows, expected {n}",
                s.nrows()
            )));
        }
        if s.ncols() == 0 {
            return Err(Error::Empty);
        }
        if let Some(idx) = s.iter().position(|v| !v.is_finite()) {
            // column-major storage
            return Err(Error::NonFinite { slice: k, row: idx % n, col: idx / n });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parafac2Factors {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
    pub bstar: DMatrix<f64>,
}

impl Parafac2Factors {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_slices(&self) -> usize {
        self.b.len()
    }

    /// Checks every factor shape against `tensor`.
    pub fn check_shapes(&self, tensor: &RaggedTensor) -> Result<()> {
        let r = self.rank();
        let k = tensor.num_slices();
        let bad = |what: String| Err(Error::ShapeMismatch(what));
        if self.a.shape() != (tensor.n(), r) {
            return bad(format!("A is {:?}, expected ({}, {r})", self.a.shape(), tensor.n()));
        }
        if self.c.shape() != (k, r) {
            return bad(format!("C is {:?}, expected ({k}, {r})", self.c.shape()));
        }
        if self.bstar.shape() != (r, r) {
            return bad(format!("B* is {:?}, expected ({r}, {r})", self.bstar.shape()));
        }
        if self.b.len() != k || self.p.len() != k {
            return bad(format!("{} B and {} P factors for {k} slices", self.b.len(), self.p.len()));
        }
        for (i, w) in tensor.slice_widths().into_iter().enumerate() {
            if self.b[i].shape() != (w, r) || self.p[i].shape() != (w, r) {
                return bad(format!("B_{i} or P_{i} does not match width {w} and rank {r}"));
            }
        }
        Ok(())
    }

    /// `A · diag(C[k,:]) · B_k^T`.
    pub fn reconstruct_slice(&self, k: usize) -> Result<DMatrix<f64>> {
        let bk = self
            .b
            .get(k)
            .ok_or(Error::IndexOutOfRange { index: k, len: self.b.len() })?;
        if k >= self.c.nrows() {
            return Err(Error::IndexOutOfRange { index: k, len: self.c.nrows() });
        }
        if bk.ncols() != self.a.ncols() || self.c.ncols() != self.a.ncols() {
            return Err(Error::ShapeMismatch("rank differs between A, C and B_k".into()));
        }
        Ok(scale_columns(&self.a, self.c.row(k).iter().copied()) * bk.transpose())
    }

    /// Coupling residual `||B_k − P_k B*||_F²` for every slice.
    pub fn coupling_residuals(&self) -> Vec<f64> {
        self.b
            .iter()
            .zip(&self.p)
            .map(|(bk, pk)| (bk - pk * &self.bstar).norm_squared())
            .collect()
    }

    /// `||B_k − P_k B*||_F² / ||B_k||_F²`; zero when `B_k` is zero.
    pub fn relative_coupling_residuals(&self) -> Vec<f64> {
        self.coupling_residuals()
            .into_iter()
            .zip(&self.b)
            .map(|(res, bk)| {
                let nb = bk.norm_squared();
                if nb > 0.0 {
                    res / nb
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Squared Frobenius residual `||M_k − A D_k B_k^T||_F²` of every slice.
pub fn fit_residuals(tensor: &RaggedTensor, factors: &Parafac2Factors) -> Result<Vec<f64>> {
    factors.check_shapes(tensor)?;
    (0..tensor.num_slices())
        .map(|k| Ok((&tensor.slices[k] - factors.reconstruct_slice(k)?).norm_squared()))
        .collect()
}

/// Normalizes every column to unit ℓ2 norm and returns the original norms.
/// Zero columns are passed through with norm 0.
pub fn normalize_columns(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = m.clone();
    let norms = normalize_columns_in_place(&mut out);
    (out, norms)
}

pub(crate) fn normalize_columns_in_place(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut norms = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        norms.push(norm);
    }
    norms
}

/// `M · diag(d)`.
pub(crate) fn scale_columns(m: &DMatrix<f64>, d: impl IntoIterator<Item = f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, s) in out.column_iter_mut().zip(d) {
        col *= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_factors(n: usize, widths: &[usize], r: usize, seed: u64) -> Parafac2Factors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Parafac2Factors {
            a: random(n, r, &mut rng),
            c: random(widths.len(), r, &mut rng),
            b: widths.iter().map(|&w| random(w, r, &mut rng)).collect(),
            p: widths.iter().map(|&w| DMatrix::identity(w, r)).collect(),
            bstar: DMatrix::identity(r, r),
        }
    }

    #[test]
    fn validate_accepts_well_formed() {
        let t = RaggedTensor::new(3, vec![DMatrix::zeros(3, 4), DMatrix::from_element(3, 5, 1.0)])
            .unwrap();
        t.validate().unwrap();
        assert_eq!(t.slice_widths(), vec![4, 5]);
    }

    #[test]
    fn validate_rejects_bad_rows() {
        let err = RaggedTensor::new(3, vec![DMatrix::zeros(3, 4), DMatrix::zeros(2, 4)]);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn validate_rejects_nan() {
        let mut m = DMatrix::zeros(3, 4);
        m[(2, 1)] = f64::NAN;
        assert_eq!(
            RaggedTensor::new(3, vec![m]),
            Err(Error::NonFinite { slice: 0, row: 2, col: 1 })
        );
    }

    #[test]
    fn validate_rejects_empty() {
        assert_eq!(RaggedTensor::new(3, vec![]), Err(Error::Empty));
        assert_eq!(RaggedTensor::new(3, vec![DMatrix::zeros(3, 0)]), Err(Error::Empty));
    }

    #[test]
    fn total_norm_cached() {
        let t = RaggedTensor::new(1, vec![DMatrix::from_element(1, 2, 3.0), DMatrix::from_element(1, 1, 4.0)])
            .unwrap();
        assert!((t.total_norm() - (9.0f64 + 9.0 + 16.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn reconstruct_all_ones() {
        let f = Parafac2Factors {
            a: DMatrix::from_element(2, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
            b: vec![DMatrix::from_element(2, 1, 1.0)],
            p: vec![DMatrix::identity(2, 1)],
            bstar: DMatrix::identity(1, 1),
        };
        assert_eq!(f.reconstruct_slice(0).unwrap(), DMatrix::from_element(2, 2, 1.0));
        assert!(matches!(f.reconstruct_slice(1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn reconstruct_zero_weights() {
        let mut f = random_factors(4, &[5], 3, 1);
        f.c.fill(0.0);
        assert_eq!(f.reconstruct_slice(0).unwrap(), DMatrix::zeros(4, 5));
    }

    #[test]
    fn reconstruct_matches_triple_loop() {
        let f = random_factors(4, &[5, 6], 3, 2);
        for k in 0..2 {
            let rec = f.reconstruct_slice(k).unwrap();
            for i in 0..4 {
                for j in 0..f.b[k].nrows() {
                    let mut s = 0.0;
                    for p in 0..3 {
                        s += f.a[(i, p)] * f.c[(k, p)] * f.b[k][(j, p)];
                    }
                    assert!((rec[(i, j)] - s).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn fit_residuals_exact_and_offset() {
        let f = random_factors(2, &[3, 3], 2, 3);
        let exact: Vec<_> = (0..2).map(|k| f.reconstruct_slice(k).unwrap()).collect();
        let t = RaggedTensor::new(2, exact.clone()).unwrap();
        assert!(fit_residuals(&t, &f).unwrap().iter().all(|&r| r < 1e-28));

        let shifted = exact.iter().map(|m| m.add_scalar(1.0)).collect();
        let t = RaggedTensor::new(2, shifted).unwrap();
        for r in fit_residuals(&t, &f).unwrap() {
            assert!((r - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_residuals_direct_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_factors(4, &[5, 7, 3], 3, 4);
        let slices: Vec<_> = [5, 7, 3].iter().map(|&w| random(4, w, &mut rng)).collect();
        let t = RaggedTensor::new(4, slices.clone()).unwrap();
        let got = fit_residuals(&t, &f).unwrap();
        for (k, m) in slices.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..4 {
                for j in 0..m.ncols() {
                    let mut model = 0.0;
                    for p in 0..3 {
                        model += f.a[(i, p)] * f.c[(k, p)] * f.b[k][(j, p)];
                    }
                    s += (m[(i, j)] - model).powi(2);
                }
            }
            assert!((got[k] - s).abs() <= 1e-12 * s);
        }
    }

    #[test]
    fn fit_residuals_shape_mismatch() {
        let f = random_factors(3, &[4], 2, 5);
        let t = RaggedTensor::new(3, vec![DMatrix::zeros(3, 5)]).unwrap();
        assert!(matches!(fit_residuals(&t, &f), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn normalize_columns_cases() {
        let m = DMatrix::from_column_slice(2, 3, &[3.0, 4.0, 1.0, 0.0, 0.0, 0.0]);
        let (out, norms) = normalize_columns(&m);
        assert_eq!(norms, vec![5.0, 1.0, 0.0]);
        assert!((out[(0, 0)] - 0.6).abs() < 1e-15 && (out[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(out.column(1), m.column(1));
        assert_eq!(out.column(2), m.column(2));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reconstruct_linear_in_weights(seed in 0u64..1000, alpha in -5.0f64..5.0) {
                let f = random_factors(3, &[4, 2], 2, seed);
                let mut g = f.clone();
                g.c.row_mut(1).scale_mut(alpha);
                let lhs = g.reconstruct_slice(1).unwrap();
                let rhs = f.reconstruct_slice(1).unwrap() * alpha;
                prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + alpha.abs()));
            }

            #[test]
            fn fit_invariant_under_compensated_rescale(seed in 0u64..1000, alpha in 0.01f64..100.0) {
                let f = random_factors(3, &[4, 5], 2, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
                let t = RaggedTensor::new(3, vec![random(3, 4, &mut rng), random(3, 5, &mut rng)]).unwrap();
                let mut g = f.clone();
                g.a.column_mut(0).scale_mut(1.0 / alpha);
                g.c.column_mut(0).scale_mut(alpha);
                let r1 = fit_residuals(&t, &f).unwrap();
                let r2 = fit_residuals(&t, &g).unwrap();
                for (x, y) in r1.iter().zip(&r2) {
                    prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x));
                }
            }

            #[test]
            fn normalize_idempotent(vals in proptest::collection::vec(-10.0f64..10.0, 6)) {
                let m = DMatrix::from_vec(3, 2, vals);
                let (once, _) = normalize_columns(&m);
                let (twice, _) = normalize_columns(&once);
                prop_assert!((once - twice).norm() <= 1e-15);
            }
        }
    }
}
