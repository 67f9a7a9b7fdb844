//! Synthetic shifted-PARAFAC data.
//!
//! `A` is clipped Gaussian, `C` uniform on `[0, 1)`, both column-normalized.
//! `B_1` is clipped Gaussian, column-normalized, and `B_k` is `B_1` with its
//! rows circularly shifted by `(k − 1)·shift_step`, so every `B_kᵀB_k` is
//! identical. Gaussian noise of standard deviation `sigma` is added last.
//!
//! Randomness comes from ChaCha8 seeded with the spec seed, one stream per
//! role: [`STREAM_A`], [`STREAM_C`], [`STREAM_B`] and [`STREAM_NOISE`]. A
//! column that clips to all zeros is redrawn from stream `role + attempt`
//! shifted into the upper 32 bits, so redraws never reuse role streams.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{normalize_columns_in_place, scale_columns, Parafac2Factors, RaggedTensor};

pub const STREAM_A: u64 = 1;
pub const STREAM_C: u64 = 2;
pub const STREAM_B: u64 = 3;
pub const STREAM_NOISE: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub rank: usize,
    pub sigma: f64,
    pub seed: u64,
    pub shift_step: i64,
}

impl Default for SynthSpec {
    /// `20 × 30 × 20`, rank 3, noiseless.
    fn default() -> Self {
        Self { n: 20, m: 30, k: 20, rank: 3, sigma: 0.0, seed: 0, shift_step: 1 }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 || self.rank == 0 {
            return Err(Error::InvalidConfig("all dimensions and the rank must be at least 1".into()));
        }
        if self.m < self.rank {
            return Err(Error::RankExceedsWidth { rank: self.rank, width: self.m, slice: 0 });
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig("sigma must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthGroundTruth {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub sigma: f64,
    pub seed: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Clipped standard Gaussian, column-normalized, all-zero columns redrawn.
fn clipped_gaussian(rows: usize, cols: usize, seed: u64, role: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, role);
    let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal).max(0.0));
    for j in 0..cols {
        let mut attempt = 1u64;
        while m.column(j).iter().all(|&v| v == 0.0) {
            let mut redraw = stream(seed, (role + attempt) << 32 | j as u64);
            for i in 0..rows {
                m[(i, j)] = redraw.sample::<f64, _>(StandardNormal).max(0.0);
            }
            attempt += 1;
        }
    }
    normalize_columns_in_place(&mut m);
    m
}

pub fn gen_a(n: usize, r: usize, seed: u64) -> DMatrix<f64> {
    clipped_gaussian(n, r, seed, STREAM_A)
}

fn uniform_raw(k: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, STREAM_C);
    DMatrix::from_fn(k, r, |_, _| rng.random::<f64>())
}

pub fn gen_c(k: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let mut c = uniform_raw(k, r, seed);
    normalize_columns_in_place(&mut c);
    c
}

/// Row `i` of `B_k` is row `(i − k·shift_step) mod m` of `B_1` (0-based `k`).
pub fn gen_shifted_b(m: usize, r: usize, k: usize, shift_step: i64, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    if m < r {
        return Err(Error::RankExceedsWidth { rank: r, width: m, slice: 0 });
    }
    let b1 = clipped_gaussian(m, r, seed, STREAM_B);
    Ok((0..k).map(|kk| circular_shift_rows(&b1, kk as i64 * shift_step)).collect())
}

pub fn circular_shift_rows(b: &DMatrix<f64>, shift: i64) -> DMatrix<f64> {
    let m = b.nrows() as i64;
    DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[((i as i64 - shift).rem_euclid(m) as usize, j)])
}

/// `M_k = A diag(C[k,:]) B_kᵀ + σ·G_k`.
pub fn gen_dataset(spec: &SynthSpec) -> Result<(RaggedTensor, SynthGroundTruth)> {
    spec.validate()?;
    let a = gen_a(spec.n, spec.rank, spec.seed);
    let c = gen_c(spec.k, spec.rank, spec.seed);
    let b = gen_shifted_b(spec.m, spec.rank, spec.k, spec.shift_step, spec.seed)?;
    let mut noise = stream(spec.seed, STREAM_NOISE);
    let slices = b
        .iter()
        .enumerate()
        .map(|(k, bk)| {
            let clean = scale_columns(&a, c.row(k).iter().copied()) * bk.transpose();
            if spec.sigma > 0.0 {
                clean + DMatrix::from_fn(spec.n, spec.m, |_, _| spec.sigma * noise.sample::<f64, _>(StandardNormal))
            } else {
                clean
            }
        })
        .collect();
    let tensor = RaggedTensor::new(spec.n, slices)?;
    Ok((tensor, SynthGroundTruth { a, c, b, sigma: spec.sigma, seed: spec.seed }))
}

impl SynthGroundTruth {
    /// The generating factors as an exactly coupled factor set:
    /// `B* = R` from `B_1 = Q R` and `P_k = B_k R⁻¹`, which is orthonormal
    /// because every `B_k` shares the Gram matrix `RᵀR`.
    pub fn as_factors(&self) -> Parafac2Factors {
        let r = self.a.ncols();
        let bstar = self.b[0].clone().qr().r();
        let p = match bstar.clone().try_inverse() {
            Some(inv) => self.b.iter().map(|bk| bk * &inv).collect(),
            None => self.b.iter().map(|bk| DMatrix::identity(bk.nrows(), r)).collect(),
        };
        Parafac2Factors { a: self.a.clone(), c: self.c.clone(), b: self.b.clone(), p, bstar }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::fit_residuals;

    fn unit_columns(m: &DMatrix<f64>) -> bool {
        m.column_iter().all(|c| (c.norm() - 1.0).abs() <= 1e-12)
    }

    #[test]
    fn gen_a_nonnegative_unit_and_half_sparse() {
        let a = gen_a(5000, 2, 1);
        assert!(a.iter().all(|&v| v >= 0.0));
        assert!(unit_columns(&a));
        let zeros = a.iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&zeros), "zero fraction {zeros}");
    }

    #[test]
    fn gen_a_redraws_dead_columns() {
        // With one row, each column is zero with probability 1/2.
        for seed in 0..50 {
            let a = gen_a(1, 4, seed);
            assert!(a.iter().all(|&v| v == 1.0), "seed {seed}: {a}");
        }
    }

    #[test]
    fn gen_c_range_mean_and_norm() {
        let raw = uniform_raw(5000, 2, 2);
        assert!(raw.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mean = raw.mean();
        assert!((0.48..=0.52).contains(&mean), "mean {mean}");
        let c = gen_c(5000, 2, 2);
        assert!(c.iter().all(|&v| v >= 0.0));
        assert!(unit_columns(&c));
    }

    #[test]
    fn shifted_b_properties() {
        let b = gen_shifted_b(7, 3, 9, 1, 3).unwrap();
        let g1 = b[0].transpose() * &b[0];
        for bk in &b {
            assert!((bk.transpose() * bk - &g1).amax() < 1e-14);
            assert!(bk.iter().all(|&v| v >= 0.0));
        }
        assert!(unit_columns(&b[0]));
        // a full cycle (k = 7) returns B_1
        assert_eq!(b[7], b[0]);

        let b = gen_shifted_b(3, 2, 2, 1, 4).unwrap();
        for i in 0..3 {
            assert_eq!(b[1].row(i), b[0].row((i + 2) % 3));
        }
        assert!(gen_shifted_b(2, 3, 2, 1, 0).is_err());
    }

    #[test]
    fn negative_shift_wraps() {
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(circular_shift_rows(&b, -1).as_slice(), &[2.0, 3.0, 1.0]);
        assert_eq!(circular_shift_rows(&b, 4).as_slice(), &[3.0, 1.0, 2.0]);
    }

    #[test]
    fn noiseless_dataset_is_exact() {
        let spec = SynthSpec { seed: 5, ..SynthSpec::default() };
        let (t, truth) = gen_dataset(&spec).unwrap();
        t.validate().unwrap();
        let fits = fit_residuals(&t, &truth.as_factors()).unwrap();
        assert!(fits.iter().all(|&f| f < 1e-28), "{fits:?}");
        let f = truth.as_factors();
        for pk in &f.p {
            assert!((pk.transpose() * pk - DMatrix::<f64>::identity(3, 3)).norm() < 1e-10);
        }
        assert!(f.coupling_residuals().iter().all(|&c| c < 1e-20));
    }

    #[test]
    fn noise_energy_matches_sigma() {
        let sigma = 1e-2;
        let (t, truth) = gen_dataset(&SynthSpec { sigma, seed: 6, ..SynthSpec::default() }).unwrap();
        let total: f64 = fit_residuals(&t, &truth.as_factors()).unwrap().iter().sum();
        let ratio = total / (20.0 * 30.0 * 20.0 * sigma * sigma);
        assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec { sigma: 1e-3, seed: 7, ..SynthSpec::default() };
        assert_eq!(gen_dataset(&spec).unwrap(), gen_dataset(&spec).unwrap());
        let other = SynthSpec { seed: 8, ..spec.clone() };
        assert_ne!(gen_dataset(&spec).unwrap().0, gen_dataset(&other).unwrap().0);
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec { m: 2, rank: 3, ..SynthSpec::default() }.validate().is_err());
        assert!(SynthSpec { sigma: -1.0, ..SynthSpec::default() }.validate().is_err());
        assert!(SynthSpec { k: 0, ..SynthSpec::default() }.validate().is_err());
    }
}
