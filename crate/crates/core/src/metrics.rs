//! Factor-recovery metrics.

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::synth::SynthGroundTruth;
use crate::tensor::{fit_residuals, normalize_columns_in_place, Parafac2Factors, RaggedTensor};

/// Largest rank for which the alignment searches every permutation.
pub const EXHAUSTIVE_ALIGN_MAX_RANK: usize = 6;

fn clipped_normalized(b: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    b.iter()
        .map(|bk| {
            let mut m = bk.map(|v| v.max(0.0));
            normalize_columns_in_place(&mut m);
            m
        })
        .collect()
}

fn normalized(b: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    b.iter()
        .map(|bk| {
            let mut m = bk.clone();
            normalize_columns_in_place(&mut m);
            m
        })
        .collect()
}

fn check_pair(est: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<()> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} estimated vs {} true slices", est.len(), truth.len())));
    }
    for (e, t) in est.iter().zip(truth) {
        if e.shape() != t.shape() {
            return Err(Error::ShapeMismatch(format!("estimate {:?} vs truth {:?}", e.shape(), t.shape())));
        }
    }
    Ok(())
}

/// `sim[(q, p)]`: cosine between true component `q` and estimated component
/// `p`, each concatenated over slices.
fn similarity(est: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> DMatrix<f64> {
    let r = truth[0].ncols();
    let mut dots = DMatrix::zeros(r, r);
    let mut en = vec![0.0; r];
    let mut tn = vec![0.0; r];
    for (e, t) in est.iter().zip(truth) {
        dots += t.tr_mul(e);
        for p in 0..r {
            en[p] += e.column(p).norm_squared();
            tn[p] += t.column(p).norm_squared();
        }
    }
    DMatrix::from_fn(r, r, |q, p| {
        let denom = (tn[q] * en[p]).sqrt();
        if denom > 0.0 {
            dots[(q, p)] / denom
        } else {
            0.0
        }
    })
}

/// Matches estimated columns to true columns. `perm[q]` is the estimated
/// column assigned to true column `q`, chosen to maximize the summed cosine
/// similarity of clipped, column-normalized estimates against the truth.
pub fn align_columns(est: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<Vec<usize>> {
    check_pair(est, truth)?;
    let sim = similarity(&clipped_normalized(est), &normalized(truth));
    let r = sim.nrows();
    if r <= EXHAUSTIVE_ALIGN_MAX_RANK {
        let mut best = ((0..r).collect::<Vec<_>>(), f64::NEG_INFINITY);
        for perm in (0..r).permutations(r) {
            let score: f64 = perm.iter().enumerate().map(|(q, &p)| sim[(q, p)]).sum();
            if score > best.1 {
                best = (perm, score);
            }
        }
        Ok(best.0)
    } else {
        let mut perm = vec![usize::MAX; r];
        let mut used = vec![false; r];
        for _ in 0..r {
            let mut pick = (0, 0, f64::NEG_INFINITY);
            for q in (0..r).filter(|&q| perm[q] == usize::MAX) {
                for p in (0..r).filter(|&p| !used[p]) {
                    if sim[(q, p)] > pick.2 {
                        pick = (q, p, sim[(q, p)]);
                    }
                }
            }
            perm[pick.0] = pick.1;
            used[pick.1] = true;
        }
        Ok(perm)
    }
}

/// Mean over slices of `||B_k − [B̂_k]⁺||² / ||B_k||²` after column
/// normalization of both sides and column alignment.
pub fn relative_b_error_of(est: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<f64> {
    let perm = align_columns(est, truth)?;
    let est = clipped_normalized(est);
    let truth = normalized(truth);
    let total: f64 = est
        .iter()
        .zip(&truth)
        .map(|(e, t)| {
            let aligned = DMatrix::from_fn(e.nrows(), e.ncols(), |i, q| e[(i, perm[q])]);
            let denom = t.norm_squared();
            if denom > 0.0 {
                (t - aligned).norm_squared() / denom
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / truth.len() as f64)
}

pub fn relative_b_error(est: &Parafac2Factors, truth: &SynthGroundTruth) -> Result<f64> {
    relative_b_error_of(&est.b, &truth.b)
}

/// `sqrt(Σ_k ||M_k − A D_k B_kᵀ||²) / ||M||`.
pub fn relative_fit(tensor: &RaggedTensor, factors: &Parafac2Factors) -> Result<f64> {
    let res: f64 = fit_residuals(tensor, factors)?.iter().sum();
    let norm = tensor.total_norm();
    Ok(if norm > 0.0 {
        res.sqrt() / norm
    } else if res == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

/// Linear-interpolation quantile (the "type 7" definition) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_shifted_b;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permute(b: &[DMatrix<f64>], perm: &[usize], scale: &[f64]) -> Vec<DMatrix<f64>> {
        // estimated column perm[q] holds true column q
        b.iter()
            .map(|bk| {
                let mut out = bk.clone();
                for (q, &p) in perm.iter().enumerate() {
                    out.set_column(p, &(bk.column(q) * scale[q]));
                }
                out
            })
            .collect()
    }

    #[test]
    fn align_identity_and_swap() {
        let b = gen_shifted_b(8, 3, 4, 1, 1).unwrap();
        assert_eq!(align_columns(&b, &b).unwrap(), vec![0, 1, 2]);
        let swapped = permute(&b, &[1, 0, 2], &[1.0; 3]);
        assert_eq!(align_columns(&swapped, &b).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn align_recovers_noisy_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..20 {
            let b = gen_shifted_b(10, 3, 5, 1, 100 + trial).unwrap();
            let perm = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]][trial as usize % 6];
            let noisy: Vec<_> = permute(&b, &perm, &[1.0; 3])
                .into_iter()
                .map(|m| m.map(|v| v + 1e-3 * rng.random_range(-1.0..1.0)))
                .collect();
            assert_eq!(align_columns(&noisy, &b).unwrap(), perm.to_vec());
        }
    }

    #[test]
    fn greedy_alignment_above_exhaustive_rank() {
        let b = gen_shifted_b(20, 8, 3, 1, 3).unwrap();
        let perm = [3, 1, 7, 0, 2, 6, 5, 4];
        assert_eq!(align_columns(&permute(&b, &perm, &[1.0; 8]), &b).unwrap(), perm.to_vec());
    }

    #[test]
    fn b_error_cases() {
        let b = gen_shifted_b(8, 3, 4, 1, 4).unwrap();
        assert!(relative_b_error_of(&b, &b).unwrap() < 1e-28);
        let est = permute(&b, &[2, 0, 1], &[7.0; 3]);
        assert!(relative_b_error_of(&est, &b).unwrap() < 1e-28);
        let zero: Vec<_> = b.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
        assert!((relative_b_error_of(&zero, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn b_error_clips_negative_entries() {
        let b = gen_shifted_b(8, 2, 2, 1, 5).unwrap();
        let est: Vec<_> = b.iter().map(|m| m.map(|v| if v == 0.0 { -0.3 } else { v })).collect();
        assert!(relative_b_error_of(&est, &b).unwrap() < 1e-28);
    }

    #[test]
    fn relative_fit_cases() {
        let b = gen_shifted_b(5, 2, 3, 1, 6).unwrap();
        let f = Parafac2Factors {
            a: DMatrix::from_element(4, 2, 0.5),
            c: DMatrix::from_element(3, 2, 1.0),
            p: b.iter().map(|bk| DMatrix::identity(bk.nrows(), 2)).collect(),
            bstar: DMatrix::identity(2, 2),
            b,
        };
        let exact: Vec<_> = (0..3).map(|k| f.reconstruct_slice(k).unwrap()).collect();
        let t = RaggedTensor::new(4, exact.clone()).unwrap();
        assert!(relative_fit(&t, &f).unwrap() < 1e-15);

        let mut zero = f.clone();
        zero.c.fill(0.0);
        assert!((relative_fit(&t, &zero).unwrap() - 1.0).abs() < 1e-15);

        let noisy = RaggedTensor::new(4, exact.iter().map(|m| m.add_scalar(0.1)).collect()).unwrap();
        let direct = (0.01f64 * 4.0 * 5.0 * 3.0).sqrt() / noisy.total_norm();
        assert!((relative_fit(&noisy, &f).unwrap() - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn quantile_linear_interpolation() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.2) - 1.8).abs() < 1e-15);
        assert!((quantile(&v, 0.8) - 4.2).abs() < 1e-15);
        assert_eq!(mean(&v), 3.0);
    }

    proptest! {
        #[test]
        fn b_error_invariant_to_permutation_and_scale(
            seed in 0u64..200,
            perm_idx in 0usize..6,
            scales in proptest::collection::vec(0.01f64..100.0, 3),
        ) {
            let perm = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]][perm_idx];
            let truth = gen_shifted_b(9, 3, 3, 2, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let est: Vec<_> = truth.iter().map(|m| m.map(|v| (v + 0.2 * rng.random_range(-1.0..1.0)).max(0.0))).collect();
            let base = relative_b_error_of(&est, &truth).unwrap();
            let moved = relative_b_error_of(&permute(&est, &perm, &scales), &truth).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((base - moved).abs() <= 1e-12 * (1.0 + base));
        }

        #[test]
        fn summary_quantiles_ordered(values in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let (q20, q50, q80) = (quantile(&values, 0.2), quantile(&values, 0.5), quantile(&values, 0.8));
            prop_assert!(q20 <= q50 && q50 <= q80);
        }
    }
}
