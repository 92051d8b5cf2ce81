//! Latent-effect removal by all-components principal components regression.
//!
//! A target row `z` is residualized as `z - z Z' G^-1 (Z - T gamma)`, where
//! `G` is the augmented Gram matrix and `gamma` is estimated by generalized
//! least squares against `G^-1`. Cross-residualization applies the same map
//! to each training row with that row held out, so training and target rows
//! are treated alike.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{CrcError, Result};
use crate::gram::{direct_fold_inverse, downdate_gram, remove_entry, DataMatrix, GramState, LabelVector};

/// Relative floor for `T' G^-1 T`, scaled by `n`.
pub const CONTRAST_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    pub gamma_hat: Array1<f64>,
}

/// Cross-residualized training matrix.
///
/// Each fold's gamma estimate is a linear combination of training rows;
/// the weights are stored instead of `n` dense `p`-vectors.
#[derive(Debug, Clone)]
pub struct ResidualizedMatrix {
    pub s_hat: Array2<f64>,
    /// Row `i` holds the weights `a` with `gamma^(i) = a' Z`; entry `i` is zero.
    pub gamma_weights: Array2<f64>,
}

impl ResidualizedMatrix {
    /// The held-out gamma estimate for fold `i`.
    pub fn per_row_gamma(&self, i: usize, dm: &DataMatrix) -> GammaEstimate {
        GammaEstimate { gamma_hat: self.gamma_weights.row(i).dot(&dm.values()) }
    }
}

/// Weights `a = H t / (t' H t)` so that `gamma = a' Z`.
fn contrast_weights(h_t: Array1<f64>, t: ArrayView1<f64>) -> Result<Array1<f64>> {
    let denom = t.dot(&h_t);
    if !(denom.abs() >= CONTRAST_TOLERANCE * t.len() as f64) || !denom.is_finite() {
        return Err(CrcError::DegenerateContrast { value: denom });
    }
    Ok(h_t / denom)
}

/// `gamma = [T' G^-1 T]^-1 T' G^-1 Z`.
pub fn estimate_gamma(g: &GramState, dm: &DataMatrix, t: &LabelVector) -> Result<GammaEstimate> {
    t.check_len(dm.nrows())?;
    let weights = contrast_weights(g.solve(t.as_array()), t.as_array())?;
    Ok(GammaEstimate { gamma_hat: weights.dot(&dm.values()) })
}

/// Residualizes a centered target row against the training data.
pub fn residualize(
    g: &GramState,
    dm: &DataMatrix,
    t: &LabelVector,
    gamma: &GammaEstimate,
    z: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    t.check_len(dm.nrows())?;
    residualize_with_inverse(g.effective_inverse(), dm.values(), t.as_array(), gamma, z)
}

/// Residualization with an explicit inverse Gram, for arbitrary training
/// matrices (for instance a literal leave-one-out submatrix).
pub fn residualize_with_inverse(
    gram_inverse: ArrayView2<f64>,
    train: ArrayView2<f64>,
    t: ArrayView1<f64>,
    gamma: &GammaEstimate,
    z: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let p = train.ncols();
    if z.len() != p || gamma.gamma_hat.len() != p {
        return Err(CrcError::shape(
            format!("{p} features"),
            format!("target {} / gamma {}", z.len(), gamma.gamma_hat.len()),
        ));
    }
    if gram_inverse.nrows() != train.nrows() || t.len() != train.nrows() {
        return Err(CrcError::shape(
            format!("{} training rows", train.nrows()),
            format!("inverse {} / labels {}", gram_inverse.nrows(), t.len()),
        ));
    }
    let kernel = train.dot(&z);
    let a = gram_inverse.dot(&kernel);
    let mut out = z.to_owned();
    out -= &a.dot(&train);
    out.scaled_add(a.dot(&t), &gamma.gamma_hat);
    Ok(out)
}

/// Gamma estimated from an explicit inverse Gram.
pub fn estimate_gamma_with_inverse(
    gram_inverse: ArrayView2<f64>,
    train: ArrayView2<f64>,
    t: ArrayView1<f64>,
) -> Result<GammaEstimate> {
    let weights = contrast_weights(gram_inverse.dot(&t), t)?;
    Ok(GammaEstimate { gamma_hat: weights.dot(&train) })
}

/// Leave-one-out residualization of every training row.
///
/// Fold `i` uses the augmented Gram restricted to the other rows (same
/// centering, same lambda), inverted by a rank-one downdate.
pub fn cross_residualize(g: &GramState, dm: &DataMatrix, t: &LabelVector) -> Result<ResidualizedMatrix> {
    let n = dm.nrows();
    t.check_len(n)?;
    if g.n() != n {
        return Err(CrcError::shape(format!("gram of size {n}"), g.n()));
    }
    let rows: Vec<(Array1<f64>, Array1<f64>)> =
        (0..n).into_par_iter().map(|i| fold_coefficients(g, t, i)).collect::<Result<_>>()?;

    // Row i of S-hat is Z_i - c_i' Z, with c_i zero at position i.
    let mut coef = Array2::zeros((n, n));
    let mut gamma_weights = Array2::zeros((n, n));
    for (i, (c, w)) in rows.into_iter().enumerate() {
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            coef[[i, j]] = c[k];
            gamma_weights[[i, j]] = w[k];
        }
    }
    let mut s_hat = dm.values().to_owned();
    ndarray::linalg::general_mat_mul(-1.0, &coef, &dm.values(), 1.0, &mut s_hat);
    Ok(ResidualizedMatrix { s_hat, gamma_weights })
}

/// Coefficients over the other rows for fold `i`: the residualization
/// weights and the gamma weights.
fn fold_coefficients(g: &GramState, t: &LabelVector, i: usize) -> Result<(Array1<f64>, Array1<f64>)> {
    let t_fold = Array1::from(t.without(i).ok_or(CrcError::FoldClassEmpty { index: i })?);
    let kernel = remove_entry(g.raw_gram().row(i), i);
    let (a, h_t) = match downdate_gram(g, i) {
        Ok(d) => (d.solve(kernel.view()), d.solve(t_fold.view())),
        Err(CrcError::DowndateSingular { .. }) => {
            log::warn!("fold {i}: downdate pivot unusable, inverting directly");
            let inv = direct_fold_inverse(g, i)?;
            (inv.dot(&kernel), inv.dot(&t_fold))
        }
        Err(e) => return Err(e),
    };
    let gw = contrast_weights(h_t, t_fold.view())?;
    let shift = a.dot(&t_fold);
    let coef = &a - &(&gw * shift);
    Ok((coef, gw))
}

/// Rows of `G^-1 Z`, the directions through which each training row enters
/// every other row's residualization.
pub fn dual_rows(g: &GramState, dm: &DataMatrix) -> Array2<f64> {
    g.effective_inverse().dot(&dm.values())
}

/// Residualizes a batch of centered rows at once.
pub fn residualize_batch(
    g: &GramState,
    dm: &DataMatrix,
    t: &LabelVector,
    gamma: &GammaEstimate,
    targets: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if targets.ncols() != dm.ncols() {
        return Err(CrcError::shape(format!("{} features", dm.ncols()), targets.ncols()));
    }
    let kernel = targets.dot(&dm.values().t());
    let a = kernel.dot(&g.effective_inverse());
    let mut out = targets.to_owned();
    ndarray::linalg::general_mat_mul(-1.0, &a, &dm.values(), 1.0, &mut out);
    let shift = a.dot(&t.as_array());
    let gamma_row = gamma.gamma_hat.view().insert_axis(Axis(0));
    out += &(&shift.insert_axis(Axis(1)) * &gamma_row);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::{build_gram, center_columns, fold_augmented_gram};
    use crate::linalg::DenseExt;
    use ndarray::s;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
    }

    fn alternating(n: usize) -> LabelVector {
        let signs: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        LabelVector::new(&signs).unwrap()
    }

    #[test]
    fn gamma_reduces_to_difference_of_means_for_orthonormal_rows() {
        // Rows are scaled unit vectors with disjoint support: G = I, uncentered.
        let n = 6;
        let mut raw = Array2::zeros((n, 9));
        for i in 0..n {
            raw[[i, i]] = 1.0;
            raw[[i, 8]] = 0.0;
        }
        let dm = DataMatrix::new(raw.clone()).unwrap();
        let g = build_gram(&dm).unwrap();
        assert_eq!(g.replaced_count(), 0);
        let t = alternating(n);
        let gamma = estimate_gamma(&g, &dm, &t).unwrap();
        let tt = t.as_array().dot(&t.as_array());
        let expected = t.as_array().dot(&raw) / tt;
        for (a, b) in gamma.gamma_hat.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn in_sample_row_collapses_to_label_times_gamma() {
        let raw = gaussian(6, 40, 11);
        let dm = DataMatrix::new(raw.clone()).unwrap();
        let g = build_gram(&dm).unwrap();
        assert_eq!(g.replaced_count(), 0);
        let t = alternating(6);
        let gamma = estimate_gamma(&g, &dm, &t).unwrap();
        for i in 0..6 {
            let s = residualize(&g, &dm, &t, &gamma, raw.row(i)).unwrap();
            let expected = &gamma.gamma_hat * t.as_array()[i];
            for (a, b) in s.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        let zero_gamma = GammaEstimate { gamma_hat: Array1::zeros(40) };
        let s = residualize(&g, &dm, &t, &zero_gamma, raw.row(3)).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn orthogonal_target_passes_through() {
        let mut raw = gaussian(6, 30, 12);
        raw.slice_mut(s![.., 25..]).fill(0.0);
        let dm = center_columns(raw.view()).unwrap();
        let g = build_gram(&dm).unwrap();
        let t = alternating(6);
        let gamma = estimate_gamma(&g, &dm, &t).unwrap();
        let mut z = Array1::zeros(30);
        z[27] = 2.5;
        z[29] = -1.0;
        let s = residualize(&g, &dm, &t, &gamma, z.view()).unwrap();
        assert_eq!(s, z);
    }

    #[test]
    fn cross_residualization_matches_literal_submatrix() {
        let dm = center_columns(gaussian(9, 60, 13).view()).unwrap();
        let g = build_gram(&dm).unwrap();
        let t = alternating(9);
        let res = cross_residualize(&g, &dm, &t).unwrap();
        for i in 0..9 {
            let keep: Vec<usize> = (0..9).filter(|&j| j != i).collect();
            let sub = dm.values().select(Axis(0), &keep);
            let t_sub = Array1::from(t.without(i).unwrap());
            let inv = fold_augmented_gram(&g, i).inverse().unwrap();
            let gamma = estimate_gamma_with_inverse(inv.view(), sub.view(), t_sub.view()).unwrap();
            let expected = residualize_with_inverse(inv.view(), sub.view(), t_sub.view(), &gamma, dm.row(i)).unwrap();
            let err = (&res.s_hat.row(i) - &expected).mapv(|v| v * v).sum().sqrt();
            assert!(err <= 1e-6 * expected.mapv(|v| v * v).sum().sqrt());
            let g_i = res.per_row_gamma(i, &dm);
            let gerr = (&g_i.gamma_hat - &gamma.gamma_hat).mapv(f64::abs).sum();
            assert!(gerr < 1e-8 * gamma.gamma_hat.mapv(f64::abs).sum().max(1.0));
        }
    }

    #[test]
    fn batch_matches_single_rows() {
        let dm = center_columns(gaussian(8, 50, 14).view()).unwrap();
        let g = build_gram(&dm).unwrap();
        let t = alternating(8);
        let gamma = estimate_gamma(&g, &dm, &t).unwrap();
        let targets = gaussian(3, 50, 15);
        let batch = residualize_batch(&g, &dm, &t, &gamma, targets.view()).unwrap();
        for k in 0..3 {
            let single = residualize(&g, &dm, &t, &gamma, targets.row(k)).unwrap();
            for (a, b) in batch.row(k).iter().zip(single.iter()) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
            }
        }
    }
}
