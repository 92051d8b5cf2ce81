//! Independent reference computations, shared by the property tests and
//! the acceptance suite.
#![allow(dead_code)]

use crc_core::crc_l::{fit_crcl, score_crcl};
use crc_core::ensemble::{fit_crc, sign_label, CrcConfig};
use crc_core::gram::{
    build_gram, center_columns, downdate_gram, fold_augmented_gram, median, DataMatrix, LabelVector,
    RANK_DEFICIENCY_THRESHOLD,
};
use crc_core::linalg::{svd, DenseExt};
use crc_core::residualization::{cross_residualize, estimate_gamma_with_inverse, residualize_with_inverse};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
}

/// Random labels with at least `min_per_class` in each class.
pub fn labels(n: usize, min_per_class: usize, seed: u64) -> Vec<i8> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    loop {
        let t: Vec<i8> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        let pos = t.iter().filter(|&&v| v > 0).count();
        if pos >= min_per_class && n - pos >= min_per_class {
            return t;
        }
    }
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub struct Instance {
    pub dm: DataMatrix,
    pub signs: Vec<i8>,
    pub t: LabelVector,
}

pub fn instance(n: usize, p: usize, seed: u64) -> Instance {
    let dm = center_columns(gaussian(n, p, seed).view()).unwrap();
    let signs = labels(n, 2, seed);
    let t = LabelVector::new(&signs).unwrap();
    Instance { dm, signs, t }
}

/// Largest relative Frobenius error between each downdated fold inverse and
/// the inverse of the literal fold submatrix.
pub fn downdate_error(n: usize, p: usize, seed: u64) -> f64 {
    let inst = instance(n, p, seed);
    let g = build_gram(&inst.dm).unwrap();
    (0..n)
        .map(|i| {
            let direct = fold_augmented_gram(&g, i).inverse().unwrap();
            let fast = downdate_gram(&g, i).unwrap().inverse();
            frob(&(&fast - &direct)) / frob(&direct)
        })
        .fold(0.0, f64::max)
}

/// Largest relative error between cross-residualized rows and residualizing
/// each row against its literal leave-one-out submatrix, with the fold's own
/// gamma estimate.
pub fn cross_residualization_error(n: usize, p: usize, seed: u64) -> f64 {
    let inst = instance(n, p, seed);
    let g = build_gram(&inst.dm).unwrap();
    let s_hat = cross_residualize(&g, &inst.dm, &inst.t).unwrap().s_hat;
    let x = inst.dm.values();
    let mut worst = 0.0f64;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let sub = x.select(Axis(0), &keep);
        let t_fold = Array1::from(inst.t.without(i).unwrap());
        let inv = fold_augmented_gram(&g, i).inverse().unwrap();
        let gamma = estimate_gamma_with_inverse(inv.view(), sub.view(), t_fold.view()).unwrap();
        let expected = residualize_with_inverse(inv.view(), sub.view(), t_fold.view(), &gamma, x.row(i)).unwrap();
        let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let err = (&s_hat.row(i) - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
        worst = worst.max(err);
    }
    worst
}

/// Principal-components LDA carried out explicitly: SVD of the centered
/// data, augmented singular values, pooled covariance with its null space
/// lifted by `lambda P`, and the plain LDA direction.
pub struct ExplicitPcLda {
    v: Array2<f64>,
    null: Vec<bool>,
    direction: Array1<f64>,
}

impl ExplicitPcLda {
    pub fn fit(z: &Array2<f64>, t: &[i8]) -> Self {
        let n = z.nrows();
        let (u, sing, v) = svd(z.view()).unwrap();
        let d2: Vec<f64> = sing.iter().map(|s| s * s).collect();
        let lambda = median(&d2);
        let top = d2.iter().cloned().fold(0.0, f64::max);
        let null: Vec<bool> = d2.iter().map(|&v| v < RANK_DEFICIENCY_THRESHOLD * top).collect();
        let d_aug: Vec<f64> =
            d2.iter().zip(&null).map(|(&v, &is_null)| if is_null { lambda.sqrt() } else { v.sqrt() }).collect();
        let x = &u * &Array1::from(d_aug);
        let mut y = Array2::zeros((n, 2));
        for (i, &lab) in t.iter().enumerate() {
            y[[i, usize::from(lab > 0)]] = 1.0;
        }
        let yty_inv = y.t().dot(&y).inverse().unwrap();
        let r_y = Array2::eye(n) - y.dot(&yty_inv).dot(&y.t());
        let sigma_hat = x.t().dot(&r_y).dot(&x) / n as f64;
        let xinv_y = x.inverse().unwrap().dot(&y);
        let gram_inv = x.dot(&x.t()).inverse().unwrap();
        let mid = y.t().dot(&gram_inv).dot(&y).inverse().unwrap();
        let p_mat = xinv_y.dot(&mid).dot(&xinv_y.t());
        let sigma_tilde = &sigma_hat + &(p_mat * lambda);
        let means = yty_inv.dot(&y.t()).dot(&x);
        let diff = &means.row(1) - &means.row(0);
        let direction = sigma_tilde.inverse().unwrap().dot(&diff);
        ExplicitPcLda { v, null, direction }
    }

    pub fn score(&self, z: ArrayView1<f64>) -> f64 {
        let mut x = z.dot(&self.v);
        for (k, &is_null) in self.null.iter().enumerate() {
            if is_null {
                x[k] = 0.0;
            }
        }
        x.dot(&self.direction)
    }
}

/// Largest relative gap between closed-form CRC-L scores and explicit
/// PC-LDA scores, over training rows and fresh probes.
pub fn crcl_closed_form_error(n: usize, p: usize, seed: u64) -> f64 {
    let inst = instance(n, p, seed);
    let g = build_gram(&inst.dm).unwrap();
    let model = fit_crcl(&g, &inst.dm, &inst.t).unwrap();
    let oracle = ExplicitPcLda::fit(&inst.dm.values().to_owned(), &inst.signs);
    let probes = gaussian(5, p, seed.wrapping_add(7));
    let rows: Vec<Array1<f64>> =
        probes.rows().into_iter().chain(inst.dm.values().rows()).map(|r| r.to_owned()).collect();
    let scale = rows.iter().map(|z| oracle.score(z.view()).abs()).fold(0.0, f64::max).max(1e-12);
    rows.iter()
        .map(|z| (score_crcl(&model, &inst.dm, z.view()).unwrap() - oracle.score(z.view())).abs() / scale)
        .fold(0.0, f64::max)
}

/// Probes (out of `probes`) where the extracted linear rule and `predict`
/// disagree on the label.
pub fn linear_weight_disagreements(n: usize, p: usize, seed: u64, probes: usize) -> usize {
    let mut raw = gaussian(n, p, seed);
    let signs = labels(n, 4, seed);
    for (mut row, &s) in raw.rows_mut().into_iter().zip(&signs) {
        for j in 0..3.min(p) {
            row[j] += f64::from(s);
        }
    }
    let t = LabelVector::new(&signs).unwrap();
    let model = fit_crc(raw, &t, &CrcConfig::default()).unwrap();
    let (w, b0) = model.extract_linear_weights();
    let z = gaussian(probes, p, seed.wrapping_add(99)) * 1.5;
    z.rows()
        .into_iter()
        .filter(|row| {
            let linear = sign_label(b0 + (row - &model.mu_hat()).dot(&w));
            linear != model.predict(*row).unwrap().label
        })
        .count()
}
