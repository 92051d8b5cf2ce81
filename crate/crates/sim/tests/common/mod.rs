//! Reference computations against the simulator's hidden quantities.
#![allow(dead_code)]

use crc_core::gram::{build_gram, center_columns};
use crc_core::linalg::DenseExt;
use crc_core::residualization::estimate_gamma;
use crc_sim::recovery::{canonical_correlations, leading_left_vectors};
use crc_sim::{ModelKind, Population, SimConfig};
use ndarray::{concatenate, s, Array1, Array2, Axis};

/// Label coefficients from regressing each feature on an intercept, the
/// labels and the true latent factors.
pub fn ols_with_latent(z: &Array2<f64>, t: &Array1<f64>, l: &Array2<f64>) -> Array1<f64> {
    let n = z.nrows();
    let design = concatenate![Axis(1), Array2::ones((n, 1)), t.view().insert_axis(Axis(1)), l.view()];
    let coef = design.t().dot(&design).inverse().unwrap().dot(&design.t()).dot(z);
    coef.row(1).to_owned()
}

/// Replicate means of the label coefficients on the first `k` features of
/// the correlated model.
#[derive(Debug, Default)]
pub struct GammaComparison {
    /// The estimator as fitted.
    pub estimate: Vec<f64>,
    /// The same estimator with the feature's own column removed from the Gram.
    pub column_excluded: Vec<f64>,
    /// Least squares with the true factors.
    pub ols: Vec<f64>,
    /// Mean of `z_j' G_(-j)^-1 z_j` over the compared features.
    pub self_influence: f64,
}

pub fn compare_gamma(n: usize, p: usize, k: usize, replicates: u64, seed: u64) -> GammaComparison {
    let cfg = SimConfig::new(ModelKind::Correlated, n, p).with_seed(seed);
    let w = 1.0 / replicates as f64;
    let mut out = GammaComparison {
        estimate: vec![0.0; k],
        column_excluded: vec![0.0; k],
        ols: vec![0.0; k],
        self_influence: 0.0,
    };
    for rep in 0..replicates {
        let ds = Population::new(&cfg, rep).unwrap().train().unwrap();
        let dm = center_columns(ds.z.view()).unwrap();
        let g = build_gram(&dm).unwrap();
        let gamma = estimate_gamma(&g, &dm, &ds.t).unwrap().gamma_hat;
        let t = ds.t.as_array().to_owned();
        let reference = ols_with_latent(&ds.z.slice(s![.., ..k]).to_owned(), &t, &ds.l);
        let full = g.augmented();
        for j in 0..k {
            let zj = dm.values().column(j).to_owned();
            let without = (&full - &outer(&zj)).inverse().unwrap();
            let a = without.dot(&t);
            out.estimate[j] += w * gamma[j];
            out.column_excluded[j] += w * zj.dot(&a) / t.dot(&a);
            out.ols[j] += w * reference[j];
            out.self_influence += w * zj.dot(&without.dot(&zj)) / k as f64;
        }
    }
    out
}

fn outer(v: &Array1<f64>) -> Array2<f64> {
    v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)))
}

/// Canonical correlations between the leading left singular vectors of the
/// centered data and the true latent factors, averaged over replicates.
pub fn mean_latent_recovery(n: usize, p: usize, replicates: u64, seed: u64) -> Vec<f64> {
    let cfg = SimConfig::new(ModelKind::Correlated, n, p).with_seed(seed);
    let mut mean = vec![0.0; cfg.r];
    for rep in 0..replicates {
        let ds = Population::new(&cfg, rep).unwrap().train().unwrap();
        let u = leading_left_vectors(ds.z.view(), cfg.r).unwrap();
        let cc = canonical_correlations(u.view(), ds.l.view()).unwrap();
        for (m, c) in mean.iter_mut().zip(&cc) {
            *m += c / replicates as f64;
        }
    }
    mean
}
