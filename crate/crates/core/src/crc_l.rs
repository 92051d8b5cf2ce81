//! CRC-L: linear discriminant analysis on all principal components of the
//! training data, evaluated entirely through `n x n` Gram products.
//!
//! With `G` the augmented Gram matrix, `Y` the `n x 2` class indicator and
//! `d = (-1, 1)'`, the score of a centered row `z` is
//!
//! ```text
//! s(z) = z Z' { (1/n) R_Y G + lambda G^-1 Y [Y' G^-1 Y]^-1 Y' }^-1 Y (Y'Y)^-1 d
//! ```
//!
//! where `R_Y` is the residual projection of `Y`. The braced matrix is the
//! pooled within-class covariance in principal-component coordinates with
//! its two null directions lifted to `lambda`.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{CrcError, Result};
use crate::gram::{direct_fold_inverse, downdate_gram, remove_entry, DataMatrix, GramState, LabelVector};
use crate::linalg::DenseExt;

const SINGULAR_RIDGE: f64 = 1e-10;

/// Fitted CRC-L. Scores depend on the data only through `z Z'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrcLModel {
    /// `M` in `s(z) = (z Z') M`.
    pub core: Array1<f64>,
    pub lambda: f64,
    /// Standalone decision threshold: midpoint of the class-mean training
    /// scores less the log prior ratio. Unused by the ensemble.
    pub offset: f64,
}

impl CrcLModel {
    /// Score from a precomputed kernel row `Z z`.
    pub fn score_kernel(&self, kernel: ArrayView1<f64>) -> f64 {
        kernel.dot(&self.core)
    }

    /// Standalone label: sign of the score relative to the midpoint.
    pub fn classify(&self, score: f64) -> i8 {
        if score - self.offset >= 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Scores a centered row against the training matrix.
pub fn score_crcl(m: &CrcLModel, dm: &DataMatrix, z: ArrayView1<f64>) -> Result<f64> {
    if z.len() != dm.ncols() {
        return Err(CrcError::shape(format!("{} features", dm.ncols()), z.len()));
    }
    if m.core.len() != dm.nrows() {
        return Err(CrcError::shape(format!("model for {} rows", dm.nrows()), m.core.len()));
    }
    Ok(m.score_kernel(dm.values().dot(&z).view()))
}

fn class_counts(t: ArrayView1<f64>) -> (usize, usize) {
    let n2 = t.iter().filter(|&&v| v > 0.0).count();
    (t.len() - n2, n2)
}

/// Class-wise means of `v`: (mean over `-1` rows, mean over `+1` rows).
fn class_means(v: ArrayView1<f64>, t: ArrayView1<f64>) -> (f64, f64) {
    let (n1, n2) = class_counts(t);
    let (mut s1, mut s2) = (0.0, 0.0);
    for (&x, &lab) in v.iter().zip(t.iter()) {
        if lab > 0.0 {
            s2 += x;
        } else {
            s1 += x;
        }
    }
    (s1 / n1 as f64, s2 / n2 as f64)
}

fn inv2(m: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m[0][0].abs().max(m[1][1].abs());
    if !(det.abs() > 1e-14 * scale * scale) {
        return Err(CrcError::CrcLSingular);
    }
    Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Fits CRC-L by solving the `n x n` system literally.
pub fn fit_crcl(g: &GramState, dm: &DataMatrix, t: &LabelVector) -> Result<CrcLModel> {
    let n = dm.nrows();
    t.check_len(n)?;
    if g.n() != n {
        return Err(CrcError::shape(format!("gram of size {n}"), g.n()));
    }
    let labels = t.as_array();
    let (n1, n2) = (t.n1() as f64, t.n2() as f64);
    let aug = g.augmented();
    let h = g.effective_inverse();
    let lambda = g.lambda();

    let inner = inner_matrix(aug.view(), h, labels, lambda)?;
    let rhs: Array1<f64> = labels.mapv(|v| if v > 0.0 { 1.0 / n2 } else { -1.0 / n1 });

    let core = match solve_checked(&inner, &rhs) {
        Some(core) => core,
        None => {
            let ridge = SINGULAR_RIDGE * inner.diag().sum();
            log::warn!("CRC-L inner system singular, retrying with ridge {ridge:e}");
            let mut ridged = inner;
            ridged.diag_mut().mapv_inplace(|v| v + ridge);
            solve_checked(&ridged, &rhs).ok_or(CrcError::CrcLSingular)?
        }
    };

    let train_scores = g.raw_gram().dot(&core);
    let (m1, m2) = class_means(train_scores.view(), labels);
    let offset = 0.5 * (m1 + m2) - (n2 / n1).ln();
    Ok(CrcLModel { core, lambda, offset })
}

/// `(1/n) R_Y G + lambda G^-1 Y [Y' G^-1 Y]^-1 Y'`.
pub fn inner_matrix(
    aug: ndarray::ArrayView2<f64>,
    h: ndarray::ArrayView2<f64>,
    labels: ArrayView1<f64>,
    lambda: f64,
) -> Result<Array2<f64>> {
    let n = labels.len();
    let (n1, n2) = class_counts(labels);
    let y1: Array1<f64> = labels.mapv(|v| if v > 0.0 { 0.0 } else { 1.0 });
    let y2: Array1<f64> = labels.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let hy1 = h.dot(&y1);
    let hy2 = h.dot(&y2);
    let k = inv2([[y1.dot(&hy1), y1.dot(&hy2)], [y2.dot(&hy1), y2.dot(&hy2)]])?;

    // R_Y G: subtract from each row the class mean of the rows of G.
    let mean1 = y1.dot(&aug) / n1 as f64;
    let mean2 = y2.dot(&aug) / n2 as f64;
    let mut inner = aug.to_owned();
    for (i, mut row) in inner.rows_mut().into_iter().enumerate() {
        if labels[i] > 0.0 {
            row -= &mean2;
        } else {
            row -= &mean1;
        }
    }
    inner /= n as f64;
    // + lambda (HY) K Y'
    for i in 0..n {
        let c1 = lambda * (hy1[i] * k[0][0] + hy2[i] * k[1][0]);
        let c2 = lambda * (hy1[i] * k[0][1] + hy2[i] * k[1][1]);
        for j in 0..n {
            inner[[i, j]] += c1 * y1[j] + c2 * y2[j];
        }
    }
    Ok(inner)
}

fn solve_checked(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let x = a.solve_vec(b).ok()?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `M` for a fold, from products with the fold's inverse Gram.
///
/// Solving `{(1/m) R_Y + lambda H Y K Y' H} v = Y (Y'Y)^-1 d` with
/// `K = (Y' H Y)^-1` gives `Y' H v = d / lambda` and
/// `R_Y v = -m R_Y H Y K d`, so `M = H v` needs three products with `H`.
pub fn closed_form_core<F>(solve: F, t: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    let m = t.len() as f64;
    let y1: Array1<f64> = t.mapv(|v| if v > 0.0 { 0.0 } else { 1.0 });
    let y2: Array1<f64> = t.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let hy1 = solve(y1.view());
    let hy2 = solve(y2.view());
    let k = inv2([[y1.dot(&hy1), y1.dot(&hy2)], [y2.dot(&hy1), y2.dot(&hy2)]])?;
    // K d with d = (-1, 1)
    let kd = [k[0][1] - k[0][0], k[1][1] - k[1][0]];
    let mut w = &hy1 * kd[0] + &hy2 * kd[1];
    let (w1, w2) = class_means(w.view(), t);
    for (x, &lab) in w.iter_mut().zip(t.iter()) {
        *x -= if lab > 0.0 { w2 } else { w1 };
    }
    let q = solve(w.view());
    let (q1, q2) = (y1.dot(&q), y2.dot(&q));
    let rhs = [-1.0 / lambda + m * q1, 1.0 / lambda + m * q2];
    let beta = [k[0][0] * rhs[0] + k[0][1] * rhs[1], k[1][0] * rhs[0] + k[1][1] * rhs[1]];
    let core = &hy1 * beta[0] + &hy2 * beta[1] - &q * m;
    if core.iter().any(|v| !v.is_finite()) {
        return Err(CrcError::CrcLSingular);
    }
    Ok(core)
}

/// Leave-one-out CRC-L scores: row `i` scored by the model fit without it,
/// with lambda and centering fixed at the full-data values.
pub fn loo_scores_crcl(g: &GramState, t: &LabelVector) -> Result<Array1<f64>> {
    let n = g.n();
    t.check_len(n)?;
    let lambda = g.lambda();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t_fold = Array1::from(t.without(i).ok_or(CrcError::FoldClassEmpty { index: i })?);
            let kernel = remove_entry(g.raw_gram().row(i), i);
            let core = match downdate_gram(g, i) {
                Ok(d) => closed_form_core(|v| d.solve(v), t_fold.view(), lambda)?,
                Err(CrcError::DowndateSingular { .. }) => {
                    let inv = direct_fold_inverse(g, i)?;
                    closed_form_core(|v| inv.dot(&v), t_fold.view(), lambda)?
                }
                Err(e) => return Err(e),
            };
            Ok(kernel.dot(&core))
        })
        .collect::<Result<_>>()?;
    Ok(Array1::from(scores))
}
