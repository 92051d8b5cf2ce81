//! The full classifier: cross-residualize, score leave-one-out with both
//! components, and combine the score pairs with a two-dimensional LDA.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::crc_l::{fit_crcl, loo_scores_crcl, CrcLModel};
use crate::crc_s::{feature_grid, fit_top_n, loo_score_paths, select_n, two_class_moments, DldaModel, GridSearchTrace};
use crate::error::{CrcError, Result, Stage, StageExt};
use crate::gram::{build_gram, center_owned, DataMatrix, LabelVector};
use crate::residualization::{cross_residualize, dual_rows, estimate_gamma, GammaEstimate};

pub const MIN_SAMPLES: usize = 8;
pub const MIN_PER_CLASS: usize = 4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrcConfig {
    /// Candidate feature counts; defaults to the geometric grid for `p`.
    pub grid: Option<Vec<usize>>,
    /// Skip the grid search and use this many features.
    pub fixed_features: Option<usize>,
}

/// Two-class LDA on `(latent, sparse)` score pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaLda {
    pub intercept: f64,
    pub sparse_coef: f64,
    pub latent_coef: f64,
}

impl MetaLda {
    pub fn fit(latent: ArrayView1<f64>, sparse: ArrayView1<f64>, t: &LabelVector) -> Result<Self> {
        let (m1, m2, cov) = two_class_moments(latent, sparse, t);
        let d = [m2[0] - m1[0], m2[1] - m1[1]];
        let mut cov = cov;
        let mut det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if !(det > 1e-12 * cov[0][0] * cov[1][1]) || !(det > 0.0) {
            let ridge = 1e-10 * (cov[0][0] + cov[1][1]).max(f64::MIN_POSITIVE);
            log::warn!("meta-classifier covariance singular, adding ridge {ridge:e}");
            cov[0][0] += ridge;
            cov[1][1] += ridge;
            det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        }
        let latent_coef = (cov[1][1] * d[0] - cov[0][1] * d[1]) / det;
        let sparse_coef = (cov[0][0] * d[1] - cov[1][0] * d[0]) / det;
        let mid = [0.5 * (m1[0] + m2[0]), 0.5 * (m1[1] + m2[1])];
        let intercept = -(latent_coef * mid[0] + sparse_coef * mid[1]) + (t.n2() as f64 / t.n1() as f64).ln();
        let meta = MetaLda { intercept, sparse_coef, latent_coef };
        if [intercept, sparse_coef, latent_coef].iter().any(|v| !v.is_finite()) {
            return Err(CrcError::Linalg(format!("non-finite meta-classifier {meta:?}")));
        }
        Ok(meta)
    }

    pub fn combine(&self, latent: f64, sparse: f64) -> f64 {
        self.intercept + self.sparse_coef * sparse + self.latent_coef * latent
    }
}

/// Label of a combined score; exact zero goes to `+1`.
pub fn sign_label(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: i8,
    pub latent_score: f64,
    pub sparse_score: f64,
    pub combined_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedCrc {
    pub(crate) training: DataMatrix,
    pub(crate) labels: LabelVector,
    pub(crate) gamma: GammaEstimate,
    pub(crate) lambda: f64,
    pub(crate) crcl: CrcLModel,
    pub(crate) crcs: DldaModel,
    /// `G^-1 (Z_J w - (gamma_J . w) T)`: the residualization term of the
    /// sparse score, so `s = w . z_J - (Z z) . sparse_dual`.
    pub(crate) sparse_dual: Array1<f64>,
    pub(crate) meta: MetaLda,
    pub(crate) loo_pairs: Array2<f64>,
    pub(crate) trace: GridSearchTrace,
}

impl FittedCrc {
    pub fn n_train(&self) -> usize {
        self.training.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.training.ncols()
    }

    pub fn mu_hat(&self) -> ArrayView1<'_, f64> {
        self.training.mu_hat()
    }

    pub fn gamma_hat(&self) -> ArrayView1<'_, f64> {
        self.gamma.gamma_hat.view()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn latent_model(&self) -> &CrcLModel {
        &self.crcl
    }

    pub fn sparse_model(&self) -> &DldaModel {
        &self.crcs
    }

    pub fn meta(&self) -> MetaLda {
        self.meta
    }

    pub fn chosen_n(&self) -> usize {
        self.crcs.feature_indices.len()
    }

    /// `n x 2` leave-one-out `(latent, sparse)` training scores.
    pub fn loo_pairs(&self) -> ArrayView2<'_, f64> {
        self.loo_pairs.view()
    }

    pub fn trace(&self) -> &GridSearchTrace {
        &self.trace
    }

    /// Accuracy of the meta-classifier on its own leave-one-out inputs.
    pub fn loo_accuracy(&self) -> f64 {
        let hits = (0..self.n_train())
            .filter(|&i| {
                let v = self.meta.combine(self.loo_pairs[[i, 0]], self.loo_pairs[[i, 1]]);
                sign_label(v) == self.labels.signs()[i]
            })
            .count();
        hits as f64 / self.n_train() as f64
    }

    fn check_row(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.n_features() {
            return Err(CrcError::shape(format!("{} features", self.n_features()), z.len()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(CrcError::NonFiniteInput);
        }
        Ok(())
    }

    fn predict_centered(&self, zc: ArrayView1<f64>, kernel: ArrayView1<f64>) -> Prediction {
        let latent = self.crcl.score_kernel(kernel);
        let sparse = self.crcs.score(zc) - kernel.dot(&self.sparse_dual);
        let combined = self.meta.combine(latent, sparse);
        Prediction { label: sign_label(combined), latent_score: latent, sparse_score: sparse, combined_score: combined }
    }

    pub fn predict(&self, z_raw: ArrayView1<f64>) -> Result<Prediction> {
        self.check_row(z_raw)?;
        let zc = &z_raw - &self.mu_hat();
        let kernel = self.training.values().dot(&zc);
        Ok(self.predict_centered(zc.view(), kernel.view()))
    }

    /// Row-by-row predictions; each row matches [`FittedCrc::predict`] exactly.
    pub fn predict_batch(&self, rows: ArrayView2<f64>) -> Result<Vec<Prediction>> {
        if rows.ncols() != self.n_features() {
            return Err(CrcError::shape(format!("{} features", self.n_features()), rows.ncols()));
        }
        rows.axis_iter(Axis(0)).into_par_iter().map(|z| self.predict(z)).collect()
    }

    /// `(w, b0)` with `sign(b0 + (z - mu_hat) . w)` equal to the predicted label.
    pub fn extract_linear_weights(&self) -> (Array1<f64>, f64) {
        let z = self.training.values();
        let sparse = &self.crcs.dense_weights(self.n_features()) - &z.t().dot(&self.sparse_dual);
        let latent = z.t().dot(&self.crcl.core);
        let w = sparse * self.meta.sparse_coef + latent * self.meta.latent_coef;
        (w, self.meta.intercept)
    }

    /// Standalone CRC-L label for a prediction.
    pub fn latent_label(&self, p: &Prediction) -> i8 {
        self.crcl.classify(p.latent_score)
    }

    /// Standalone CRC-S label for a prediction.
    pub fn sparse_label(&self, p: &Prediction) -> i8 {
        self.crcs.classify(p.sparse_score)
    }
}

/// Fits the classifier. Errors are tagged with the stage they came from.
pub fn fit_crc(raw: Array2<f64>, t: &LabelVector, config: &CrcConfig) -> Result<FittedCrc> {
    let (n, p) = raw.dim();
    t.check_len(n)?;
    if n < MIN_SAMPLES {
        return Err(CrcError::TooFewSamples { got: n, need: MIN_SAMPLES });
    }
    if t.n1() < MIN_PER_CLASS || t.n2() < MIN_PER_CLASS {
        return Err(CrcError::InvalidLabels(format!(
            "each class needs at least {MIN_PER_CLASS} members (got {} and {})",
            t.n1(),
            t.n2()
        )));
    }
    let dm = center_owned(raw).at(Stage::Centering)?;
    let g = build_gram(&dm).at(Stage::Gram)?;
    let gamma = estimate_gamma(&g, &dm, t).at(Stage::Gamma)?;
    let resid = cross_residualize(&g, &dm, t).at(Stage::CrossResidualization)?;
    let s_hat = resid.s_hat;
    let latent = loo_scores_crcl(&g, t).at(Stage::LatentScores)?;

    let grid = match (&config.fixed_features, &config.grid) {
        (Some(k), _) => vec![(*k).clamp(1, p)],
        (None, Some(grid)) => grid.clone(),
        (None, None) => feature_grid(p),
    };
    let paths = {
        let dual = dual_rows(&g, &dm);
        loo_score_paths(s_hat.view(), t, Some(dual.view()), &grid).at(Stage::SparseScores)?
    };
    let trace = select_n(&paths, latent.view(), t).at(Stage::GridSearch)?;
    let k = trace.grid.iter().position(|&v| v == trace.chosen_n).expect("chosen value is on the grid");
    log::info!("chose {} features (estimated error {:.4})", trace.chosen_n, trace.estimated_errors[k]);
    let (crcs, _) = fit_top_n(s_hat.view(), t, trace.chosen_n).at(Stage::FinalFit)?;
    drop(s_hat);

    // Fold-centered scores shifted by the final midpoint, so they sit on the
    // same scale as the uncentered scores produced at prediction time.
    let sparse = paths.centered(k) + crcs.midpoint;
    let crcl = fit_crcl(&g, &dm, t).at(Stage::FinalFit)?;
    let meta = MetaLda::fit(latent.view(), sparse.view(), t).at(Stage::MetaClassifier)?;
    let mut loo_pairs = Array2::zeros((n, 2));
    loo_pairs.column_mut(0).assign(&latent);
    loo_pairs.column_mut(1).assign(&sparse);

    let sparse_dual = sparse_dual(&g, &dm, t, &gamma, &crcs);

    Ok(FittedCrc {
        lambda: g.lambda(),
        training: dm,
        labels: t.clone(),
        gamma,
        crcl,
        crcs,
        sparse_dual,
        meta,
        loo_pairs,
        trace,
    })
}

fn sparse_dual(
    g: &crate::gram::GramState,
    dm: &DataMatrix,
    t: &LabelVector,
    gamma: &GammaEstimate,
    crcs: &DldaModel,
) -> Array1<f64> {
    let z = dm.values();
    let n = dm.nrows();
    let mut u = Array1::<f64>::zeros(n);
    let mut gw = 0.0;
    for (&j, &w) in crcs.feature_indices.iter().zip(crcs.weights.iter()) {
        u.scaled_add(w, &z.column(j));
        gw += gamma.gamma_hat[j] * w;
    }
    let rhs = &u - &(&t.as_array() * gw);
    g.solve(rhs.view())
}
