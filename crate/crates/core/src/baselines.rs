//! DLDA on the centered matrix, with the same screening as CRC-S but no
//! cross-residualization. The feature count is picked by leave-one-out
//! misclassification.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::crc_s::{argmin_first, feature_grid, fit_top_n, loo_score_paths, DldaModel, GridSearchTrace};
use crate::error::{CrcError, Result, Stage, StageExt};
use crate::gram::{build_gram, center_owned, DataMatrix, LabelVector};
use crate::residualization::cross_residualize;

/// Maps the centered training matrix to the matrix screened DLDA is fit on.
pub trait FeatureTransform {
    fn transform(&self, dm: &DataMatrix, t: &LabelVector) -> Result<Array2<f64>>;
}

/// Leaves the centered matrix as is.
pub struct Identity;

impl FeatureTransform for Identity {
    fn transform(&self, dm: &DataMatrix, _t: &LabelVector) -> Result<Array2<f64>> {
        Ok(dm.values().to_owned())
    }
}

/// Leave-one-out residualization of the latent effects.
pub struct CrossResidualize;

impl FeatureTransform for CrossResidualize {
    fn transform(&self, dm: &DataMatrix, t: &LabelVector) -> Result<Array2<f64>> {
        let g = build_gram(dm).at(Stage::Gram)?;
        Ok(cross_residualize(&g, dm, t).at(Stage::CrossResidualization)?.s_hat)
    }
}

/// Centers, transforms and fits DLDA on the top `n_features` columns.
pub fn fit_screened_dlda<F: FeatureTransform>(
    raw: Array2<f64>,
    t: &LabelVector,
    transform: &F,
    n_features: usize,
) -> Result<(DldaModel, DataMatrix)> {
    let dm = center_owned(raw).at(Stage::Centering)?;
    let x = transform.transform(&dm, t)?;
    let (model, _) = fit_top_n(x.view(), t, n_features).at(Stage::FinalFit)?;
    Ok((model, dm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DldaBaselineModel {
    pub dlda: DldaModel,
    pub mu_hat: Array1<f64>,
    /// `estimated_errors` holds leave-one-out error rates.
    pub trace: GridSearchTrace,
}

impl DldaBaselineModel {
    pub fn score(&self, z_raw: ArrayView1<f64>) -> Result<f64> {
        if z_raw.len() != self.mu_hat.len() {
            return Err(CrcError::shape(format!("{} features", self.mu_hat.len()), z_raw.len()));
        }
        Ok(self.dlda.score((&z_raw - &self.mu_hat).view()))
    }

    pub fn predict(&self, z_raw: ArrayView1<f64>) -> Result<i8> {
        Ok(self.dlda.classify(self.score(z_raw)?))
    }

    pub fn predict_batch(&self, rows: ArrayView2<f64>) -> Result<Vec<i8>> {
        rows.rows().into_iter().map(|r| self.predict(r)).collect()
    }
}

/// Fits the baseline, choosing `N` on `grid` (default: the CRC-S grid).
pub fn fit_dlda_baseline(raw: Array2<f64>, t: &LabelVector, grid: Option<&[usize]>) -> Result<DldaBaselineModel> {
    let (n, p) = raw.dim();
    t.check_len(n)?;
    let dm = center_owned(raw).at(Stage::Centering)?;
    let x = Identity.transform(&dm, t)?;
    let grid = grid.map(<[usize]>::to_vec).unwrap_or_else(|| feature_grid(p));
    let paths = loo_score_paths(x.view(), t, None, &grid).at(Stage::GridSearch)?;
    let signs = t.signs();
    let errors: Vec<f64> = (0..grid.len())
        .map(|k| {
            let wrong = paths.labels(k, t).iter().zip(&signs).filter(|(a, b)| a != b).count();
            wrong as f64 / n as f64
        })
        .collect();
    let chosen_n = grid[argmin_first(&errors)];
    let (dlda, _) = fit_top_n(x.view(), t, chosen_n).at(Stage::FinalFit)?;
    Ok(DldaBaselineModel {
        dlda,
        mu_hat: dm.mu_hat().to_owned(),
        trace: GridSearchTrace { grid, estimated_errors: errors, chosen_n },
    })
}
