//! CRC-S: diagonal LDA on the top-`N` marginally screened columns of the
//! cross-residualized matrix, with `N` picked on a geometric grid.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{CrcError, Result};
use crate::gram::LabelVector;

/// Variances are floored at this multiple of the column's mean square.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Diagonal LDA restricted to a feature subset. Scores carry no intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DldaModel {
    pub feature_indices: Vec<usize>,
    /// Class mean difference (`+1` minus `-1`) on the selected features.
    pub mean_diff: Array1<f64>,
    pub pooled_var: Array1<f64>,
    pub weights: Array1<f64>,
    /// Score of the class midpoint.
    pub midpoint: f64,
    /// Standalone threshold: `midpoint` less the log prior ratio.
    pub offset: f64,
}

impl DldaModel {
    /// Score of a full-length row.
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        self.feature_indices.iter().zip(self.weights.iter()).map(|(&j, &w)| w * x[j]).sum()
    }

    pub fn classify(&self, score: f64) -> i8 {
        if score - self.offset >= 0.0 {
            1
        } else {
            -1
        }
    }

    /// Weights scattered into a length-`p` vector.
    pub fn dense_weights(&self, p: usize) -> Array1<f64> {
        let mut w = Array1::zeros(p);
        for (&j, &v) in self.feature_indices.iter().zip(self.weights.iter()) {
            w[j] = v;
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningResult {
    pub pvalues: Array1<f64>,
    /// Columns from most to least significant.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchTrace {
    pub grid: Vec<usize>,
    pub estimated_errors: Vec<f64>,
    pub chosen_n: usize,
}

/// Per-column class means and within-class sums of squares.
#[derive(Debug, Clone)]
pub(crate) struct ClassStats {
    n1: usize,
    n2: usize,
    mean1: Array1<f64>,
    mean2: Array1<f64>,
    ss1: Array1<f64>,
    ss2: Array1<f64>,
    floor: Array1<f64>,
}

impl ClassStats {
    pub(crate) fn new(x: ArrayView2<f64>, t: &LabelVector) -> Result<Self> {
        let (n, p) = x.dim();
        t.check_len(n)?;
        let labels = t.as_array();
        let (mut mean1, mut mean2) = (Array1::<f64>::zeros(p), Array1::<f64>::zeros(p));
        let mut mean_sq = Array1::<f64>::zeros(p);
        for (row, &lab) in x.rows().into_iter().zip(labels.iter()) {
            if lab > 0.0 {
                mean2 += &row;
            } else {
                mean1 += &row;
            }
            mean_sq.zip_mut_with(&row, |m, &v| *m += v * v);
        }
        let (n1, n2) = (t.n1(), t.n2());
        mean1 /= n1 as f64;
        mean2 /= n2 as f64;
        let (mut ss1, mut ss2) = (Array1::<f64>::zeros(p), Array1::<f64>::zeros(p));
        for (row, &lab) in x.rows().into_iter().zip(labels.iter()) {
            let (ss, mean) = if lab > 0.0 { (&mut ss2, &mean2) } else { (&mut ss1, &mean1) };
            ndarray::Zip::from(ss).and(&row).and(mean).for_each(|s, &v, &m| {
                let d = v - m;
                *s += d * d;
            });
        }
        let floor = mean_sq.mapv(|m| (VARIANCE_FLOOR * m / n as f64).max(f64::MIN_POSITIVE));
        Ok(ClassStats { n1, n2, mean1, mean2, ss1, ss2, floor })
    }

    fn dof(&self) -> f64 {
        (self.n1 + self.n2) as f64 - 2.0
    }

    /// Mean difference and floored pooled variance of column `j`.
    fn column(&self, j: usize) -> (f64, f64) {
        let var = ((self.ss1[j] + self.ss2[j]) / self.dof()).max(self.floor[j]);
        (self.mean2[j] - self.mean1[j], var)
    }

    /// Statistics of column `j` with row value `x` (of the given class) removed.
    fn column_without(&self, j: usize, x: f64, positive: bool) -> FoldColumn {
        let (count, mean, ss) = if positive {
            (self.n2 as f64, self.mean2[j], self.ss2[j])
        } else {
            (self.n1 as f64, self.mean1[j], self.ss1[j])
        };
        let d = mean - x;
        let new_mean = mean + d / (count - 1.0);
        let new_ss = (ss - d * d * count / (count - 1.0)).max(0.0);
        let (m1, m2, ss_total) = if positive {
            (self.mean1[j], new_mean, self.ss1[j] + new_ss)
        } else {
            (new_mean, self.mean2[j], new_ss + self.ss2[j])
        };
        let var = (ss_total / (self.dof() - 1.0)).max(self.floor[j]);
        FoldColumn { diff: m2 - m1, mid: 0.5 * (m1 + m2), var }
    }
}

struct FoldColumn {
    diff: f64,
    mid: f64,
    var: f64,
}

fn check_shape(x: ArrayView2<f64>, t: &LabelVector) -> Result<()> {
    t.check_len(x.nrows())?;
    if x.ncols() == 0 {
        return Err(CrcError::InvalidData("matrix has no columns".into()));
    }
    Ok(())
}

/// Most significant first: larger squared t statistic, then lower index.
fn rank_columns(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_unstable_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    order
}

/// Pooled-variance two-sample t-test p-value for every column.
pub fn marginal_pvalues(x: ArrayView2<f64>, t: &LabelVector) -> Result<ScreeningResult> {
    check_shape(x, t)?;
    let stats = ClassStats::new(x, t)?;
    Ok(screen(&stats))
}

pub(crate) fn screen(stats: &ClassStats) -> ScreeningResult {
    let p = stats.mean1.len();
    let scale = 1.0 / stats.n1 as f64 + 1.0 / stats.n2 as f64;
    let student = StudentsT::new(0.0, 1.0, stats.dof()).expect("at least two degrees of freedom");
    let tstats: Vec<f64> = (0..p)
        .map(|j| {
            let (diff, var) = stats.column(j);
            diff / (var * scale).sqrt()
        })
        .collect();
    let keys: Vec<f64> = tstats.iter().map(|v| v * v).collect();
    let pvalues = tstats.iter().map(|&v| if v == 0.0 { 1.0 } else { (2.0 * student.sf(v.abs())).min(1.0) }).collect();
    ScreeningResult { pvalues, order: rank_columns(&keys) }
}

/// DLDA on the given columns of `x`.
pub fn fit_dlda(x: ArrayView2<f64>, t: &LabelVector, features: &[usize]) -> Result<DldaModel> {
    check_shape(x, t)?;
    if features.is_empty() {
        return Err(CrcError::InvalidData("no features selected".into()));
    }
    if let Some(&bad) = features.iter().find(|&&j| j >= x.ncols()) {
        return Err(CrcError::shape(format!("feature index < {}", x.ncols()), bad));
    }
    let stats = ClassStats::new(x.select(Axis(1), features).view(), t)?;
    Ok(dlda_from_stats(&stats, features, t))
}

fn dlda_from_stats(stats: &ClassStats, features: &[usize], t: &LabelVector) -> DldaModel {
    let k = features.len();
    let mut mean_diff = Array1::zeros(k);
    let mut pooled_var = Array1::zeros(k);
    let mut midpoint = 0.0;
    for c in 0..k {
        let (diff, var) = stats.column(c);
        if var <= stats.floor[c] {
            log::debug!("feature {} variance clamped to floor", features[c]);
        }
        mean_diff[c] = diff;
        pooled_var[c] = var;
        midpoint += diff / var * 0.5 * (stats.mean1[c] + stats.mean2[c]);
    }
    let weights = &mean_diff / &pooled_var;
    let offset = midpoint - (t.n2() as f64 / t.n1() as f64).ln();
    DldaModel { feature_indices: features.to_vec(), mean_diff, pooled_var, weights, midpoint, offset }
}

/// DLDA on the `n_features` top-ranked columns of the full matrix.
pub fn fit_top_n(x: ArrayView2<f64>, t: &LabelVector, n_features: usize) -> Result<(DldaModel, ScreeningResult)> {
    check_shape(x, t)?;
    let stats = ClassStats::new(x, t)?;
    let screening = screen(&stats);
    let n_features = n_features.clamp(1, x.ncols());
    let features: Vec<usize> = screening.order[..n_features].to_vec();
    let sub = ClassStats::new(x.select(Axis(1), &features).view(), t)?;
    Ok((dlda_from_stats(&sub, &features, t), screening))
}

/// Candidate feature counts: `round(2^e)` for `e = 0, 0.5, ..., floor(sqrt(p))`,
/// deduplicated and capped at `p`.
pub fn feature_grid(p: usize) -> Vec<usize> {
    let top = (p as f64).sqrt().floor() as usize;
    let mut grid: Vec<usize> = (0..=2 * top)
        .map(|k| 2f64.powf(k as f64 / 2.0).round())
        .map(|v| if v >= p as f64 { p } else { v as usize })
        .collect();
    grid.dedup();
    grid
}

/// Leave-one-out DLDA scores for every grid value.
#[derive(Debug, Clone)]
pub struct LooPaths {
    pub grid: Vec<usize>,
    /// `n x grid` scores without intercept.
    pub scores: Array2<f64>,
    /// `n x grid` weighted class midpoints of each fold; `score - centroid`
    /// plus the fold log prior ratio is the standalone discriminant.
    pub centroids: Array2<f64>,
}

impl LooPaths {
    /// Fold-centered scores `score - centroid` for grid column `k`.
    pub fn centered(&self, k: usize) -> Array1<f64> {
        &self.scores.column(k) - &self.centroids.column(k)
    }

    /// Standalone leave-one-out labels for grid column `k`.
    pub fn labels(&self, k: usize, t: &LabelVector) -> Vec<i8> {
        (0..t.len())
            .map(|i| {
                let (n1, n2) = if t.is_positive(i) { (t.n1(), t.n2() - 1) } else { (t.n1() - 1, t.n2()) };
                let v = self.scores[[i, k]] - self.centroids[[i, k]] + (n2 as f64 / n1 as f64).ln();
                if v >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect()
    }
}

/// Fold `i` re-screens and refits on the other rows, then scores row `i`.
/// With `dual` (rows of `G^-1 Z`), row `i` of it is projected out of the
/// fold class mean difference and class midpoint over all columns, and the
/// fold screens on the projected difference.
pub fn loo_score_paths(
    x: ArrayView2<f64>,
    t: &LabelVector,
    dual: Option<ArrayView2<f64>>,
    grid: &[usize],
) -> Result<LooPaths> {
    check_shape(x, t)?;
    let (n, p) = x.dim();
    if let Some(d) = dual {
        if d.dim() != (n, p) {
            return Err(CrcError::shape(format!("{n}x{p}"), format!("{}x{}", d.nrows(), d.ncols())));
        }
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] == 0 || grid[grid.len() - 1] > p {
        return Err(CrcError::ConfigError(format!("invalid feature grid {grid:?}")));
    }
    if t.n1() < 2 || t.n2() < 2 {
        return Err(CrcError::FoldClassEmpty { index: 0 });
    }
    let stats = ClassStats::new(x, t)?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| fold_path(&stats, x.row(i), t.is_positive(i), dual.as_ref().map(|d| d.row(i)), grid))
        .collect();
    let mut scores = Array2::zeros((n, grid.len()));
    let mut centroids = Array2::zeros((n, grid.len()));
    for (i, (s, c)) in rows.into_iter().enumerate() {
        scores.row_mut(i).assign(&Array1::from(s));
        centroids.row_mut(i).assign(&Array1::from(c));
    }
    Ok(LooPaths { grid: grid.to_vec(), scores, centroids })
}

fn fold_path(
    stats: &ClassStats,
    x: ArrayView1<f64>,
    positive: bool,
    r: Option<ArrayView1<f64>>,
    grid: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let p = x.len();
    let cols: Vec<FoldColumn> = (0..p).map(|j| stats.column_without(j, x[j], positive)).collect();

    // diff' = diff - a r and mid' = mid - b r. Columns are ranked on diff',
    // and prefix sums over the ranking give the score sum(diff' x / var) and
    // the centroid sum(diff' mid' / var).
    let (a, b) = r.map_or((0.0, 0.0), |r| {
        let (mut dr, mut mr, mut rr) = (0.0, 0.0, 0.0);
        for (c, &rj) in cols.iter().zip(r) {
            dr += c.diff * rj;
            mr += c.mid * rj;
            rr += rj * rj;
        }
        if rr > 0.0 {
            (dr / rr, mr / rr)
        } else {
            (0.0, 0.0)
        }
    });
    let keys: Vec<f64> = match r {
        Some(r) => cols.iter().zip(r).map(|(c, &rj)| (c.diff - a * rj).powi(2) / c.var).collect(),
        None => cols.iter().map(|c| c.diff * c.diff / c.var).collect(),
    };
    let order = rank_columns(&keys);
    let (mut dx, mut dm, mut rx, mut rd, mut rm, mut rr) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut scores = Vec::with_capacity(grid.len());
    let mut centroids = Vec::with_capacity(grid.len());
    let mut next = 0;
    for (count, &j) in order.iter().enumerate() {
        let c = &cols[j];
        dx += c.diff * x[j] / c.var;
        dm += c.diff * c.mid / c.var;
        if let Some(r) = r {
            let rj = r[j] / c.var;
            rx += rj * x[j];
            rd += rj * c.diff;
            rm += rj * c.mid;
            rr += rj * r[j];
        }
        if count + 1 == grid[next] {
            scores.push(dx - a * rx);
            centroids.push(dm - b * rd - a * rm + a * b * rr);
            next += 1;
            if next == grid.len() {
                break;
            }
        }
    }
    (scores, centroids)
}

/// Fold-centered leave-one-out CRC-S scores at a single feature count.
pub fn loo_scores_crcs(
    x: ArrayView2<f64>,
    t: &LabelVector,
    n_features: usize,
    dual: Option<ArrayView2<f64>>,
) -> Result<Array1<f64>> {
    let paths = loo_score_paths(x, t, dual, &[n_features])?;
    Ok(paths.centered(0))
}

/// Class means and pooled covariance (denominator `n - 2`) of 2-d points.
pub(crate) fn two_class_moments(
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    t: &LabelVector,
) -> ([f64; 2], [f64; 2], [[f64; 2]; 2]) {
    let labels = t.as_array();
    let mut m1 = [0.0; 2];
    let mut m2 = [0.0; 2];
    for i in 0..labels.len() {
        let m = if labels[i] > 0.0 { &mut m2 } else { &mut m1 };
        m[0] += a[i];
        m[1] += b[i];
    }
    let (n1, n2) = (t.n1() as f64, t.n2() as f64);
    for k in 0..2 {
        m1[k] /= n1;
        m2[k] /= n2;
    }
    let mut cov = [[0.0; 2]; 2];
    for i in 0..labels.len() {
        let m = if labels[i] > 0.0 { &m2 } else { &m1 };
        let d = [a[i] - m[0], b[i] - m[1]];
        for r in 0..2 {
            for c in 0..2 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    let dof = n1 + n2 - 2.0;
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= dof;
        }
    }
    (m1, m2, cov)
}

/// Squared Mahalanobis distance between class means of 2-d points. A
/// singular covariance falls back to the better single coordinate.
pub fn mahalanobis_sq(a: ArrayView1<f64>, b: ArrayView1<f64>, t: &LabelVector) -> f64 {
    let (m1, m2, cov) = two_class_moments(a, b, t);
    let d = [m2[0] - m1[0], m2[1] - m1[1]];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if det > 1e-12 * cov[0][0] * cov[1][1] && det > 0.0 {
        (cov[1][1] * d[0] * d[0] - 2.0 * cov[0][1] * d[0] * d[1] + cov[0][0] * d[1] * d[1]) / det
    } else {
        let single = |dk: f64, var: f64| {
            if var > 0.0 {
                dk * dk / var
            } else if dk != 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        single(d[0], cov[0][0]).max(single(d[1], cov[1][1]))
    }
}

/// Estimated error `1 - Phi(sqrt(delta' Sigma^-1 delta))` of LDA on score pairs.
pub fn estimated_error(a: ArrayView1<f64>, b: ArrayView1<f64>, t: &LabelVector) -> f64 {
    let normal = Normal::standard();
    normal.sf(mahalanobis_sq(a, b, t).max(0.0).sqrt())
}

/// First index of the minimum; ties keep the earlier (smaller) candidate.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = k;
        }
    }
    best
}

/// Picks `N` minimizing the estimated ensemble error over the grid, given
/// the leave-one-out CRC-L scores. Sparse scores enter fold-centered.
pub fn select_n(paths: &LooPaths, latent_loo: ArrayView1<f64>, t: &LabelVector) -> Result<GridSearchTrace> {
    t.check_len(latent_loo.len())?;
    let errors: Vec<f64> =
        (0..paths.grid.len()).map(|k| estimated_error(latent_loo, paths.centered(k).view(), t)).collect();
    let best = argmin_first(&errors);
    Ok(GridSearchTrace { grid: paths.grid.clone(), estimated_errors: errors, chosen_n: paths.grid[best] })
}
