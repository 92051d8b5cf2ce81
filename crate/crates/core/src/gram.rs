//! Column centering, the augmented Gram matrix and its leave-one-out downdates.
//!
//! Everything downstream works on the `n x n` Gram matrix `Z Z'` of the
//! centered training data rather than on any `p x p` object. Centering leaves
//! the Gram matrix with a null direction (the all-ones vector), so eigenvalues
//! below a relative threshold are replaced by the median eigenvalue before
//! inverting. The same replacement value is reused for every leave-one-out
//! fold, which keeps each fold inverse a rank-one downdate of the full one.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{CrcError, Result};

/// Eigenvalues below this fraction of the largest one count as null.
pub const RANK_DEFICIENCY_THRESHOLD: f64 = 1e-10;

const MIN_SAMPLES: usize = 4;

/// An `n x p` feature matrix, optionally column-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    centered: bool,
    mu_hat: Array1<f64>,
}

impl DataMatrix {
    /// Wraps an uncentered matrix after validating it.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        validate_raw(values.view())?;
        let p = values.ncols();
        Ok(DataMatrix { values, centered: false, mu_hat: Array1::zeros(p) })
    }

    /// Rebuilds a centered matrix from stored parts (used when loading models).
    pub(crate) fn from_parts(values: Array2<f64>, mu_hat: Array1<f64>) -> Self {
        DataMatrix { values, centered: true, mu_hat }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn mu_hat(&self) -> ArrayView1<'_, f64> {
        self.mu_hat.view()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }
}

fn validate_raw(raw: ArrayView2<f64>) -> Result<()> {
    if raw.nrows() < MIN_SAMPLES {
        return Err(CrcError::TooFewSamples { got: raw.nrows(), need: MIN_SAMPLES });
    }
    if raw.ncols() < 2 {
        return Err(CrcError::InvalidData(format!("need at least 2 features, got {}", raw.ncols())));
    }
    if let Some(((i, j), v)) = raw.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(CrcError::InvalidData(format!("non-finite value {v} at row {i}, column {j}")));
    }
    Ok(())
}

/// Subtracts column means. The means are kept so new observations can be
/// shifted the same way.
pub fn center_columns(raw: ArrayView2<f64>) -> Result<DataMatrix> {
    center_owned(raw.to_owned())
}

/// Same as [`center_columns`] but reuses the allocation.
pub fn center_owned(mut raw: Array2<f64>) -> Result<DataMatrix> {
    validate_raw(raw.view())?;
    let mu_hat = raw.mean_axis(Axis(0)).expect("validated matrix has rows");
    raw -= &mu_hat;
    Ok(DataMatrix { values: raw, centered: true, mu_hat })
}

/// Shifts a new observation by the training column means.
pub fn apply_centering(dm: &DataMatrix, z: ArrayView1<f64>) -> Result<Array1<f64>> {
    if z.len() != dm.ncols() {
        return Err(CrcError::shape(format!("{} features", dm.ncols()), format!("{} features", z.len())));
    }
    Ok(&z - &dm.mu_hat)
}

/// Binary class labels in `{-1, +1}`. Class 1 is `-1`, class 2 is `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    labels: Array1<f64>,
    n1: usize,
    n2: usize,
}

impl LabelVector {
    pub fn new(signs: &[i8]) -> Result<Self> {
        let mut n1 = 0;
        let mut n2 = 0;
        for (i, &s) in signs.iter().enumerate() {
            match s {
                -1 => n1 += 1,
                1 => n2 += 1,
                other => return Err(CrcError::InvalidLabels(format!("label {other} at position {i} is not -1 or +1"))),
            }
        }
        if n1 < 2 || n2 < 2 {
            return Err(CrcError::InvalidLabels(format!(
                "each class needs at least 2 members (got {n1} negative, {n2} positive)"
            )));
        }
        Ok(LabelVector { labels: signs.iter().map(|&s| f64::from(s)).collect(), n1, n2 })
    }

    pub fn as_array(&self) -> ArrayView1<'_, f64> {
        self.labels.view()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of `-1` labels.
    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Number of `+1` labels.
    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.labels[i] > 0.0
    }

    pub fn signs(&self) -> Vec<i8> {
        self.labels.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect()
    }

    /// Labels with row `i` removed; `None` if a class would fall below one member.
    pub fn without(&self, i: usize) -> Option<Vec<f64>> {
        let positive = self.is_positive(i);
        if (positive && self.n2 < 2) || (!positive && self.n1 < 2) {
            return None;
        }
        Some(self.labels.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect())
    }

    /// Negates every label.
    pub fn flipped(&self) -> Self {
        LabelVector { labels: self.labels.mapv(|v| -v), n1: self.n2, n2: self.n1 }
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(CrcError::shape(format!("{n} labels"), format!("{} labels", self.len())));
        }
        Ok(())
    }
}

/// Eigendecomposition of the training Gram matrix with null eigenvalues
/// replaced by `lambda`, plus the inverse of the resulting augmented matrix.
#[derive(Debug, Clone)]
pub struct GramState {
    raw_gram: Array2<f64>,
    eigenvectors: Array2<f64>,
    eigenvalues: Array1<f64>,
    lambda: f64,
    replaced: usize,
    effective_inverse: Array2<f64>,
}

impl GramState {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The unaugmented `Z Z'`.
    pub fn raw_gram(&self) -> ArrayView2<'_, f64> {
        self.raw_gram.view()
    }

    /// Columns are eigenvectors, ordered like [`GramState::eigenvalues`].
    pub fn eigenvectors(&self) -> ArrayView2<'_, f64> {
        self.eigenvectors.view()
    }

    /// Nonincreasing, clamped at zero, before any replacement.
    pub fn eigenvalues(&self) -> ArrayView1<'_, f64> {
        self.eigenvalues.view()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// How many eigenvalues fell under the threshold and were replaced.
    pub fn replaced_count(&self) -> usize {
        self.replaced
    }

    pub fn effective_inverse(&self) -> ArrayView2<'_, f64> {
        self.effective_inverse.view()
    }

    /// Eigenvalues after replacement.
    pub fn augmented_eigenvalues(&self) -> Array1<f64> {
        let cutoff = self.cutoff();
        self.eigenvalues.mapv(|v| if v < cutoff { self.lambda } else { v })
    }

    fn cutoff(&self) -> f64 {
        RANK_DEFICIENCY_THRESHOLD * self.eigenvalues[0]
    }

    /// The augmented Gram matrix, rebuilt from the spectrum.
    pub fn augmented(&self) -> Array2<f64> {
        let scaled = &self.eigenvectors * &self.augmented_eigenvalues();
        scaled.dot(&self.eigenvectors.t())
    }

    /// `G^-1 v` for the full augmented Gram.
    pub fn solve(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.effective_inverse.dot(&v)
    }
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// `Z Z'`, symmetrized.
pub fn gram_matrix(values: ArrayView2<f64>) -> Array2<f64> {
    let mut g = values.dot(&values.t());
    symmetrize(&mut g);
    g
}

pub(crate) fn symmetrize(g: &mut Array2<f64>) {
    let n = g.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (g[[i, j]] + g[[j, i]]);
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
}

/// Eigendecomposes `Z Z'` and replaces every eigenvalue below
/// [`RANK_DEFICIENCY_THRESHOLD`] times the largest by the median of the
/// (pre-replacement) spectrum.
pub fn build_gram(dm: &DataMatrix) -> Result<GramState> {
    build_gram_from_raw(gram_matrix(dm.values()))
}

pub fn build_gram_from_raw(raw_gram: Array2<f64>) -> Result<GramState> {
    if raw_gram.iter().any(|v| !v.is_finite()) {
        return Err(CrcError::NonFiniteInput);
    }
    let (vals, vecs) = crate::linalg::eigh(raw_gram.view())?;
    // Ascending from the solver.
    let n = vals.len();
    let eigenvalues: Array1<f64> = (0..n).map(|k| vals[n - 1 - k].max(0.0)).collect();
    let mut eigenvectors = Array2::zeros((n, n));
    for k in 0..n {
        eigenvectors.column_mut(k).assign(&vecs.column(n - 1 - k));
    }
    let top = eigenvalues[0];
    if !(top > 0.0) {
        return Err(CrcError::DegenerateGram);
    }
    let cutoff = RANK_DEFICIENCY_THRESHOLD * top;
    let lambda = median(eigenvalues.as_slice().expect("contiguous"));
    let replaced = eigenvalues.iter().filter(|&&v| v < cutoff).count();
    // A median inside the null space (fewer than about n/2 nonzero
    // eigenvalues) cannot restore invertibility.
    if replaced == n || !(lambda >= cutoff) {
        return Err(CrcError::DegenerateGram);
    }
    if replaced > 1 {
        log::debug!("gram: {replaced} eigenvalues below threshold replaced by lambda = {lambda:e}");
    }
    let inv_vals = eigenvalues.mapv(|v| if v < cutoff { 1.0 / lambda } else { 1.0 / v });
    let scaled = &eigenvectors * &inv_vals;
    let mut effective_inverse = scaled.dot(&eigenvectors.t());
    symmetrize(&mut effective_inverse);
    Ok(GramState { raw_gram, eigenvectors, eigenvalues, lambda, replaced, effective_inverse })
}

/// Inverse of the augmented Gram with row and column `index` removed,
/// expressed through the full inverse by block elimination:
/// `(G_{-i,-i})^-1 = H_{-i,-i} - H_{-i,i} H_{i,-i} / H_{ii}` with `H = G^-1`.
///
/// Vectors passed to and returned from [`DowndatedGram::solve`] have `n - 1`
/// entries, in the original row order with `index` skipped.
#[derive(Debug, Clone, Copy)]
pub struct DowndatedGram<'a> {
    inverse: ArrayView2<'a, f64>,
    index: usize,
    pivot: f64,
}

impl<'a> DowndatedGram<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows() - 1
    }

    /// `(G_{-i,-i})^-1 v`.
    pub fn solve(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let n = self.inverse.nrows();
        let i = self.index;
        debug_assert_eq!(v.len(), n - 1);
        // Embed v with a zero at position i, then apply H.
        let mut full = Array1::zeros(n);
        full.slice_mut(s![..i]).assign(&v.slice(s![..i]));
        full.slice_mut(s![i + 1..]).assign(&v.slice(s![i..]));
        let hv = self.inverse.dot(&full);
        let coef = hv[i] / self.pivot;
        let hi = self.inverse.row(i);
        let mut out = Array1::zeros(n - 1);
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            out[k] = hv[j] - coef * hi[j];
        }
        out
    }

    /// Materializes the `(n-1) x (n-1)` inverse.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.inverse.nrows();
        let i = self.index;
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let mut out = Array2::zeros((n - 1, n - 1));
        for (a, &ja) in keep.iter().enumerate() {
            for (b, &jb) in keep.iter().enumerate() {
                out[[a, b]] = self.inverse[[ja, jb]] - self.inverse[[ja, i]] * self.inverse[[i, jb]] / self.pivot;
            }
        }
        out
    }
}

/// Leave-one-out inverse for row `index`, with lambda held at the full-data value.
pub fn downdate_gram(g: &GramState, index: usize) -> Result<DowndatedGram<'_>> {
    let n = g.n();
    if index >= n {
        return Err(CrcError::shape(format!("row index < {n}"), index));
    }
    let h = g.effective_inverse.view();
    let pivot = h[[index, index]];
    let scale = h.diag().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(pivot > 1e-14 * scale) {
        return Err(CrcError::DowndateSingular { index });
    }
    Ok(DowndatedGram { inverse: h, index, pivot })
}

/// The augmented Gram restricted to every row but `index`. This is the
/// matrix a downdate inverts.
pub fn fold_augmented_gram(g: &GramState, index: usize) -> Array2<f64> {
    let aug = g.augmented();
    remove_row_col(aug.view(), index)
}

/// Direct inverse of the fold matrix by eigendecomposition; the fallback
/// when the downdate pivot is unusable.
pub fn direct_fold_inverse(g: &GramState, index: usize) -> Result<Array2<f64>> {
    let fold = fold_augmented_gram(g, index);
    let (vals, vecs) = crate::linalg::eigh(fold.view())?;
    if vals.iter().any(|&v| !(v > 0.0)) {
        return Err(CrcError::DowndateSingular { index });
    }
    let scaled = &vecs * &vals.mapv(|v| 1.0 / v);
    Ok(scaled.dot(&vecs.t()))
}

pub(crate) fn remove_row_col(m: ArrayView2<f64>, index: usize) -> Array2<f64> {
    let n = m.nrows();
    let keep: Vec<usize> = (0..n).filter(|&j| j != index).collect();
    m.select(Axis(0), &keep).select(Axis(1), &keep)
}

pub(crate) fn remove_entry(v: ArrayView1<f64>, index: usize) -> Array1<f64> {
    v.iter().enumerate().filter(|&(j, _)| j != index).map(|(_, &x)| x).collect()
}
