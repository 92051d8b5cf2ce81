//! Subspace comparison used to check that leading singular vectors of the
//! data recover the latent factors.

use crc_core::linalg::svd;
use crc_core::{CrcError, Result};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

fn centered(a: ArrayView2<f64>) -> Array2<f64> {
    let mean = a.mean_axis(Axis(0)).expect("non-empty");
    &a - &mean
}

/// Orthonormal basis of the column space of `a`.
fn basis(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (u, sv, _) = svd(a)?;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&v| v > 1e-12 * top).count();
    if rank == 0 {
        return Err(CrcError::InvalidData("zero matrix has no column space".into()));
    }
    Ok(u.slice(s![.., ..rank]).to_owned())
}

/// Canonical correlations between the column spaces of `a` and `b`
/// (both `n x k`, columns centered first), largest first.
pub fn canonical_correlations(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array1<f64>> {
    if a.nrows() != b.nrows() {
        return Err(CrcError::InvalidData(format!("row counts differ: {} vs {}", a.nrows(), b.nrows())));
    }
    let qa = basis(centered(a).view())?;
    let qb = basis(centered(b).view())?;
    let (_, sv, _) = svd(qa.t().dot(&qb).view())?;
    Ok(sv.mapv(|v| v.min(1.0)))
}

/// Top `k` left singular vectors of the column-centered matrix.
pub fn leading_left_vectors(z: ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
    let zc = centered(z);
    let gram = zc.dot(&zc.t());
    let (_, vecs) = crc_core::linalg::eigh(gram.view())?;
    let n = vecs.ncols();
    let k = k.min(n);
    let mut out = Array2::zeros((z.nrows(), k));
    for c in 0..k {
        out.column_mut(c).assign(&vecs.column(n - 1 - c));
    }
    Ok(out)
}
