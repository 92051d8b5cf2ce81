//! Dense decompositions on `ndarray` matrices, backed by faer.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};
use ndarray::{Array1, Array2, ArrayBase, ArrayView2, Data, Ix1, Ix2};

use crate::error::{CrcError, Result};

/// Pivots smaller than this times the largest are treated as zero.
const LU_PIVOT_TOLERANCE: f64 = 1e-14;

fn to_faer(a: ArrayView2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn to_ndarray(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn check_square(a: ArrayView2<f64>) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(CrcError::shape("square matrix", format!("{r}x{c}")));
    }
    Ok(r)
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
/// Only the lower triangle is read.
pub fn eigh(a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    check_square(a)?;
    let evd = to_faer(a).self_adjoint_eigen(Side::Lower).map_err(|e| CrcError::Linalg(format!("{e:?}")))?;
    let s = evd.S();
    let vals = Array1::from_shape_fn(s.dim(), |k| s[k]);
    Ok((vals, to_ndarray(evd.U())))
}

/// Thin SVD `a = U diag(s) V'`, singular values descending.
pub fn svd(a: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let dec = to_faer(a).thin_svd().map_err(|e| CrcError::Linalg(format!("{e:?}")))?;
    let s = dec.S();
    let sing = Array1::from_shape_fn(s.dim(), |k| s[k]);
    Ok((to_ndarray(dec.U()), sing, to_ndarray(dec.V())))
}

/// Lower Cholesky factor `L` with `a = L L'`; fails unless `a` is positive definite.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = check_square(a)?;
    let llt = to_faer(a).llt(Side::Lower).map_err(|e| CrcError::Linalg(format!("not positive definite: {e:?}")))?;
    let l = llt.L();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| if j <= i { l[(i, j)] } else { 0.0 }))
}

struct Lu(faer::linalg::solvers::PartialPivLu<f64>);

impl Lu {
    fn new(a: ArrayView2<f64>) -> Result<Self> {
        let n = check_square(a)?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(CrcError::NonFiniteInput);
        }
        let lu = to_faer(a).partial_piv_lu();
        let u = lu.U();
        let pivots = (0..n).map(|k| u[(k, k)].abs());
        let max = pivots.clone().fold(0.0, f64::max);
        let min = pivots.fold(f64::INFINITY, f64::min);
        if n > 0 && !(min > LU_PIVOT_TOLERANCE * max) {
            return Err(CrcError::Linalg("matrix is singular to working precision".into()));
        }
        Ok(Lu(lu))
    }
}

/// LU-based solves and inverses for square matrices.
pub trait DenseExt {
    fn solve_vec<S: Data<Elem = f64>>(&self, b: &ArrayBase<S, Ix1>) -> Result<Array1<f64>>;
    fn inverse(&self) -> Result<Array2<f64>>;
}

impl<S0: Data<Elem = f64>> DenseExt for ArrayBase<S0, Ix2> {
    fn solve_vec<S: Data<Elem = f64>>(&self, b: &ArrayBase<S, Ix1>) -> Result<Array1<f64>> {
        let lu = Lu::new(self.view())?;
        if b.len() != self.nrows() {
            return Err(CrcError::shape(self.nrows(), b.len()));
        }
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = lu.0.solve(&rhs);
        Ok(Array1::from_shape_fn(b.len(), |i| x[(i, 0)]))
    }

    fn inverse(&self) -> Result<Array2<f64>> {
        let lu = Lu::new(self.view())?;
        Ok(to_ndarray(lu.0.inverse().as_ref()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| {
            (((i * 7919 + j * 104729 + 13) as f64).sin() * 1000.0).fract() + if i == j { 2.0 } else { 0.0 }
        })
    }

    #[test]
    fn solve_and_inverse_residuals() {
        for n in [1, 3, 11, 40, 150] {
            let a = test_matrix(n);
            let b = Array1::from_shape_fn(n, |i| i as f64 - 1.0);
            let x = a.solve_vec(&b).unwrap();
            let r = (a.dot(&x) - &b).mapv(f64::abs).sum();
            assert!(r < 1e-9, "n={n} residual {r}");
            let inv = a.inverse().unwrap();
            let e = (a.dot(&inv) - Array2::<f64>::eye(n)).mapv(f64::abs).sum();
            assert!(e < 1e-9, "n={n} inverse error {e}");
        }
    }

    #[test]
    fn singular_rejected() {
        let a = Array2::from_shape_fn((5, 5), |(i, j)| (i + j) as f64);
        assert!(a.inverse().is_err());
    }

    #[test]
    fn eigh_reconstructs_ascending() {
        let a = test_matrix(30);
        let s = a.dot(&a.t());
        let (w, v) = eigh(s.view()).unwrap();
        assert!(w.windows(2).into_iter().all(|p| p[0] <= p[1]));
        let rec = (&v * &w).dot(&v.t());
        assert!((rec - &s).mapv(f64::abs).sum() < 1e-8);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = test_matrix(8);
        let s = a.dot(&a.t());
        let l = cholesky(s.view()).unwrap();
        assert!((l.dot(&l.t()) - &s).mapv(f64::abs).sum() < 1e-9);
        assert!(cholesky((-&s).view()).is_err());
    }

    #[test]
    fn svd_reconstructs() {
        let a = Array2::from_shape_fn((6, 20), |(i, j)| ((i * 3 + j * 7) as f64).cos());
        let (u, s, v) = svd(a.view()).unwrap();
        assert_eq!(s.len(), 6);
        let rec = (&u * &s).dot(&v.t());
        assert!((rec - &a).mapv(f64::abs).sum() < 1e-10);
    }
}
