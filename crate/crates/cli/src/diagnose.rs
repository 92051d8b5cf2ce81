//! Spectrum and per-feature summaries of a data matrix.

use crc_core::gram::{center_columns, gram_matrix};
use crc_core::linalg::eigh;
use ndarray::{Array1, ArrayView2, Axis};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Eigenvalues of the column-centered Gram matrix, descending, clipped at zero.
    pub eigenvalues: Vec<f64>,
    /// Number of leading components actually summed.
    pub k: usize,
    /// Share of total variance in the leading `k` components, in percent.
    pub percent: f64,
}

impl Spectrum {
    pub fn cumulative_percent(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|v| {
                acc += v;
                100.0 * acc / total
            })
            .collect()
    }
}

/// Percent of variance explained by the top `k` principal components.
/// `k` above `n - 1` is clamped with a warning.
pub fn pct_var_explained(matrix: ArrayView2<f64>, k: usize) -> Result<Spectrum> {
    let n = matrix.nrows();
    if n < 2 {
        return Err(CliError::Data(format!("need at least 2 samples, got {n}")));
    }
    if k == 0 {
        return Err(CliError::Usage("number of components must be positive".into()));
    }
    let k = if k > n - 1 {
        log::warn!("{k} components requested but only {} are available; using {}", n - 1, n - 1);
        n - 1
    } else {
        k
    };
    let dm = center_columns(matrix)?;
    let (vals, _) = eigh(gram_matrix(dm.values()).view())?;
    let eigenvalues: Vec<f64> = vals.iter().rev().map(|&v| v.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(CliError::Data("matrix has no variance".into()));
    }
    let percent = 100.0 * eigenvalues[..k].iter().sum::<f64>() / total;
    Ok(Spectrum { eigenvalues, k, percent })
}

/// Column means and unbiased variances.
pub fn feature_moments(matrix: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = matrix.mean_axis(Axis(0)).expect("non-empty matrix");
    let var = matrix.var_axis(Axis(0), 1.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crc_sim::{generate, ModelKind, SimConfig};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn rank_one_is_fully_explained() {
        let u = Array1::from_shape_fn(12, |i| i as f64 - 3.0);
        let v = Array1::from_shape_fn(40, |j| (j as f64).sin());
        let m = u.insert_axis(Axis(1)).dot(&v.insert_axis(Axis(0)));
        let s = pct_var_explained(m.view(), 1).unwrap();
        assert!((s.percent - 100.0).abs() < 1e-8);
    }

    #[test]
    fn gaussian_top_ten_share() {
        let s = pct_var_explained(gaussian(50, 5000, 2).view(), 10).unwrap();
        assert!((15.0..=30.0).contains(&s.percent), "{}", s.percent);
        assert_eq!(s.eigenvalues.len(), 50);
        assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn correlated_model_top_ten_share() {
        let ds = generate(&SimConfig::new(ModelKind::Correlated, 200, 20000).with_seed(4)).unwrap();
        let s = pct_var_explained(ds.z.view(), 10).unwrap();
        assert!(s.percent > 40.0, "{}", s.percent);
    }

    #[test]
    fn k_is_clamped() {
        let s = pct_var_explained(gaussian(6, 30, 1).view(), 10).unwrap();
        assert_eq!(s.k, 5);
        assert!((s.percent - 100.0).abs() < 1e-8);
        assert!((s.cumulative_percent()[4] - 100.0).abs() < 1e-8);
    }

    #[test]
    fn moments() {
        let m = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 2.0, 0.0, 3.0, 6.0]).unwrap();
        let (mean, var) = feature_moments(m.view());
        assert_eq!(mean.to_vec(), vec![2.0, 2.0]);
        assert_eq!(var.to_vec(), vec![1.0, 12.0]);
    }
}
