use std::fmt;
use std::str::FromStr;

use crc_core::gram::LabelVector;
use crc_core::linalg::{cholesky, DenseExt};
use crc_core::{CrcError, Result};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

/// Name of the generator recorded in output metadata.
pub const RNG_NAME: &str = "ChaCha20";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    /// `Z = T gamma + eps`.
    Simple,
    /// Latent factors independent of the label.
    Uncorrelated,
    /// Latent factors with label-dependent mean `T eta`.
    Correlated,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Simple => "simple",
            ModelKind::Uncorrelated => "uncorrelated",
            ModelKind::Correlated => "correlated",
        })
    }
}

impl FromStr for ModelKind {
    type Err = CrcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(ModelKind::Simple),
            "uncorrelated" => Ok(ModelKind::Uncorrelated),
            "correlated" => Ok(ModelKind::Correlated),
            other => Err(CrcError::ConfigError(format!("unknown model '{other}'"))),
        }
    }
}

/// Whether the loadings are redrawn for every replicate or shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    #[default]
    Redraw,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub gamma: Array1<f64>,
    pub eta: Array1<f64>,
    pub psi: Array2<f64>,
    pub sigma: f64,
    pub alpha_seed: u64,
    pub data_seed: u64,
    pub alpha_mode: AlphaMode,
}

impl SimConfig {
    /// Defaults: `r = 3`, `gamma = (1/sqrt 3, 1/sqrt 3, 1/sqrt 3, 0, ...)`,
    /// `Psi = I`, `sigma = 1`, and `eta = (1/sqrt 3, ...)` for the correlated model.
    pub fn new(model: ModelKind, n: usize, p: usize) -> Self {
        let r = 3;
        let c = 1.0 / 3f64.sqrt();
        let gamma = Array1::from_shape_fn(p, |j| if j < 3 { c } else { 0.0 });
        let eta = match model {
            ModelKind::Correlated => Array1::from_elem(r, c),
            _ => Array1::zeros(r),
        };
        SimConfig {
            model,
            n,
            p,
            r,
            gamma,
            eta,
            psi: Array2::eye(r),
            sigma: 1.0,
            alpha_seed: 1,
            data_seed: 1,
            alpha_mode: AlphaMode::Redraw,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.alpha_seed = seed;
        self.data_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CrcError::ConfigError(m));
        if self.n < 4 || !self.n.is_multiple_of(2) {
            return bad(format!("n must be even and at least 4, got {}", self.n));
        }
        if self.p < 2 {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        if self.gamma.len() != self.p {
            return bad(format!("gamma has {} entries for p = {}", self.gamma.len(), self.p));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.model != ModelKind::Simple {
            if self.r + 1 >= self.n {
                return bad(format!("latent dimension r = {} must be below n - 1", self.r));
            }
            if self.eta.len() != self.r || self.psi.dim() != (self.r, self.r) {
                return bad(format!("eta and psi must have dimension r = {}", self.r));
            }
            if self.psi.iter().zip(self.psi.t().iter()).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0)) {
                return bad("psi must be symmetric".into());
            }
            cholesky(self.psi.view()).map_err(|_| CrcError::ConfigError("psi must be positive definite".into()))?;
        }
        Ok(())
    }

    fn has_latent(&self) -> bool {
        self.model != ModelKind::Simple
    }
}

/// Stream identifiers keep loadings, training data and test data apart.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Purpose {
    Alpha = 0,
    Train = 1,
    Test = 2,
}

pub(crate) fn stream_rng(seed: u64, replicate: u64, purpose: Purpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 2) | purpose as u64);
    rng
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub z: Array2<f64>,
    pub t: LabelVector,
    /// `n x r` latent factors; zero columns for the simple model.
    pub l: Array2<f64>,
    /// `T gamma + eps`.
    pub s: Array2<f64>,
    pub alpha: Array2<f64>,
}

/// Fixed parameters of one replicate: the config plus drawn loadings.
#[derive(Debug, Clone)]
pub struct Population {
    cfg: SimConfig,
    alpha: Array2<f64>,
    psi_chol: Array2<f64>,
    replicate: u64,
}

impl Population {
    pub fn new(cfg: &SimConfig, replicate: u64) -> Result<Self> {
        cfg.validate()?;
        let (alpha, psi_chol) = if cfg.has_latent() {
            let alpha_rep = match cfg.alpha_mode {
                AlphaMode::Redraw => replicate,
                AlphaMode::Fixed => 0,
            };
            let mut rng = stream_rng(cfg.alpha_seed, alpha_rep, Purpose::Alpha);
            (normal_matrix(cfg.r, cfg.p, &mut rng), cholesky(cfg.psi.view())?)
        } else {
            (Array2::zeros((0, cfg.p)), Array2::zeros((0, 0)))
        };
        Ok(Population { cfg: cfg.clone(), alpha, psi_chol, replicate })
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    /// Training sample of the configured size.
    pub fn train(&self) -> Result<SimDataset> {
        let mut rng = stream_rng(self.cfg.data_seed, self.replicate, Purpose::Train);
        self.sample(self.cfg.n, &mut rng)
    }

    /// Independent balanced test sample.
    pub fn test(&self, size: usize) -> Result<SimDataset> {
        let mut rng = stream_rng(self.cfg.data_seed, self.replicate, Purpose::Test);
        self.sample(size, &mut rng)
    }

    /// Balanced shuffled labels, then `L | T ~ N(T eta, Psi)` and noise.
    pub fn sample(&self, n: usize, rng: &mut ChaCha20Rng) -> Result<SimDataset> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(CrcError::ConfigError(format!("sample size must be even and at least 4, got {n}")));
        }
        let cfg = &self.cfg;
        let mut signs: Vec<i8> = (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect();
        signs.shuffle(rng);
        let t = LabelVector::new(&signs)?;
        let tcol = t.as_array().insert_axis(Axis(1)).to_owned();

        let l = if cfg.has_latent() {
            let noise = normal_matrix(n, cfg.r, rng);
            tcol.dot(&cfg.eta.view().insert_axis(Axis(0))) + noise.dot(&self.psi_chol.t())
        } else {
            Array2::zeros((n, cfg.r))
        };
        let mut s = normal_matrix(n, cfg.p, rng);
        s *= cfg.sigma;
        s += &tcol.dot(&cfg.gamma.view().insert_axis(Axis(0)));
        let mut z = s.clone();
        if cfg.has_latent() {
            ndarray::linalg::general_mat_mul(1.0, &l, &self.alpha, 1.0, &mut z);
        }
        Ok(SimDataset { z, t, l, s, alpha: self.alpha.clone() })
    }
}

/// Training data for replicate 0 of the config.
pub fn generate(cfg: &SimConfig) -> Result<SimDataset> {
    Population::new(cfg, 0)?.train()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesRates {
    /// Optimal accuracy observing `S` alone.
    pub sparse: f64,
    /// Optimal accuracy observing `L` alone.
    pub latent: f64,
    /// Optimal accuracy observing `(S, L)`.
    pub combined: f64,
}

pub fn bayes_rates(cfg: &SimConfig) -> Result<BayesRates> {
    cfg.validate()?;
    let s2 = cfg.gamma.dot(&cfg.gamma) / (cfg.sigma * cfg.sigma);
    let l2 = if cfg.has_latent() {
        let psi_inv = cfg.psi.inverse()?;
        cfg.eta.dot(&psi_inv.dot(&cfg.eta))
    } else {
        0.0
    };
    let phi = |v: f64| Normal::standard().cdf(v.max(0.0).sqrt());
    Ok(BayesRates { sparse: phi(s2), latent: phi(l2), combined: phi(s2 + l2) })
}
