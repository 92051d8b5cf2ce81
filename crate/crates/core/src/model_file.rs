//! Binary model format.
//!
//! All integers are little-endian `u64` unless noted; reals are
//! little-endian `f64`.
//!
//! ```text
//! magic        4 bytes  "CRC1"
//! version      u32
//! n, p, k, g   u64 x 4  rows, features, selected features, grid length
//! lambda, b0, b1, b2, latent_offset, sparse_midpoint, sparse_offset   f64 x 7
//! labels       n bytes, i8 (-1 or +1)
//! mu_hat       p f64
//! gamma_hat    p f64
//! training     n*p f64, centered, row-major
//! latent_core  n f64
//! features     k u64
//! mean_diff, pooled_var, weights   k f64 each
//! sparse_dual  n f64
//! loo_pairs    n*2 f64, row-major (latent, sparse)
//! grid         g u64
//! errors       g f64
//! chosen_n     u64
//! checksum     u32, CRC-32 of every preceding byte
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::crc_l::CrcLModel;
use crate::crc_s::{DldaModel, GridSearchTrace};
use crate::ensemble::{FittedCrc, MetaLda};
use crate::error::{CrcError, Result};
use crate::gram::{DataMatrix, LabelVector};
use crate::residualization::GammaEstimate;

pub const MAGIC: &[u8; 4] = b"CRC1";
pub const VERSION: u32 = 1;

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u64(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn reals<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for &v in vals {
            self.f64(v);
        }
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CrcError::CorruptModel(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| CrcError::CorruptModel(format!("count {v} out of range")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn reals(&mut self, len: usize) -> Result<Array1<f64>> {
        let raw = self.take(len.checked_mul(8).ok_or_else(|| CrcError::CorruptModel("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let len = rows.checked_mul(cols).ok_or_else(|| CrcError::CorruptModel("size overflow".into()))?;
        let flat = self.reals(len)?;
        Array2::from_shape_vec((rows, cols), flat.to_vec()).map_err(|e| CrcError::CorruptModel(e.to_string()))
    }
}

pub fn to_bytes(m: &FittedCrc) -> Vec<u8> {
    let (n, p, k, g) = (m.n_train(), m.n_features(), m.crcs.feature_indices.len(), m.trace.grid.len());
    let mut e = Encoder { buf: Vec::with_capacity(8 * (n * p + 2 * p + 6 * n + 4 * k + 2 * g + 16)) };
    e.buf.extend_from_slice(MAGIC);
    e.buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [n, p, k, g] {
        e.u64(v);
    }
    for v in [
        m.lambda,
        m.meta.intercept,
        m.meta.sparse_coef,
        m.meta.latent_coef,
        m.crcl.offset,
        m.crcs.midpoint,
        m.crcs.offset,
    ] {
        e.f64(v);
    }
    e.buf.extend(m.labels.signs().iter().map(|&s| s as u8));
    e.reals(m.training.mu_hat().iter());
    e.reals(m.gamma.gamma_hat.iter());
    e.reals(m.training.values().iter());
    e.reals(m.crcl.core.iter());
    for &j in &m.crcs.feature_indices {
        e.u64(j);
    }
    e.reals(m.crcs.mean_diff.iter());
    e.reals(m.crcs.pooled_var.iter());
    e.reals(m.crcs.weights.iter());
    e.reals(m.sparse_dual.iter());
    e.reals(m.loo_pairs.iter());
    for &v in &m.trace.grid {
        e.u64(v);
    }
    e.reals(m.trace.estimated_errors.iter());
    e.u64(m.trace.chosen_n);
    let crc = crc32fast::hash(&e.buf);
    e.buf.extend_from_slice(&crc.to_le_bytes());
    e.buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<FittedCrc> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(CrcError::CorruptModel("missing CRC1 header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CrcError::VersionMismatch { found: version, expected: VERSION });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(CrcError::CorruptModel("checksum mismatch".into()));
    }
    let mut d = Decoder { bytes: body, pos: 8 };
    let (n, p, k, g) = (d.u64()?, d.u64()?, d.u64()?, d.u64()?);
    let [lambda, b0, b1, b2, latent_offset, sparse_midpoint, sparse_offset] =
        [d.f64()?, d.f64()?, d.f64()?, d.f64()?, d.f64()?, d.f64()?, d.f64()?];
    let signs: Vec<i8> = d.take(n)?.iter().map(|&b| b as i8).collect();
    let labels = LabelVector::new(&signs).map_err(|e| CrcError::CorruptModel(e.to_string()))?;
    let mu_hat = d.reals(p)?;
    let gamma_hat = d.reals(p)?;
    let values = d.matrix(n, p)?;
    let core = d.reals(n)?;
    let feature_indices = (0..k).map(|_| d.u64()).collect::<Result<Vec<_>>>()?;
    if feature_indices.iter().any(|&j| j >= p) {
        return Err(CrcError::CorruptModel("feature index out of range".into()));
    }
    let mean_diff = d.reals(k)?;
    let pooled_var = d.reals(k)?;
    let weights = d.reals(k)?;
    let sparse_dual = d.reals(n)?;
    let loo_pairs = d.matrix(n, 2)?;
    let grid = (0..g).map(|_| d.u64()).collect::<Result<Vec<_>>>()?;
    let estimated_errors = d.reals(g)?.to_vec();
    let chosen_n = d.u64()?;
    if d.pos != body.len() {
        return Err(CrcError::CorruptModel(format!("{} trailing bytes", body.len() - d.pos)));
    }
    Ok(FittedCrc {
        training: DataMatrix::from_parts(values, mu_hat),
        labels,
        gamma: GammaEstimate { gamma_hat },
        lambda,
        crcl: CrcLModel { core, lambda, offset: latent_offset },
        crcs: DldaModel {
            feature_indices,
            mean_diff,
            pooled_var,
            weights,
            midpoint: sparse_midpoint,
            offset: sparse_offset,
        },
        sparse_dual,
        meta: MetaLda { intercept: b0, sparse_coef: b1, latent_coef: b2 },
        loo_pairs,
        trace: GridSearchTrace { grid, estimated_errors, chosen_n },
    })
}

pub fn write_model<W: Write>(m: &FittedCrc, mut w: W) -> Result<()> {
    w.write_all(&to_bytes(m))?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<FittedCrc> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
