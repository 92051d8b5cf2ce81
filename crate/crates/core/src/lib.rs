// `!(a >= b)` comparisons deliberately treat NaN as failing.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod crc_l;
pub mod crc_s;
pub mod ensemble;
pub mod error;
pub mod gram;
pub mod linalg;
pub mod model_file;
pub mod residualization;

pub use error::{CrcError, Result, Stage};
