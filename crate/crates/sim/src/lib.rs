//! Synthetic data from the simple, uncorrelated and correlated latent
//! factor models, Bayes-optimal accuracies, and a replicated benchmark.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod model;
pub mod recovery;

pub use bench::{run_benchmark, BenchConfig, BenchRecord, BenchResult, CellSummary, Classifier};
pub use model::{bayes_rates, generate, AlphaMode, BayesRates, ModelKind, Population, SimConfig, SimDataset};
