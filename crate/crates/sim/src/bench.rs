use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crc_core::baselines::fit_dlda_baseline;
use crc_core::ensemble::{fit_crc, CrcConfig};
use crc_core::gram::median;
use crc_core::{CrcError, Result};

use crate::model::{bayes_rates, AlphaMode, ModelKind, Population, SimConfig, SimDataset, RNG_NAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Classifier {
    Crc,
    CrcS,
    CrcL,
    Dlda,
}

impl Classifier {
    pub const ALL: [Classifier; 4] = [Classifier::Crc, Classifier::CrcS, Classifier::CrcL, Classifier::Dlda];
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classifier::Crc => "CRC",
            Classifier::CrcS => "CRC-S",
            Classifier::CrcL => "CRC-L",
            Classifier::Dlda => "DLDA",
        })
    }
}

impl FromStr for Classifier {
    type Err = CrcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CRC" => Ok(Classifier::Crc),
            "CRC-S" | "CRCS" => Ok(Classifier::CrcS),
            "CRC-L" | "CRCL" => Ok(Classifier::CrcL),
            "DLDA" => Ok(Classifier::Dlda),
            other => Err(CrcError::ConfigError(format!("unknown classifier '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub cells: Vec<(ModelKind, usize, usize)>,
    pub replicates: usize,
    pub test_size: usize,
    pub classifiers: Vec<Classifier>,
    pub seed: u64,
    pub alpha_mode: AlphaMode,
    pub crc: CrcConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            cells: Vec::new(),
            replicates: 20,
            test_size: 1000,
            classifiers: Classifier::ALL.to_vec(),
            seed: 1,
            alpha_mode: AlphaMode::Redraw,
            crc: CrcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub classifier: Classifier,
    pub replicate: usize,
    pub accuracy: f64,
    pub n_features_selected: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchFailure {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub classifier: Classifier,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub classifier: Classifier,
    pub replicates: usize,
    pub mean_accuracy: f64,
    /// Standard deviation over replicates divided by the square root of their count.
    pub std_error: f64,
    pub median_features: Option<f64>,
    pub bayes_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchResult {
    pub records: Vec<BenchRecord>,
    pub failures: Vec<BenchFailure>,
    pub summaries: Vec<CellSummary>,
}

impl BenchResult {
    pub fn summary(&self, model: ModelKind, n: usize, p: usize, classifier: Classifier) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| s.model == model && s.n == n && s.p == p && s.classifier == classifier)
    }
}

fn accuracy(pred: impl Iterator<Item = i8>, truth: &[i8]) -> f64 {
    let hits = pred.zip(truth).filter(|(a, b)| a == *b).count();
    hits as f64 / truth.len() as f64
}

/// Accuracy and selected feature count, or the fit error.
type ReplicateOutcome = std::result::Result<(f64, Option<usize>), String>;

/// Accuracies of every requested classifier on one replicate.
fn run_replicate(cfg: &BenchConfig, train: &SimDataset, test: &SimDataset) -> Vec<(Classifier, ReplicateOutcome)> {
    let truth = test.t.signs();
    let mut out = Vec::new();
    let wants = |c: Classifier| cfg.classifiers.contains(&c);
    if wants(Classifier::Crc) || wants(Classifier::CrcS) || wants(Classifier::CrcL) {
        let fitted =
            fit_crc(train.z.clone(), &train.t, &cfg.crc).and_then(|m| m.predict_batch(test.z.view()).map(|p| (m, p)));
        for c in [Classifier::Crc, Classifier::CrcS, Classifier::CrcL] {
            if !wants(c) {
                continue;
            }
            let res = match &fitted {
                Ok((m, preds)) => {
                    let acc = match c {
                        Classifier::Crc => accuracy(preds.iter().map(|p| p.label), &truth),
                        Classifier::CrcS => accuracy(preds.iter().map(|p| m.sparse_label(p)), &truth),
                        _ => accuracy(preds.iter().map(|p| m.latent_label(p)), &truth),
                    };
                    let nsel = (c != Classifier::CrcL).then(|| m.chosen_n());
                    Ok((acc, nsel))
                }
                Err(e) => Err(e.to_string()),
            };
            out.push((c, res));
        }
    }
    if wants(Classifier::Dlda) {
        let res = fit_dlda_baseline(train.z.clone(), &train.t, cfg.crc.grid.as_deref())
            .and_then(|m| Ok((accuracy(m.predict_batch(test.z.view())?.into_iter(), &truth), Some(m.trace.chosen_n))))
            .map_err(|e| e.to_string());
        out.push((Classifier::Dlda, res));
    }
    out
}

/// Runs every cell for the configured replicates. Each replicate draws a
/// fresh training set and an independent balanced test set from its own
/// generator streams, so results do not depend on scheduling.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.replicates == 0 {
        return Err(CrcError::ConfigError("replicates must be positive".into()));
    }
    let mut result = BenchResult::default();
    for &(model, n, p) in &cfg.cells {
        let mut sim = SimConfig::new(model, n, p).with_seed(cfg.seed);
        sim.alpha_mode = cfg.alpha_mode;
        sim.validate()?;
        let rates = bayes_rates(&sim)?;
        let start = result.records.len();
        for rep in 0..cfg.replicates {
            log::info!("{model} n={n} p={p} replicate {}/{}", rep + 1, cfg.replicates);
            let pop = Population::new(&sim, rep as u64)?;
            let (train, test) = (pop.train()?, pop.test(cfg.test_size)?);
            for (classifier, res) in run_replicate(cfg, &train, &test) {
                match res {
                    Ok((accuracy, n_features_selected)) => result.records.push(BenchRecord {
                        model,
                        n,
                        p,
                        classifier,
                        replicate: rep,
                        accuracy,
                        n_features_selected,
                        seed: cfg.seed,
                    }),
                    Err(message) => {
                        log::warn!("{model} n={n} p={p} replicate {rep} {classifier} failed: {message}");
                        result.failures.push(BenchFailure { model, n, p, classifier, replicate: rep, message });
                    }
                }
            }
        }
        let cell = &result.records[start..];
        for &c in &cfg.classifiers {
            let recs: Vec<&BenchRecord> = cell.iter().filter(|r| r.classifier == c).collect();
            if recs.is_empty() {
                continue;
            }
            let k = recs.len() as f64;
            let mean = recs.iter().map(|r| r.accuracy).sum::<f64>() / k;
            let sd = if recs.len() > 1 {
                (recs.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            let feats: Vec<f64> = recs.iter().filter_map(|r| r.n_features_selected.map(|v| v as f64)).collect();
            result.summaries.push(CellSummary {
                model,
                n,
                p,
                classifier: c,
                replicates: recs.len(),
                mean_accuracy: mean,
                std_error: sd / k.sqrt(),
                median_features: (!feats.is_empty()).then(|| median(&feats)),
                bayes_rate: rates.combined,
            });
        }
    }
    Ok(result)
}

/// Provenance lines written before the CSV header, each prefixed with `# `.
pub fn provenance_lines(cfg: &BenchConfig) -> Vec<String> {
    vec![
        format!("crc-sim {}", env!("CARGO_PKG_VERSION")),
        format!("rng={RNG_NAME} seed={} alpha_mode={:?}", cfg.seed, cfg.alpha_mode),
        format!("replicates={} test_size={}", cfg.replicates, cfg.test_size),
    ]
}

fn write_comments<W: Write>(w: &mut W, lines: &[String]) -> io::Result<()> {
    for line in lines {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

pub fn write_records_csv<W: Write>(mut w: W, result: &BenchResult, comments: &[String]) -> io::Result<()> {
    write_comments(&mut w, comments)?;
    writeln!(w, "model,n,p,classifier,replicate,accuracy,n_features_selected,seed")?;
    for r in &result.records {
        let nsel = r.n_features_selected.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{},{},{}", r.model, r.n, r.p, r.classifier, r.replicate, r.accuracy, nsel, r.seed)?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut w: W, result: &BenchResult, comments: &[String]) -> io::Result<()> {
    write_comments(&mut w, comments)?;
    writeln!(w, "model,n,p,classifier,replicates,mean_accuracy,std_error,median_features,bayes_rate")?;
    for s in &result.summaries {
        let med = s.median_features.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.model, s.n, s.p, s.classifier, s.replicates, s.mean_accuracy, s.std_error, med, s.bayes_rate
        )?;
    }
    Ok(())
}
