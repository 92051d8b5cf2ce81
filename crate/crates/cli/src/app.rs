//! Subcommands of the `crc` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use crc_core::baselines::fit_dlda_baseline;
use crc_core::ensemble::{fit_crc, CrcConfig, FittedCrc};
use crc_core::gram::LabelVector;
use crc_core::model_file;
use crc_sim::bench::{provenance_lines, write_records_csv, write_summary_csv};
use crc_sim::{run_benchmark, AlphaMode, BenchConfig, Classifier, ModelKind, Population, SimConfig};
use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::config::Settings;
use crate::dataset::{load_dataset, load_matrix, write_matrix, Dataset, LoadOptions, Matrix};
use crate::diagnose::{feature_moments, pct_var_explained};
use crate::error::{CliError, Result};
use crate::output::{atomic_write, comment_block, EffectiveConfig};
use crate::split::grouped_balanced_split;

#[derive(Debug, Parser)]
#[command(name = "crc", version, about = "Cross-residualization classifier for p >> n data")]
pub struct Cli {
    /// Settings file of `key = value` lines; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a classifier and write the model file and a training report.
    Train(TrainArgs),
    /// Score samples with a saved model.
    Predict(PredictArgs),
    /// Draw a synthetic dataset from a latent factor model.
    Simulate(SimulateArgs),
    /// Replicated accuracy benchmark on synthetic data.
    Bench(BenchArgs),
    /// Repeated balanced train/test splits of one dataset.
    Crossval(CrossvalArgs),
    /// Principal component spectrum and per-feature moments.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Matrix file: CSV, TSV (.tsv/.txt) or binary cache (.crm).
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Labels file with sample ids in the first column.
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub group_column: Option<String>,
    /// Raw label value that maps to +1.
    #[arg(long)]
    pub positive_label: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Candidate feature counts, comma separated.
    #[arg(long)]
    pub grid: Option<String>,
    /// Use this many features instead of searching the grid.
    #[arg(long)]
    pub features: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_name = "FILE")]
    pub model_out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// simple, uncorrelated or correlated.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub replicate: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub labels_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Models, comma separated.
    #[arg(long)]
    pub models: Option<String>,
    /// Training sizes, comma separated.
    #[arg(long)]
    pub ns: Option<String>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub replicates: Option<String>,
    #[arg(long)]
    pub test_size: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub classifiers: Option<String>,
    /// redraw or fixed loadings across replicates.
    #[arg(long)]
    pub alpha_mode: Option<String>,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub records: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub summary: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub splits: Option<String>,
    /// Training fraction of the smaller class.
    #[arg(long)]
    pub frac: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub per_split: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub aggregate: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Leading components counted in the explained share.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub scree: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub variance: Option<PathBuf>,
}

const DATA_KEYS: [(&str, Option<&str>); 3] = [("label_column", None), ("group_column", None), ("positive_label", None)];

impl DataArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("label_column", self.label_column.clone()),
            ("group_column", self.group_column.clone()),
            ("positive_label", self.positive_label.clone()),
        ]
    }

    fn load(&self, s: &Settings) -> Result<Dataset> {
        let options = LoadOptions {
            labels_path: self.labels.clone(),
            label_column: s.raw("label_column").map(str::to_string),
            group_column: s.raw("group_column").map(str::to_string),
            positive_label: s.raw("positive_label").map(str::to_string),
        };
        load_dataset(&self.data, &options)
    }
}

impl FitArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![("grid", self.grid.clone()), ("features", self.features.clone())]
    }
}

fn crc_config(s: &Settings) -> Result<CrcConfig> {
    let grid = s.list::<usize>("grid")?;
    if grid.as_ref().is_some_and(|g| g.is_empty() || g.contains(&0)) {
        return Err(CliError::Usage("grid values must be positive".into()));
    }
    let fixed_features = s.get::<usize>("features")?;
    if fixed_features == Some(0) {
        return Err(CliError::Usage("features must be positive".into()));
    }
    Ok(CrcConfig { grid, fixed_features })
}

fn keys(groups: &[&[(&'static str, Option<&'static str>)]]) -> Vec<(&'static str, Option<&'static str>)> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

/// CSV text: provenance comments, header, rows.
fn csv_text(cfg: &EffectiveConfig, extra: &[String], header: &str, rows: &[String]) -> String {
    let mut lines = cfg.provenance();
    lines.extend_from_slice(extra);
    let mut out = comment_block(&lines);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

pub fn run(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Train(a) => train(a, file),
        Command::Predict(a) => predict(a, file),
        Command::Simulate(a) => simulate(a, file),
        Command::Bench(a) => bench(a, file),
        Command::Crossval(a) => crossval(a, file),
        Command::Diagnose(a) => diagnose(a, file),
    }
}

/// Leave-one-out accuracies of the ensemble and of each component.
fn loo_accuracies(m: &FittedCrc) -> [f64; 3] {
    let truth = m.labels().signs();
    let pairs = m.loo_pairs();
    let n = truth.len() as f64;
    let rate = |f: &dyn Fn(usize) -> i8| (0..truth.len()).filter(|&i| f(i) == truth[i]).count() as f64 / n;
    [
        m.loo_accuracy(),
        rate(&|i| m.sparse_model().classify(pairs[[i, 1]])),
        rate(&|i| m.latent_model().classify(pairs[[i, 0]])),
    ]
}

fn train(a: TrainArgs, file: Option<&Path>) -> Result<()> {
    let mut flags = a.data.flags();
    flags.extend(a.fit.flags());
    let s = Settings::resolve(&keys(&[&DATA_KEYS, &[("grid", None), ("features", None)]]), file, &flags)?;
    let ds = a.data.load(&s)?;
    let model = fit_crc(ds.matrix, &ds.labels, &crc_config(&s)?)?;

    let mut bytes = Vec::new();
    model_file::write_model(&model, &mut bytes)?;
    atomic_write(&a.model_out, &bytes)?;
    log::info!("wrote model to {}", a.model_out.display());

    if let Some(report) = &a.report {
        let meta = model.meta();
        let [loo, loo_s, loo_l] = loo_accuracies(&model);
        let mut rows = vec![
            format!("n_train,,{}", model.n_train()),
            format!("n_features,,{}", model.n_features()),
            format!("chosen_n,,{}", model.chosen_n()),
            format!("lambda,,{}", model.lambda()),
            format!("b0,,{}", meta.intercept),
            format!("b1,,{}", meta.sparse_coef),
            format!("b2,,{}", meta.latent_coef),
            format!("loo_accuracy_crc,,{loo}"),
            format!("loo_accuracy_crc_s,,{loo_s}"),
            format!("loo_accuracy_crc_l,,{loo_l}"),
        ];
        let trace = model.trace();
        for (nf, e) in trace.grid.iter().zip(&trace.estimated_errors) {
            rows.push(format!("estimated_error,{nf},{e}"));
        }
        let extra = [format!("labels -1={} +1={}", ds.mapping.negative, ds.mapping.positive)];
        let text = csv_text(&s.effective(), &extra, "quantity,n_features,value", &rows);
        atomic_write(report, text.as_bytes())?;
    }
    Ok(())
}

fn predict(a: PredictArgs, file: Option<&Path>) -> Result<()> {
    let s = Settings::resolve(&[], file, &[])?;
    let bytes = std::fs::read(&a.model).map_err(|e| CliError::io(&a.model, e))?;
    let model = model_file::from_bytes(&bytes)?;
    let m = load_matrix(&a.data)?;
    let preds = model.predict_batch(m.values.view())?;
    let rows: Vec<String> = m
        .sample_ids
        .iter()
        .zip(&preds)
        .map(|(id, p)| format!("{id},{},{},{},{}", p.label, p.latent_score, p.sparse_score, p.combined_score))
        .collect();
    let text = csv_text(&s.effective(), &[], "sample_id,label,latent_score,sparse_score,combined_score", &rows);
    atomic_write(&a.out, text.as_bytes())
}

fn simulate(a: SimulateArgs, file: Option<&Path>) -> Result<()> {
    let defaults = [
        ("kind", Some("correlated")),
        ("n", Some("100")),
        ("p", Some("2000")),
        ("seed", Some("1")),
        ("replicate", Some("0")),
        ("sigma", Some("1")),
    ];
    let flags =
        [("kind", a.kind), ("n", a.n), ("p", a.p), ("seed", a.seed), ("replicate", a.replicate), ("sigma", a.sigma)];
    let s = Settings::resolve(&defaults, file, &flags)?;
    let kind: ModelKind = s.require("kind")?;
    let mut cfg = SimConfig::new(kind, s.require("n")?, s.require("p")?).with_seed(s.require("seed")?);
    cfg.sigma = s.require("sigma")?;
    let ds = Population::new(&cfg, s.require("replicate")?)?.train()?;

    let n = ds.z.nrows();
    let sample_ids: Vec<String> = (0..n).map(|i| format!("s{:0w$}", i + 1, w = digits(n))).collect();
    let feature_ids: Vec<String> = (0..cfg.p).map(|j| format!("f{:0w$}", j + 1, w = digits(cfg.p))).collect();
    let matrix = Matrix { values: ds.z, sample_ids, feature_ids };
    write_matrix(&a.out, &matrix)?;
    let rows: Vec<String> = matrix.sample_ids.iter().zip(ds.t.signs()).map(|(id, t)| format!("{id},{t}")).collect();
    let text = csv_text(&s.effective(), &[], "sample_id,label", &rows);
    atomic_write(&a.labels_out, text.as_bytes())
}

fn digits(n: usize) -> usize {
    n.to_string().len()
}

fn bench(a: BenchArgs, file: Option<&Path>) -> Result<()> {
    let defaults = [
        ("models", Some("simple,uncorrelated,correlated")),
        ("ns", Some("50,100,200")),
        ("p", Some("20000")),
        ("replicates", Some("20")),
        ("test_size", Some("1000")),
        ("seed", Some("1")),
        ("classifiers", Some("CRC,CRC-S,CRC-L,DLDA")),
        ("alpha_mode", Some("redraw")),
        ("grid", None),
    ];
    let flags = [
        ("models", a.models),
        ("ns", a.ns),
        ("p", a.p),
        ("replicates", a.replicates),
        ("test_size", a.test_size),
        ("seed", a.seed),
        ("classifiers", a.classifiers),
        ("alpha_mode", a.alpha_mode),
        ("grid", a.grid),
    ];
    let s = Settings::resolve(&defaults, file, &flags)?;
    let models: Vec<ModelKind> = s.list("models")?.unwrap_or_default();
    let ns: Vec<usize> = s.list("ns")?.unwrap_or_default();
    let p: usize = s.require("p")?;
    let alpha_mode = match s.raw("alpha_mode").unwrap_or("redraw") {
        "redraw" => AlphaMode::Redraw,
        "fixed" => AlphaMode::Fixed,
        other => return Err(CliError::Usage(format!("alpha_mode must be redraw or fixed, got '{other}'"))),
    };
    let cfg = BenchConfig {
        cells: models.iter().flat_map(|&m| ns.iter().map(move |&n| (m, n, p))).collect(),
        replicates: s.require("replicates")?,
        test_size: s.require("test_size")?,
        classifiers: s.list::<Classifier>("classifiers")?.unwrap_or_default(),
        seed: s.require("seed")?,
        alpha_mode,
        crc: crc_config(&s)?,
    };
    if cfg.cells.is_empty() || cfg.classifiers.is_empty() {
        return Err(CliError::Usage("bench needs at least one model, size and classifier".into()));
    }
    let result = run_benchmark(&cfg)?;
    for f in &result.failures {
        log::warn!("{} n={} {} replicate {}: {}", f.model, f.n, f.classifier, f.replicate, f.message);
    }
    let mut comments = s.effective().provenance();
    comments.extend(provenance_lines(&cfg));
    let mut records = Vec::new();
    write_records_csv(&mut records, &result, &comments).map_err(|e| CliError::io(&a.records, e))?;
    let mut summary = Vec::new();
    write_summary_csv(&mut summary, &result, &comments).map_err(|e| CliError::io(&a.summary, e))?;
    atomic_write(&a.records, &records)?;
    atomic_write(&a.summary, &summary)
}

/// Test-set accuracies of one split, in [`Classifier::ALL`] order, with the
/// selected feature counts.
fn evaluate_split(
    x: &Array2<f64>,
    t: &[i8],
    train: &[usize],
    test: &[usize],
    config: &CrcConfig,
) -> Result<Vec<(f64, Option<usize>)>> {
    let xt = x.select(Axis(0), train);
    let tt = LabelVector::new(&train.iter().map(|&i| t[i]).collect::<Vec<_>>())?;
    let xs = x.select(Axis(0), test);
    let truth: Vec<i8> = test.iter().map(|&i| t[i]).collect();
    let rate = |labels: Vec<i8>| labels.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;

    let model = fit_crc(xt.clone(), &tt, config)?;
    let preds = model.predict_batch(xs.view())?;
    let baseline = fit_dlda_baseline(xt, &tt, config.grid.as_deref())?;
    let nsel = Some(model.chosen_n());
    Ok(vec![
        (rate(preds.iter().map(|p| p.label).collect()), nsel),
        (rate(preds.iter().map(|p| model.sparse_label(p)).collect()), nsel),
        (rate(preds.iter().map(|p| model.latent_label(p)).collect()), None),
        (rate(baseline.predict_batch(xs.view())?), Some(baseline.trace.chosen_n)),
    ])
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt() / k.sqrt())
}

fn crossval(a: CrossvalArgs, file: Option<&Path>) -> Result<()> {
    let mut flags = a.data.flags();
    flags.extend(a.fit.flags());
    flags.extend([("splits", a.splits), ("frac", a.frac), ("seed", a.seed)]);
    let own = [("grid", None), ("features", None), ("splits", Some("200")), ("frac", Some("0.8")), ("seed", Some("1"))];
    let s = Settings::resolve(&keys(&[&DATA_KEYS, &own]), file, &flags)?;
    let ds = a.data.load(&s)?;
    let config = crc_config(&s)?;
    let splits: u64 = s.require("splits")?;
    let frac: f64 = s.require("frac")?;
    let seed: u64 = s.require("seed")?;
    if splits == 0 {
        return Err(CliError::Usage("splits must be positive".into()));
    }
    let t = ds.labels.signs();
    let plans = (0..splits)
        .map(|r| grouped_balanced_split(&t, ds.group_ids.as_deref(), frac, seed, r))
        .collect::<Result<Vec<_>>>()?;
    let results = plans
        .par_iter()
        .map(|plan| evaluate_split(&ds.matrix, &t, &plan.train, &plan.test, &config))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (plan, res) in plans.iter().zip(&results) {
        for (c, (acc, nsel)) in Classifier::ALL.iter().zip(res) {
            let nsel = nsel.map(|v| v.to_string()).unwrap_or_default();
            rows.push(format!("{},{},{},{c},{acc},{nsel}", plan.replicate, plan.train.len(), plan.test.len()));
        }
    }
    let effective = s.effective();
    let text = csv_text(&effective, &[], "split,n_train,n_test,classifier,accuracy,n_features_selected", &rows);
    atomic_write(&a.per_split, text.as_bytes())?;

    let mut agg = Vec::new();
    for (k, c) in Classifier::ALL.iter().enumerate() {
        let accs: Vec<f64> = results.iter().map(|r| r[k].0).collect();
        let (mean, se) = mean_and_se(&accs);
        agg.push(format!("{c},{splits},{mean},{se}"));
    }
    let text = csv_text(&effective, &[], "classifier,splits,mean_accuracy,std_error", &agg);
    atomic_write(&a.aggregate, text.as_bytes())
}

fn diagnose(a: DiagnoseArgs, file: Option<&Path>) -> Result<()> {
    let s = Settings::resolve(&[("k", Some("10"))], file, &[("k", a.k)])?;
    let m = load_matrix(&a.data)?;
    let spec = pct_var_explained(m.values.view(), s.require("k")?)?;
    let total: f64 = spec.eigenvalues.iter().sum();
    let rows: Vec<String> = spec
        .eigenvalues
        .iter()
        .zip(spec.cumulative_percent())
        .enumerate()
        .map(|(i, (v, c))| format!("{},{v},{},{c}", i + 1, 100.0 * v / total))
        .collect();
    let mut summary = String::new();
    let _ = write!(summary, "top {} components explain {}% of variance", spec.k, spec.percent);
    let text = csv_text(&s.effective(), &[summary], "component,eigenvalue,percent,cumulative_percent", &rows);
    atomic_write(&a.scree, text.as_bytes())?;

    if let Some(path) = &a.variance {
        let (mean, var) = feature_moments(m.values.view());
        let rows: Vec<String> =
            m.feature_ids.iter().zip(mean.iter().zip(&var)).map(|(f, (mu, v))| format!("{f},{mu},{v}")).collect();
        let text = csv_text(&s.effective(), &[], "feature_id,mean,variance", &rows);
        atomic_write(path, text.as_bytes())?;
    }
    Ok(())
}

/// Parses arguments and runs. Help and version requests print and succeed.
pub fn run_from_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                print!("{e}");
                Ok(())
            }
            _ => {
                let text = e.render().to_string();
                Err(CliError::Usage(text.trim_start_matches("error: ").trim_end().to_string()))
            }
        },
    }
}
