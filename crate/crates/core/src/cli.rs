//! Command-line front end: `generate`, `extract`, `classify`, `evaluate`.
//!
//! Every flag can also be given as a key in the `--config` file (hyphens and
//! underscores are interchangeable); flags win over config keys.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::classifier::{classify_batch, classify_batch_leave_one_out, LabeledFeatureSet};
use crate::config::KeyValues;
use crate::error::{Error, ErrorKind, Result};
use crate::features::{colstd_features, extract_edf_features_with, ClassLabel, ExtractOptions, FeatureVector};
use crate::io::{read_features_csv, read_patch, write_features_csv, write_posteriors_csv};
use crate::metrics::{repeated_evaluation, EvaluationConfig, EvaluationReport};
use crate::synth::{generate_dataset, read_manifest, GenerationConfig, ManifestRecord};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const FEATURES_CSV: &str = "features.csv";

#[derive(Debug, Parser)]
#[command(
    name = "defect-edf",
    version,
    about = "Spline-EDF features and NN-ball classification of fringe-pattern patches"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labeled synthetic patch dataset.
    Generate(GenerateArgs),
    /// Compute feature vectors for every patch of a dataset.
    Extract(ExtractArgs),
    /// Posterior probabilities of query features against reference features.
    Classify(ClassifyArgs),
    /// Repeated stratified split → classify → metrics.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub defect_free: Option<usize>,
    #[arg(long)]
    pub crater: Option<usize>,
    #[arg(long)]
    pub dirt: Option<usize>,
    /// Patch side.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, short = 'f')]
    pub frequency: Option<f64>,
    /// Radians, or a multiple of pi such as `3pi/2`.
    #[arg(long)]
    pub phase: Option<String>,
    #[arg(long)]
    pub pattern_width: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub strength_min: Option<f64>,
    #[arg(long)]
    pub strength_max: Option<f64>,
    #[arg(long)]
    pub radius_min: Option<f64>,
    #[arg(long)]
    pub radius_max: Option<f64>,
    /// `pgm` or `csv`.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureMethod {
    Edf,
    Colstd,
}

impl FromStr for FeatureMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "edf" => Ok(FeatureMethod::Edf),
            "colstd" => Ok(FeatureMethod::Colstd),
            other => Err(Error::Config(format!("unknown feature method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    #[arg(long, value_enum)]
    pub method: Option<FeatureMethod>,
    /// Override the frequency-based basis dimension.
    #[arg(long)]
    pub q: Option<usize>,
    /// Smooth columns instead of rows.
    #[arg(long)]
    pub transpose: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory containing `manifest.csv`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Labeled features CSV used as the reference set.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Features CSV to classify.
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Ignore reference points whose patch id equals the query's.
    #[arg(long)]
    pub leave_one_out: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Precomputed features CSV.
    #[arg(long, conflicts_with = "dataset")]
    pub features: Option<PathBuf>,
    /// Dataset directory; features are extracted first.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Classes merged into the defect class, comma separated.
    #[arg(long)]
    pub merge: Option<String>,
    #[command(flatten)]
    pub feature_args: FeatureArgs,
}

/// Config-file values with flags taking precedence.
struct Settings {
    kv: KeyValues,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let raw = match path {
            Some(p) => KeyValues::load(p).map_err(|e| match e {
                Error::Io { .. } => Error::Config(e.to_string()),
                other => other,
            })?,
            None => KeyValues::default(),
        };
        let mut kv = KeyValues::default();
        for (k, v) in raw.iter() {
            kv.set(k.replace('-', "_"), v);
        }
        Ok(Settings { kv })
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.kv.parsed(key),
        }
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.kv.parsed::<bool>(key)?.unwrap_or(false))
    }

    fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.pick(flag, key)?
            .ok_or_else(|| Error::Config(format!("missing required setting '--{}'", key.replace('_', "-"))))
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::InvalidInput(format!("{} is not a directory", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidInput(format!("{} does not exist", path.display())));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// generate

#[derive(Debug, Clone)]
pub struct GenerateRequest {
    pub config: GenerationConfig,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_generate(request: &GenerateRequest) -> Result<Vec<ManifestRecord>> {
    generate_dataset(&request.config, request.seed, &request.out)
}

fn resolve_generate(args: &GenerateArgs) -> Result<GenerateRequest> {
    let settings = Settings::load(args.common.config.as_deref())?;
    let seed = settings.require(args.common.seed, "seed")?;
    let out: PathBuf = settings.require(args.common.out.clone(), "out")?;

    let mut kv = settings.kv.clone();
    for key in ["seed", "out", "threads"] {
        kv.remove(key);
    }
    let mut overlay = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            kv.set(key, v);
        }
    };
    overlay("defect_free", args.defect_free.map(|v| v.to_string()));
    overlay("crater", args.crater.map(|v| v.to_string()));
    overlay("dirt", args.dirt.map(|v| v.to_string()));
    overlay("m", args.m.map(|v| v.to_string()));
    overlay("frequency", args.frequency.map(|v| v.to_string()));
    overlay("phase", args.phase.clone());
    overlay("pattern_width", args.pattern_width.map(|v| v.to_string()));
    overlay("noise_sigma", args.noise_sigma.map(|v| v.to_string()));
    overlay("strength_min", args.strength_min.map(|v| v.to_string()));
    overlay("strength_max", args.strength_max.map(|v| v.to_string()));
    overlay("radius_min", args.radius_min.map(|v| v.to_string()));
    overlay("radius_max", args.radius_max.map(|v| v.to_string()));
    overlay("format", args.format.clone());
    Ok(GenerateRequest {
        config: GenerationConfig::from_key_values(&kv)?,
        seed,
        out,
    })
}

// ---------------------------------------------------------------------------
// extract

#[derive(Debug, Clone)]
pub struct ExtractRequest {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub method: FeatureMethod,
    pub options: ExtractOptions,
}

/// Loads every manifest patch and computes its features, in manifest order.
pub fn extract_dataset(dataset: &Path, method: FeatureMethod, options: &ExtractOptions) -> Result<Vec<FeatureVector>> {
    require_dir(dataset)?;
    let manifest = read_manifest(dataset)?;
    manifest
        .par_iter()
        .map(|record| {
            let label = match record.label.as_str() {
                "" => None,
                s => Some(s.parse::<ClassLabel>()?),
            };
            let patch = read_patch(&dataset.join(&record.file))?
                .with_channel(record.f, record.psi)
                .with_label(label)
                .with_id(record.patch_id.clone());
            match method {
                FeatureMethod::Edf => extract_edf_features_with(&patch, options),
                FeatureMethod::Colstd => {
                    let oriented = if options.transpose { patch.transposed() } else { patch };
                    colstd_features(&oriented)
                }
            }
        })
        .collect()
}

pub fn cmd_extract(request: &ExtractRequest) -> Result<Vec<FeatureVector>> {
    let features = extract_dataset(&request.dataset, request.method, &request.options)?;
    ensure_parent(&request.out)?;
    write_features_csv(&request.out, &features)?;
    Ok(features)
}

fn resolve_feature_args(args: &FeatureArgs, settings: &Settings) -> Result<(FeatureMethod, ExtractOptions)> {
    let method = settings.pick(args.method, "method")?.unwrap_or(FeatureMethod::Edf);
    let options = ExtractOptions {
        q: settings.pick(args.q, "q")?,
        transpose: settings.flag(args.transpose, "transpose")?,
    };
    Ok((method, options))
}

fn resolve_extract(args: &ExtractArgs) -> Result<ExtractRequest> {
    let settings = Settings::load(args.common.config.as_deref())?;
    let (method, options) = resolve_feature_args(&args.features, &settings)?;
    let dataset: PathBuf = settings.require(args.dataset.clone(), "dataset")?;
    require_dir(&dataset)?;
    Ok(ExtractRequest {
        dataset,
        out: settings.require(args.common.out.clone(), "out")?,
        method,
        options,
    })
}

// ---------------------------------------------------------------------------
// classify

#[derive(Debug, Clone)]
pub struct ClassifyRequest {
    pub reference: PathBuf,
    pub query: PathBuf,
    pub out: PathBuf,
    pub leave_one_out: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifySummary {
    pub n_queries: usize,
    /// Fraction of labeled queries whose predicted class matches.
    pub accuracy: Option<f64>,
}

pub fn cmd_classify(request: &ClassifyRequest) -> Result<ClassifySummary> {
    let reference_set = read_features_csv(&request.reference)?;
    let queries = read_features_csv(&request.query)?;
    let reference = LabeledFeatureSet::from_entries(
        reference_set
            .iter()
            .map(|fv| {
                fv.label
                    .map(|l| (fv.tau.as_slice(), l, Some(fv.patch_id.clone())))
                    .ok_or_else(|| Error::InvalidInput(format!("reference '{}' has no label", fv.patch_id)))
            })
            .collect::<Result<Vec<_>>>()?,
    )?;

    let posteriors = if request.leave_one_out {
        let q: Vec<(String, &[f64])> = queries
            .iter()
            .map(|fv| (fv.patch_id.clone(), fv.tau.as_slice()))
            .collect();
        classify_batch_leave_one_out(&reference, &q)?
    } else {
        let q: Vec<&[f64]> = queries.iter().map(|fv| fv.tau.as_slice()).collect();
        classify_batch(&reference, &q)?
    };

    let labeled: Vec<bool> = queries
        .iter()
        .zip(&posteriors)
        .filter_map(|(fv, p)| fv.label.map(|l| l == p.predicted))
        .collect();
    let accuracy =
        (!labeled.is_empty()).then(|| labeled.iter().filter(|&&ok| ok).count() as f64 / labeled.len() as f64);

    let rows: Vec<_> = queries
        .iter()
        .zip(posteriors)
        .map(|(fv, p)| (fv.patch_id.clone(), fv.label, p))
        .collect();
    ensure_parent(&request.out)?;
    write_posteriors_csv(&request.out, reference.classes(), &rows)?;
    Ok(ClassifySummary {
        n_queries: rows.len(),
        accuracy,
    })
}

fn resolve_classify(args: &ClassifyArgs) -> Result<ClassifyRequest> {
    let settings = Settings::load(args.common.config.as_deref())?;
    let reference: PathBuf = settings.require(args.reference.clone(), "reference")?;
    let query: PathBuf = settings.require(args.query.clone(), "query")?;
    require_file(&reference)?;
    require_file(&query)?;
    Ok(ClassifyRequest {
        reference,
        query,
        out: settings.require(args.common.out.clone(), "out")?,
        leave_one_out: settings.flag(args.leave_one_out, "leave_one_out")?,
    })
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone)]
pub enum FeatureSource {
    Features(PathBuf),
    Dataset {
        dir: PathBuf,
        method: FeatureMethod,
        options: ExtractOptions,
    },
}

#[derive(Debug, Clone)]
pub struct EvaluateRequest {
    pub source: FeatureSource,
    /// Output directory for `report.json`, `report.csv` and, when features
    /// are extracted on the fly, `features.csv`.
    pub out: PathBuf,
    pub train_fraction: f64,
    pub runs: usize,
    pub seed: u64,
    pub merge: Vec<ClassLabel>,
}

impl EvaluateRequest {
    pub fn new(source: FeatureSource, out: PathBuf, seed: u64) -> Self {
        EvaluateRequest {
            source,
            out,
            train_fraction: 0.7,
            runs: 10,
            seed,
            merge: vec![ClassLabel::Crater, ClassLabel::Dirt],
        }
    }
}

pub fn cmd_evaluate(request: &EvaluateRequest) -> Result<EvaluationReport> {
    if request.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    create_dir(&request.out)?;
    let features = match &request.source {
        FeatureSource::Features(path) => read_features_csv(path)?,
        FeatureSource::Dataset { dir, method, options } => {
            let features = extract_dataset(dir, *method, options)?;
            write_features_csv(&request.out.join(FEATURES_CSV), &features)?;
            features
        }
    };
    let mut config = EvaluationConfig::new(request.runs, request.seed);
    config.train_fraction = request.train_fraction;
    config.defect_classes = request.merge.clone();
    let report = repeated_evaluation(&features, &config)?;

    let json_path = request.out.join(REPORT_JSON);
    std::fs::write(&json_path, report.to_json()?).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = request.out.join(REPORT_CSV);
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    Ok(report)
}

pub fn parse_merge(text: &str) -> Result<Vec<ClassLabel>> {
    let mut labels = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<ClassLabel>().map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    labels.sort();
    labels.dedup();
    if labels.is_empty() {
        return Err(Error::Config("--merge needs at least one class".into()));
    }
    Ok(labels)
}

fn resolve_evaluate(args: &EvaluateArgs) -> Result<EvaluateRequest> {
    let settings = Settings::load(args.common.config.as_deref())?;
    let features: Option<PathBuf> = settings.pick(args.features.clone(), "features")?;
    let dataset: Option<PathBuf> = settings.pick(args.dataset.clone(), "dataset")?;
    let source = match (features, dataset) {
        (Some(f), None) => {
            require_file(&f)?;
            FeatureSource::Features(f)
        }
        (None, Some(dir)) => {
            require_dir(&dir)?;
            let (method, options) = resolve_feature_args(&args.feature_args, &settings)?;
            FeatureSource::Dataset { dir, method, options }
        }
        _ => return Err(Error::Config("give exactly one of --features or --dataset".into())),
    };
    let mut request = EvaluateRequest::new(
        source,
        settings.require(args.common.out.clone(), "out")?,
        settings.require(args.common.seed, "seed")?,
    );
    if let Some(f) = settings.pick(args.train_frac, "train_frac")? {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config("--train-frac must lie in (0, 1)".into()));
        }
        request.train_fraction = f;
    }
    if let Some(r) = settings.pick(args.runs, "runs")? {
        request.runs = r;
    }
    if let Some(m) = settings.pick::<String>(args.merge.clone(), "merge")? {
        request.merge = parse_merge(&m)?;
    }
    if request.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    Ok(request)
}

fn print_report(report: &EvaluationReport) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    println!("metric                  mean        se");
    for (name, summary) in &report.metrics {
        println!("{name:<22} {:>10} {:>10}", fmt(summary.mean), fmt(summary.se));
    }
}

// ---------------------------------------------------------------------------

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            init_threads(args.common.threads)?;
            let request = resolve_generate(&args)?;
            let records = cmd_generate(&request)?;
            println!("wrote {} patches to {}", records.len(), request.out.display());
        }
        Command::Extract(args) => {
            init_threads(args.common.threads)?;
            let request = resolve_extract(&args)?;
            let features = cmd_extract(&request)?;
            println!("wrote {} feature vectors to {}", features.len(), request.out.display());
        }
        Command::Classify(args) => {
            init_threads(args.common.threads)?;
            let request = resolve_classify(&args)?;
            let summary = cmd_classify(&request)?;
            match summary.accuracy {
                Some(a) => println!("classified {} queries, accuracy {a:.6}", summary.n_queries),
                None => println!("classified {} queries", summary.n_queries),
            }
        }
        Command::Evaluate(args) => {
            init_threads(args.common.threads)?;
            let request = resolve_evaluate(&args)?;
            let report = cmd_evaluate(&request)?;
            print_report(&report);
        }
    }
    Ok(())
}

pub fn exit_code(error: &Error) -> i32 {
    match error.kind() {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numeric => EXIT_NUMERIC,
    }
}

/// One-line JSON error record written to stderr on failure.
pub fn error_line(error: &Error) -> String {
    let kind = match error.kind() {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    };
    json!({ "error": kind, "exit_code": exit_code(error), "message": error.to_string() }).to_string()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}
