//! Command-line interface. [`run`] parses arguments and returns the exit code.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::annotations::{DisagreementMethod, DEFAULT_MIN_ANNOTATORS};
use crate::conformal::{ClassMethod, RegMethod, RegOptions};
use crate::error::{Error, Result};
use crate::platform::engine::{join, CalibrationState, DatasetRef};
use crate::platform::ingest::{
    ingest_annotations, ingest_scores, sha256_hex, write_annotations_csv, write_scores_csv, DataSource,
    DatasetManifest, FileFormat, DATASET_SCHEMA_VERSION,
};
use crate::platform::persist::{load_calibration, persist_calibration};
use crate::platform::service::{port_from_env, serve, ServiceConfig, DEFAULT_PORT, ENV_DATA_DIR};
use crate::router::{Pipeline, RoutingPolicy};
use crate::scorer::toy::{predict_toy, train_toy, RegMode, ToyModelParams, TrainConfig, TrainSample};
use crate::simulator::{generate, split, SimConfig, RNG_ALGORITHM};
use crate::types::ScoredInstance;

#[derive(Debug, Parser)]
#[command(name = "comod", version, about = "Conformal routing of comments between automatic action and human review")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/cal/test dataset.
    Simulate(SimulateArgs),
    /// Validate annotation (and optionally score) files and write a manifest.
    Ingest(IngestArgs),
    /// Train the toy multitask scorer on features in a score file.
    TrainToy(TrainToyArgs),
    /// Calibrate classification and regression on labeled scores.
    Calibrate(CalibrateArgs),
    /// Route scored comments with a saved calibration.
    Route(RouteArgs),
    /// Compute the metrics report on labeled scores.
    Evaluate(EvaluateArgs),
    /// Run the HTTP moderation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    /// Force a file format instead of using the extension.
    #[arg(long)]
    pub format: Option<FileFormat>,
    #[arg(long, default_value_t = DEFAULT_MIN_ANNOTATORS)]
    pub min_annotators: usize,
    #[arg(long, default_value = "distance", value_parser = parse_method)]
    pub method: DisagreementMethod,
}

impl DataArgs {
    fn dataset(&self) -> DatasetRef {
        DatasetRef {
            annotations: self.annotations.clone(),
            scores: self.scores.clone(),
            format: self.format,
            min_annotators: self.min_annotators,
            method: self.method,
        }
    }
}

fn parse_method(s: &str) -> std::result::Result<DisagreementMethod, String> {
    match s.to_ascii_lowercase().as_str() {
        "distance" => Ok(DisagreementMethod::Distance),
        "entropy" => Ok(DisagreementMethod::Entropy),
        other => Err(format!("unknown disagreement method '{other}' (distance|entropy)")),
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n: Option<usize>,
    /// JSON simulator configuration; `--seed` and `--n` override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train, calibration and test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_fractions)]
    pub split: (f64, f64, f64),
}

fn parse_fractions(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<FileFormat>,
    #[arg(long, default_value_t = DEFAULT_MIN_ANNOTATORS)]
    pub min_annotators: usize,
    #[arg(long, default_value = "distance", value_parser = parse_method)]
    pub method: DisagreementMethod,
    /// Where to write the manifest; printed to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output model parameters (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mse")]
    pub reg_mode: RegMode,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score file whose features are re-scored with the trained model.
    /// Repeatable; pairs with `--rescore-out` in order.
    #[arg(long)]
    pub rescore: Vec<PathBuf>,
    #[arg(long)]
    pub rescore_out: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "lac")]
    pub class_method: ClassMethod,
    #[arg(long, default_value = "ar")]
    pub reg_method: RegMethod,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    #[arg(long, default_value = "com")]
    pub pipeline: Pipeline,
    /// Neighbours used by the residual model of normalized intervals.
    #[arg(long, default_value_t = RegOptions::default().knn_k)]
    pub knn_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub format: Option<FileFormat>,
    /// Decisions as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub state: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// TPR for the disagreement threshold; defaults by regression method.
    #[arg(long)]
    pub target_tpr: Option<f64>,
    /// Report as JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Holds the decision log and the default state document.
    #[arg(long, env = ENV_DATA_DIR, default_value = "comod-data")]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long)]
    pub eval_annotations: Option<PathBuf>,
    #[arg(long, requires = "eval_annotations")]
    pub eval_scores: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Overrides `COMOD_PORT`.
    #[arg(long)]
    pub port: Option<u16>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::TrainToy(a) => cmd_train_toy(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Route(a) => cmd_route(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?);
    Ok(())
}

/// Generates a dataset and writes `{train,cal,test}.annotations.csv`,
/// `{train,cal,test}.scores.csv` and `manifest.json` under `dir`.
pub fn simulate_dataset(dir: &Path, config: &SimConfig, fractions: (f64, f64, f64)) -> Result<DatasetManifest> {
    let items = generate(config)?;
    let n = items.len();
    let (train, cal, test) = split(items, fractions, config.seed)?;
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    for (name, part) in [("train", &train), ("cal", &cal), ("test", &test)] {
        let ann = format!("{name}.annotations.csv");
        let sco = format!("{name}.scores.csv");
        let records: Vec<_> = part.iter().map(|s| s.record.clone()).collect();
        let scores: Vec<ScoredInstance> = part.iter().map(|s| s.scored()).collect();
        write_annotations_csv(&dir.join(&ann), &records)?;
        write_scores_csv(&dir.join(&sco), &scores)?;
        for f in [ann, sco] {
            let hash = sha256_hex(&fs::read(dir.join(&f))?);
            files.insert(f, hash);
        }
    }
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        source: DataSource::Simulator,
        n,
        annotation_method: config.method,
        min_annotators: config.annotators_min,
        rng_algorithm: Some(RNG_ALGORITHM.to_string()),
        seed: Some(config.seed),
        checksum: DatasetManifest::combined_checksum(&files),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => serde_json::from_slice(&fs::read(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => SimConfig::default(),
    };
    config.seed = a.seed;
    if let Some(n) = a.n {
        config.n = n;
    }
    let m = simulate_dataset(&a.out, &config, a.split)?;
    println!("wrote {} simulated comments to {} (seed {})", m.n, a.out.display(), a.seed);
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let (labeled, mut manifest) = ingest_annotations(&a.annotations, a.format, a.min_annotators, a.method)?;
    if let Some(scores) = &a.scores {
        let s = ingest_scores(scores, a.format)?;
        let joined = join(labeled, s)?;
        manifest.n = joined.len();
        let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        manifest.files.insert(name(&a.annotations), sha256_hex(&fs::read(&a.annotations)?));
        manifest.files.insert(name(scores), sha256_hex(&fs::read(scores)?));
        manifest.checksum = DatasetManifest::combined_checksum(&manifest.files);
    }
    match &a.out {
        Some(p) => {
            write_json(p, &manifest)?;
            println!("{} comments ingested; manifest written to {}", manifest.n, p.display());
        }
        None => print_json(&manifest)?,
    }
    Ok(())
}

fn cmd_train_toy(a: TrainToyArgs) -> Result<()> {
    if a.rescore.len() != a.rescore_out.len() {
        return Err(Error::Config("each --rescore needs a matching --rescore-out".into()));
    }
    let items = a.data.dataset().load()?;
    let data = items
        .iter()
        .map(|l| {
            let features = l.item.reg.features.clone().ok_or_else(|| {
                Error::schema(None, format!("item '{}' has no f_* feature columns to train on", l.id))
            })?;
            Ok(TrainSample {
                features,
                y: l.item.label,
                d: l.item.d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        reg_mode: a.reg_mode,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        hidden: a.hidden,
        seed: a.seed,
        ..Default::default()
    };
    let params = train_toy(&data, &cfg)?;
    write_json(&a.out, &params)?;
    println!("trained on {} comments; model written to {}", data.len(), a.out.display());

    for (input, output) in a.rescore.iter().zip(&a.rescore_out) {
        let rescored = rescore(&params, &ingest_scores(input, a.data.format)?)?;
        write_scores_csv(output, &rescored)?;
        println!("re-scored {} comments into {}", rescored.len(), output.display());
    }
    Ok(())
}

/// Replaces model outputs with the toy model's predictions on each row's features.
pub fn rescore(params: &ToyModelParams, scores: &[ScoredInstance]) -> Result<Vec<ScoredInstance>> {
    scores
        .iter()
        .map(|s| {
            let x = s
                .reg
                .features
                .as_deref()
                .ok_or_else(|| Error::schema(None, format!("item '{}' has no features", s.id)))?;
            let (probs, reg) = predict_toy(params, x)?;
            Ok(ScoredInstance {
                id: s.id.clone(),
                probs,
                reg,
            })
        })
        .collect()
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let dataset = a.data.dataset();
    let items: Vec<_> = dataset.load()?.into_iter().map(|l| l.item).collect();
    let policy = RoutingPolicy::new(a.gamma, a.alpha, a.pipeline)?;
    let opts = RegOptions {
        knn_k: a.knn_k,
        ..Default::default()
    };
    let state = CalibrationState::calibrate(&items, a.class_method, a.reg_method, policy, opts)?.with_dataset(dataset);
    persist_calibration(&state, &a.out)?;
    println!(
        "calibrated {} / {} on {} comments at alpha {}; state written to {}",
        a.class_method.name(),
        a.reg_method.name(),
        items.len(),
        a.alpha,
        a.out.display()
    );
    Ok(())
}

fn cmd_route(a: RouteArgs) -> Result<()> {
    let state = load_calibration(&a.state)?;
    let scores = ingest_scores(&a.scores, a.format)?;
    let (decisions, summary) = state.route(&scores)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(&a.out)?);
    for d in &decisions {
        let line = serde_json::to_string(d).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    print_json(&summary)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let state = load_calibration(&a.state)?;
    let items = a.data.dataset().load()?;
    let report = state.evaluate(&items, a.target_tpr)?;
    write_json(&a.out, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        data_dir: a.data_dir,
        state_path: a.state,
        eval: match (a.eval_annotations, a.eval_scores) {
            (Some(ann), Some(sco)) => Some(DatasetRef::new(ann, sco)),
            (Some(_), None) => return Err(Error::Config("--eval-annotations needs --eval-scores".into())),
            _ => None,
        },
    };
    let port = match a.port {
        Some(p) => p,
        None => port_from_env(DEFAULT_PORT)?,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(config, SocketAddr::new(a.host, port)))
}
