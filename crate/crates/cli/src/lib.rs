//! Command-line driver for the `selfgate` library.
//!
//! Every command is deterministic for a given config and seed: reruns
//! overwrite their outputs with identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use selfgate::eval::{sfm_category_analysis, CategoryTable, EvalError};
use selfgate::graph::synthetic::{gen_synthetic_kg, gen_synthetic_nc, write_kg, write_nc, KgParams, NcParams};
use selfgate::graph::{GraphError, Split};
use selfgate::trainer::{
    evaluate, link_records, load_checkpoint, restore, save_checkpoint, train, Checkpoint, CheckpointError,
    ConfigError, EpochRecord, EvalReport, RunConfig, TaskData, TrainError, TrainOutcome, Variant,
};

pub mod sweep;

pub use sweep::{run_sweep, SweepRow, SweepSpec};

/// Environment variable that replaces the seed of a loaded config.
pub const SEED_ENV: &str = "SELFGATE_SEED";

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Train(TrainError::Config(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Parser)]
#[command(name = "selfgate", version, about = "Self-filtering dual-representation GNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Train one model and write its checkpoint, metric log and report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train every (layers, variant, seed) combination and tabulate test metrics.
    Sweep(SweepArgs),
    /// Tabulate test entities by how often their representation passed the gate.
    AnalyzeSfm(AnalyzeArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Node-classification graph with planted class structure.
    Nc(GenNcArgs),
    /// Knowledge graph of rings with composed relations.
    Kg(GenKgArgs),
}

#[derive(Debug, Args)]
pub struct GenNcArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub homophily: Option<f64>,
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub avg_degree: Option<f64>,
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenKgArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub rings: Option<usize>,
    /// Extra random triples as a fraction of the rule triples.
    #[arg(long)]
    pub noise: Option<f64>,
}

/// Config file plus overrides, shared by `train` and `sweep`.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl ConfigArgs {
    /// File, then `SELFGATE_SEED`, then `--set` overrides in order.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.seed = seed.trim().parse().map_err(|_| ConfigError::Invalid {
                field: SEED_ENV.into(),
                message: format!("expected an unsigned integer, got `{seed}`"),
            })?;
        }
        for s in &self.sets {
            cfg.apply_override(s)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Base,
    Sfgnn,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Base => Variant::Base,
            VariantArg::Sfgnn => Variant::Sfgnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5])]
    pub layers: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["base", "sfgnn"])]
    pub variants: Vec<VariantArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory receiving `sfm_categories.csv` and `sfm_categories.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(GenCommand::Nc(a)) => cmd_gen_nc(&a),
        Command::Gen(GenCommand::Kg(a)) => cmd_gen_kg(&a),
        Command::Train(a) => {
            let mut cfg = a.config.resolve()?;
            if let Some(v) = a.variant {
                cfg.variant = v.into();
            }
            if let Some(out) = a.out {
                cfg.output = Some(out);
            }
            let report = cmd_train(&cfg)?;
            println!("{}", report.summary());
            Ok(())
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a.checkpoint, a.dataset.as_deref(), a.split.into())?;
            let json = to_json(&report);
            if let Some(out) = &a.out {
                write_file(out, &json)?;
            }
            print!("{json}");
            Ok(())
        }
        Command::Sweep(a) => {
            let base = a.config.resolve()?;
            let spec = SweepSpec {
                layers: a.layers,
                variants: a.variants.into_iter().map(Variant::from).collect(),
                seeds: a.seeds,
                base,
            };
            let rows = run_sweep(&spec, &a.out, a.jobs)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} runs, {failed} failed; table at {}", rows.len(), a.out.join(sweep::SWEEP_CSV).display());
            Ok(())
        }
        Command::AnalyzeSfm(a) => {
            let table = cmd_analyze_sfm(&a.checkpoint, a.dataset.as_deref(), &a.out)?;
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

pub fn cmd_gen_nc(a: &GenNcArgs) -> Result<(), CliError> {
    let d = NcParams::default();
    let params = NcParams {
        nodes: a.nodes.unwrap_or(d.nodes),
        classes: a.classes.unwrap_or(d.classes),
        homophily: a.homophily.unwrap_or(d.homophily),
        noise_fraction: a.noise_fraction.unwrap_or(d.noise_fraction),
        feature_dim: a.feature_dim.unwrap_or(d.feature_dim),
        avg_degree: a.avg_degree.unwrap_or(d.avg_degree),
        signal: a.signal.unwrap_or(d.signal),
        feature_noise: a.feature_noise.unwrap_or(d.feature_noise),
    };
    let data = gen_synthetic_nc(&params, a.seed).map_err(usage_if_params)?;
    write_nc(&a.out, &data, &params, a.seed)?;
    Ok(())
}

pub fn cmd_gen_kg(a: &GenKgArgs) -> Result<(), CliError> {
    let d = KgParams::default();
    let params = KgParams {
        entities: a.entities.unwrap_or(d.entities),
        relations: a.relations.unwrap_or(d.relations),
        rings: a.rings.unwrap_or(d.rings),
        noise: a.noise.unwrap_or(d.noise),
        rules: None,
    };
    let kg = gen_synthetic_kg(&params, a.seed).map_err(usage_if_params)?;
    write_kg(&a.out, &kg, &params, a.seed)?;
    Ok(())
}

fn usage_if_params(e: GraphError) -> CliError {
    match e {
        GraphError::InvalidParams(m) => CliError::Usage(m),
        other => other.into(),
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub seed: u64,
    pub layers: usize,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub valid: EvalReport,
    pub test: EvalReport,
}

impl TrainReport {
    pub fn summary(&self) -> String {
        let metric = if self.test.accuracy.is_some() { "accuracy" } else { "MRR" };
        format!(
            "{} L={} seed={}: test {metric} {:.4} (best epoch {})",
            self.variant.as_str(),
            self.layers,
            self.seed,
            self.test.primary(),
            self.best_epoch
        )
    }
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub(crate) fn metrics_jsonl(log: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub(crate) fn load_data(cfg: &RunConfig) -> Result<TaskData, CliError> {
    let path = cfg.dataset_path()?;
    Ok(TaskData::load(path, cfg.task)?)
}

/// Trains on already-loaded data and writes all artifacts into `dir`.
pub(crate) fn train_into(cfg: &RunConfig, data: &TaskData, dir: &Path) -> Result<TrainReport, CliError> {
    write_file(&dir.join(CONFIG_FILE), cfg.to_json() + "\n")?;
    let TrainOutcome { model, checkpoint, log } = match train(cfg, data) {
        Ok(outcome) => outcome,
        Err(TrainError::Divergence { epoch, checkpoint, log }) => {
            write_file(&dir.join(METRICS_FILE), metrics_jsonl(&log))?;
            save_checkpoint(&checkpoint, &dir.join(CHECKPOINT_FILE))?;
            return Err(TrainError::Divergence { epoch, checkpoint, log }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_file(&dir.join(METRICS_FILE), metrics_jsonl(&log))?;
    save_checkpoint(&checkpoint, &dir.join(CHECKPOINT_FILE))?;
    let report = TrainReport {
        variant: cfg.variant,
        seed: cfg.seed,
        layers: cfg.model.layers,
        best_epoch: checkpoint.epoch,
        best_valid: checkpoint.best_metric,
        valid: evaluate(&model, data, Split::Valid)?,
        test: evaluate(&model, data, Split::Test)?,
    };
    write_file(&dir.join(REPORT_FILE), to_json(&report))?;
    Ok(report)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    let dir = cfg.output.clone().ok_or(ConfigError::Missing("output"))?;
    let data = load_data(cfg)?;
    train_into(cfg, &data, &dir)
}

fn checkpoint_and_data(path: &Path, dataset: Option<&Path>) -> Result<(Checkpoint, TaskData), CliError> {
    let mut ckpt = load_checkpoint(path)?;
    if let Some(d) = dataset {
        ckpt.config.dataset = Some(d.to_path_buf());
    }
    let data = load_data(&ckpt.config)?;
    Ok((ckpt, data))
}

pub fn cmd_eval(path: &Path, dataset: Option<&Path>, split: Split) -> Result<EvalReport, CliError> {
    let (ckpt, data) = checkpoint_and_data(path, dataset)?;
    let model = restore(&ckpt, &data)?;
    Ok(evaluate(&model, &data, split)?)
}

pub const SFM_CSV: &str = "sfm_categories.csv";
pub const SFM_JSON: &str = "sfm_categories.json";

pub fn cmd_analyze_sfm(path: &Path, dataset: Option<&Path>, out: &Path) -> Result<CategoryTable, CliError> {
    let (ckpt, data) = checkpoint_and_data(path, dataset)?;
    let trace = ckpt
        .gate_trace
        .as_ref()
        .ok_or_else(|| CliError::Usage("no gate trace: the checkpoint was not trained with the sfgnn variant".into()))?;
    if data.kg().is_none() {
        return Err(CliError::Usage("gate analysis needs a link-prediction checkpoint".into()));
    }
    let model = restore(&ckpt, &data)?;
    let records = link_records(&model, &data, Split::Test)?;
    let table = sfm_category_analysis(trace, &records)?;
    write_file(&out.join(SFM_CSV), table.to_csv())?;
    write_file(&out.join(SFM_JSON), to_json(&table))?;
    Ok(table)
}
