//! The `latentode` command line: `generate`, `train` and `eval`.
//!
//! Everything is written below one output root (`--out`, else
//! `$LATENTODE_OUT`, else `./out`):
//!
//! ```text
//! data/<experiment>/            meta.csv times.csv values.csv manifest.toml
//! runs/<experiment>/<model>/    checkpoint.lode train_log.csv config.toml
//! eval/                         rmse_table.csv timing.csv recon_*.csv latent_*.csv
//! ```
//!
//! Settings come from an optional TOML run file (`--config`) overridden by
//! flags. Each command writes the fully resolved run file next to its
//! outputs, so passing it back with `--config` repeats the run exactly.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineConfig;
use crate::data::{gen_spirals, gen_springs, gen_synthetic_solar, load_solar_csv, read_bundle, split, subsample, write_bundle, Dataset, SpringKind, Split, Subsample, SOLAR_STEPS};
use crate::error::{Error, Result};
use crate::eval::{self, export_reconstruction, extrapolation_grid, latent_scatter, reconstruction_csv, rmse_table, timing_report, ExperimentRun, Fitted, TimingInput};
use crate::latentode::LatentOdeConfig;
use crate::train::{self, derive_seed, format_log_row, load_checkpoint, read_log, ModelConfig, ModelKind, Trainer, TrainConfig, LOG_HEADER, STREAM_DATA, STREAM_SPLIT};

pub const GENERATOR_VERSION: &str = concat!("latentode ", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_SPIRAL_NOISE: f64 = 0.05;
pub const CHECKPOINT_FILE: &str = "checkpoint.lode";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Parser)]
#[command(name = "latentode", version, about = "Latent-ODE VAE experiments: generate data, train, evaluate")]
pub struct Cli {
    /// Output root [default: ./out]
    #[arg(long, global = true, env = "LATENTODE_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or ingest) a dataset bundle with its train/val/test split.
    Generate(GenerateArgs),
    /// Train a latent ODE or the LSTM baseline on a generated dataset.
    Train(TrainArgs),
    /// Write RMSE, timing, reconstruction and latent-space reports.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML run file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset family
    #[arg(long, value_enum)]
    pub kind: Option<DataKind>,
    /// Number of sequences [default: 500 spirals, 5000 springs, 68 solar days]
    #[arg(long)]
    pub n: Option<usize>,
    /// Spring kinds to mix, e.g. 1,3
    #[arg(long, value_delimiter = ',')]
    pub mix: Option<Vec<u8>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spiral coordinate noise standard deviation [default: 0.05]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Number of leading time steps used for training [default: 200, 48 for solar]
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Solar CSV (`day,t0..t47`); without it a synthetic stand-in is generated
    #[arg(long)]
    pub solar_csv: Option<PathBuf>,
    /// Experiment name [default: spiral, spring<mix>, solar]
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experiment whose dataset to train on
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Architecture preset: `paper` sizes or the small `desk` sizes
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Save a checkpoint every this many epochs (0 = only at the end)
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint; `--epochs` is the total to reach
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Experiments to report [default: every generated dataset]
    #[arg(long, value_delimiter = ',')]
    pub experiments: Option<Vec<String>>,
    /// Test-split RMSE table
    #[arg(long)]
    pub rmse: bool,
    /// Mean seconds per epoch from the training logs
    #[arg(long)]
    pub timing: bool,
    /// PCA projection of test-set posterior means
    #[arg(long)]
    pub latent: bool,
    /// Reconstruction exports for `--samples`
    #[arg(long)]
    pub reconstruct: bool,
    /// Extrapolation range as fractions of the observed span, e.g. -0.5,1.5
    #[arg(long, allow_hyphen_values = true)]
    pub extrapolate: Option<String>,
    /// Positions within the test split to export
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub samples: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Spiral,
    Spring,
    Solar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelArg {
    Node,
    Baseline,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Node => ModelKind::Node,
            ModelArg::Baseline => ModelKind::Baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub kind: DataKind,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default)]
    pub mix: Option<Vec<u8>>,
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub solar_csv: Option<PathBuf>,
}

impl DataSpec {
    fn new(kind: DataKind) -> Self {
        Self {
            kind,
            n: None,
            seed: 0,
            noise: None,
            mix: None,
            subsample: None,
            solar_csv: None,
        }
    }

    /// Fills every defaulted field so the spec documents the data exactly.
    pub fn resolve(mut self) -> Result<Self> {
        let (n, sub) = match self.kind {
            DataKind::Spiral => (500, 200),
            DataKind::Spring => (5000, 200),
            DataKind::Solar => (68, SOLAR_STEPS),
        };
        self.n.get_or_insert(n);
        self.subsample.get_or_insert(sub);
        match self.kind {
            DataKind::Spiral => {
                self.noise.get_or_insert(DEFAULT_SPIRAL_NOISE);
                self.mix = None;
            }
            DataKind::Spring => {
                let mut mix = self.mix.take().unwrap_or_else(|| vec![1, 2, 3]);
                mix.sort_unstable();
                mix.dedup();
                for &k in &mix {
                    SpringKind::from_index(k).map_err(|e| Error::Config(e.to_string()))?;
                }
                if mix.is_empty() {
                    return Err(Error::Config("spring mix is empty".into()));
                }
                self.mix = Some(mix);
                self.noise = None;
            }
            DataKind::Solar => {
                self.noise = None;
                self.mix = None;
            }
        }
        if self.solar_csv.is_some() && self.kind != DataKind::Solar {
            return Err(Error::Config("solar_csv only applies to solar data".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("data seed must be below 2^63".into()));
        }
        Ok(self)
    }

    pub fn default_name(&self) -> String {
        match self.kind {
            DataKind::Spiral => "spiral".into(),
            DataKind::Solar => "solar".into(),
            DataKind::Spring => {
                let mix = self.mix.as_deref().unwrap_or(&[1, 2, 3]);
                format!("spring{}", mix.iter().map(|k| k.to_string()).collect::<String>())
            }
        }
    }

    /// Full-length dataset with its split assigned.
    pub fn build(&self) -> Result<Dataset> {
        let n = self.n.expect("resolved");
        let seed = derive_seed(self.seed, STREAM_DATA);
        let ds = match self.kind {
            DataKind::Spiral => gen_spirals(n, 300, self.noise.expect("resolved"), seed),
            DataKind::Spring => {
                let kinds = self.mix.as_deref().expect("resolved").iter().map(|&k| SpringKind::from_index(k)).collect::<Result<Vec<_>>>()?;
                gen_springs(&kinds, n, seed)
            }
            DataKind::Solar => match &self.solar_csv {
                Some(path) => load_solar_csv(path),
                None => gen_synthetic_solar(n, seed),
            },
        };
        // Generator preconditions (odd spiral counts and the like) are spec errors.
        let ds = ds.map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::Config(msg),
            other => other,
        })?;
        if ds.num_data() < 5 {
            return Err(Error::Config(format!("need at least 5 sequences to split, got {}", ds.num_data())));
        }
        split(&ds, derive_seed(self.seed, STREAM_SPLIT))
    }
}

/// The run file. Model settings start from a preset; any other key in
/// `[model]` overrides the matching architecture field.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub data: Option<DataSpec>,
    #[serde(default)]
    pub model: Option<toml::Table>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn load_opt(path: Option<&PathBuf>) -> Result<Self> {
        path.map(|p| Self::load(p)).transpose().map(Option::unwrap_or_default)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Builds the model configuration from a `[model]` table.
pub fn resolve_model(table: &toml::Table, experiment: &str) -> Result<ModelConfig> {
    let mut rest = table.clone();
    let kind = match rest.remove("kind") {
        Some(toml::Value::String(k)) => k,
        Some(_) => return Err(Error::Config("model.kind must be a string".into())),
        None => return Err(Error::Config("model.kind is required (node or baseline)".into())),
    };
    let preset = match rest.remove("preset") {
        Some(toml::Value::String(p)) => p,
        Some(_) => return Err(Error::Config("model.preset must be a string".into())),
        None => "paper".into(),
    };
    let merge = |mut base: toml::Table| {
        base.extend(rest.clone());
        toml::Value::Table(base)
    };
    let bad = |e: toml::de::Error| Error::Config(format!("[model]: {e}"));
    match kind.as_str() {
        "node" => {
            let base = match preset.as_str() {
                "paper" => LatentOdeConfig::preset(family(experiment))?,
                "desk" => LatentOdeConfig::desk(),
                other => return Err(Error::Config(format!("unknown preset `{other}` (paper or desk)"))),
            };
            let cfg: LatentOdeConfig = merge(to_table(&base)?).try_into().map_err(bad)?;
            cfg.validate()?;
            Ok(ModelConfig::Node(cfg))
        }
        "baseline" => {
            let base = match preset.as_str() {
                "paper" => BaselineConfig::default(),
                "desk" => BaselineConfig::desk(),
                other => return Err(Error::Config(format!("unknown preset `{other}` (paper or desk)"))),
            };
            let cfg: BaselineConfig = merge(to_table(&base)?).try_into().map_err(bad)?;
            cfg.validate()?;
            Ok(ModelConfig::Baseline(cfg))
        }
        other => Err(Error::Config(format!("unknown model kind `{other}` (node or baseline)"))),
    }
}

fn to_table(value: &impl Serialize) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| Error::Config(e.to_string()))
}

/// Preset family of an experiment name.
fn family(experiment: &str) -> &'static str {
    if experiment.starts_with("spiral") {
        "spiral"
    } else if experiment.starts_with("solar") {
        "solar"
    } else {
        "spring"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub generator: String,
    pub experiment: String,
    pub seed: u64,
    pub num_data: usize,
    pub seq_len: usize,
    pub subsample: usize,
    pub data: DataSpec,
}

/// Paths of one output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(out: Option<PathBuf>) -> Self {
        Self {
            root: out.unwrap_or_else(|| PathBuf::from("out")),
        }
    }

    pub fn data_dir(&self, experiment: &str) -> PathBuf {
        self.root.join("data").join(experiment)
    }

    pub fn run_dir(&self, experiment: &str, model: ModelKind) -> PathBuf {
        self.root.join("runs").join(experiment).join(model.as_str())
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn checkpoint(&self, experiment: &str, model: ModelKind) -> PathBuf {
        self.run_dir(experiment, model).join(CHECKPOINT_FILE)
    }

    pub fn log(&self, experiment: &str, model: ModelKind) -> PathBuf {
        self.run_dir(experiment, model).join(LOG_FILE)
    }

    /// Dataset and manifest of a generated experiment.
    pub fn load_data(&self, experiment: &str) -> Result<(Dataset, Manifest)> {
        let dir = self.data_dir(experiment);
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(Error::MissingDataset(dir.display().to_string()));
        }
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            row: None,
            msg: e.to_string(),
        })?;
        Ok((read_bundle(&dir)?, manifest))
    }

    fn experiments(&self) -> Result<Vec<String>> {
        let dir = self.root.join("data");
        let mut names = Vec::new();
        if let Ok(entries) = fs::read_dir(&dir) {
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                if entry.path().join(MANIFEST_FILE).is_file() {
                    names.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
        }
        names.sort();
        Ok(names)
    }
}

/// 0 success, 1 runtime failure, 2 usage or configuration error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::MissingCheckpoint(_) | Error::MissingDataset(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let layout = Layout::new(cli.out);
    match cli.command {
        Command::Generate(args) => cmd_generate(&layout, &args).map(drop),
        Command::Train(args) => cmd_train(&layout, &args).map(drop),
        Command::Eval(args) => cmd_eval(&layout, &args).map(drop),
    }
}

/// Writes the dataset bundle and manifest; returns the experiment name.
pub fn cmd_generate(layout: &Layout, args: &GenerateArgs) -> Result<String> {
    let file = RunConfig::load_opt(args.config.as_ref())?;
    let mut spec = match (args.kind, file.data) {
        (Some(kind), Some(d)) if d.kind == kind => d,
        (Some(kind), _) => DataSpec::new(kind),
        (None, Some(d)) => d,
        (None, None) => return Err(Error::Config("--kind is required (spiral, spring or solar)".into())),
    };
    spec.n = args.n.or(spec.n);
    spec.seed = args.seed.unwrap_or(spec.seed);
    spec.noise = args.noise.or(spec.noise);
    spec.mix = args.mix.clone().or(spec.mix);
    spec.subsample = args.subsample.or(spec.subsample);
    spec.solar_csv = args.solar_csv.clone().or(spec.solar_csv);
    let spec = spec.resolve()?;
    let experiment = args.name.clone().or(file.experiment).unwrap_or_else(|| spec.default_name());
    check_name(&experiment)?;

    let ds = spec.build()?;
    let sub = spec.subsample.expect("resolved");
    if sub == 0 || sub > ds.seq_len() {
        return Err(Error::Config(format!("subsample {sub} must lie in 1..={}", ds.seq_len())));
    }
    let dir = layout.data_dir(&experiment);
    write_bundle(&dir, &ds)?;
    let manifest = Manifest {
        generator: GENERATOR_VERSION.into(),
        experiment: experiment.clone(),
        seed: spec.seed,
        num_data: ds.num_data(),
        seq_len: ds.seq_len(),
        subsample: sub,
        data: spec.clone(),
    };
    write_toml(&dir.join(MANIFEST_FILE), &manifest)?;
    let resolved = RunConfig {
        experiment: Some(experiment.clone()),
        data: Some(spec),
        ..RunConfig::default()
    };
    eval::write_text(&dir.join(CONFIG_FILE), &resolved.to_toml()?)?;
    let (train, val, test) = ds.split_counts().expect("split assigned");
    println!(
        "{experiment}: {} sequences x {} steps ({} observed), split {train}/{val}/{test} -> {}",
        ds.num_data(),
        ds.seq_len(),
        sub,
        dir.display()
    );
    Ok(experiment)
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(Error::Config(format!("experiment name `{name}` must be non-empty [A-Za-z0-9_-]")));
    }
    Ok(())
}

fn write_toml(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    eval::write_text(path, &text)
}

/// Observed prefix used for training and evaluation.
pub fn observed(ds: &Dataset, manifest: &Manifest) -> Result<Subsample> {
    subsample(ds, manifest.subsample)
}

/// Trains one model; returns the run directory.
pub fn cmd_train(layout: &Layout, args: &TrainArgs) -> Result<PathBuf> {
    let file = RunConfig::load_opt(args.config.as_ref())?;
    let resumed = args.resume.as_ref().map(load_checkpoint).transpose()?;

    let experiment = args
        .data
        .clone()
        .or(file.experiment.clone())
        .or_else(|| file.data.as_ref().map(|d| d.clone().resolve().map(|d| d.default_name())).transpose().ok().flatten())
        .ok_or_else(|| Error::Config("--data <experiment> is required".into()))?;
    check_name(&experiment)?;

    let model = match (&resumed, args.model) {
        (Some(ckpt), m) => {
            if m.is_some_and(|m| ModelKind::from(m) != ckpt.model.kind()) {
                return Err(Error::Config("--model differs from the checkpoint being resumed".into()));
            }
            ckpt.model.clone()
        }
        (None, m) => {
            let mut table = file.model.clone().unwrap_or_default();
            if let Some(m) = m {
                let kind = ModelKind::from(m).as_str();
                if table.get("kind").and_then(|v| v.as_str()).is_some_and(|k| k != kind) {
                    // A different model than the run file describes: start from its preset.
                    table = toml::Table::new();
                }
                table.insert("kind".into(), kind.into());
            }
            if let Some(p) = &args.preset {
                table.retain(|k, _| k == "kind");
                table.insert("preset".into(), p.clone().into());
            }
            resolve_model(&table, &experiment)?
        }
    };

    let mut config = match &resumed {
        Some(ckpt) => ckpt.train.clone(),
        None => file.train.clone().unwrap_or_default(),
    };
    config.epochs = args.epochs.unwrap_or(config.epochs);
    config.checkpoint_every = args.checkpoint_every.unwrap_or(config.checkpoint_every);
    if resumed.is_none() {
        config.batch_size = args.batch_size.unwrap_or(config.batch_size);
        config.lr = args.lr.unwrap_or(config.lr);
        config.seed = args.seed.unwrap_or(config.seed);
    } else if args.batch_size.is_some() || args.lr.is_some() || args.seed.is_some() {
        return Err(Error::Config("--batch-size, --lr and --seed are fixed by the resumed checkpoint".into()));
    }
    config.validate()?;

    let (ds, manifest) = layout.load_data(&experiment)?;
    let ds = observed(&ds, &manifest)?.observed;
    let kind = model.kind();
    let run_dir = layout.run_dir(&experiment, kind);
    let log_path = run_dir.join(LOG_FILE);
    let ckpt_path = run_dir.join(CHECKPOINT_FILE);

    let mut trainer = match resumed {
        Some(mut ckpt) => {
            ckpt.train = config.clone();
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(&model, config.clone())?,
    };

    // The log keeps rows for epochs before the starting point only.
    let mut rows: Vec<String> = Vec::new();
    if trainer.epoch > 0 && log_path.is_file() {
        rows = read_log(&log_path)?.iter().filter(|r| r.epoch < trainer.epoch).map(format_log_row).collect();
    }
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let resolved = RunConfig {
        experiment: Some(experiment.clone()),
        data: Some(manifest.data.clone()),
        model: Some(to_table(&model)?),
        train: Some(config.clone()),
    };
    eval::write_text(&run_dir.join(CONFIG_FILE), &resolved.to_toml()?)?;
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut header = format!("{LOG_HEADER}\n");
    for r in &rows {
        header.push_str(r);
        header.push('\n');
    }
    log.write_all(header.as_bytes()).map_err(|e| Error::io(&log_path, e))?;

    let every = (config.epochs / 20).max(1);
    let total = config.epochs;
    println!("training {} on {experiment} ({} epochs from {})", kind.as_str(), total, trainer.epoch);
    let result = trainer.train(&ds, Some(&ckpt_path), |r| {
        writeln!(log, "{}", format_log_row(r)).map_err(|e| Error::io(&log_path, e))?;
        if r.epoch % every == 0 || r.epoch + 1 == total {
            println!("epoch {:>6}  train {:>12.5}  val {:>12.5}  {:.3}s", r.epoch, r.train_loss, r.val_loss, r.seconds);
        }
        Ok(())
    });
    if let Err(e @ Error::TooManyDiverged { .. }) = &result {
        eprintln!("{e}; log kept at {}", log_path.display());
    }
    result?;
    if !ckpt_path.is_file() {
        train::save_checkpoint(&ckpt_path, &trainer.checkpoint())?;
    }
    println!("wrote {}", run_dir.display());
    Ok(run_dir)
}

fn load_fitted(layout: &Layout, experiment: &str, kind: ModelKind) -> Result<Option<Fitted>> {
    let path = layout.checkpoint(experiment, kind);
    match load_checkpoint(&path) {
        Ok(ckpt) => Ok(Some(Fitted::from_checkpoint(&ckpt)?)),
        Err(Error::MissingCheckpoint(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Both trained models of an experiment; at least one must exist.
fn load_pair(layout: &Layout, experiment: &str) -> Result<(Option<Fitted>, Option<Fitted>)> {
    let node = load_fitted(layout, experiment, ModelKind::Node)?;
    let base = load_fitted(layout, experiment, ModelKind::Baseline)?;
    if node.is_none() && base.is_none() {
        return Err(Error::MissingCheckpoint(format!(
            "{experiment} (looked for {} and {})",
            layout.checkpoint(experiment, ModelKind::Node).display(),
            layout.checkpoint(experiment, ModelKind::Baseline).display()
        )));
    }
    Ok((node, base))
}

/// Writes the requested reports; returns the files written.
pub fn cmd_eval(layout: &Layout, args: &EvalArgs) -> Result<Vec<PathBuf>> {
    let experiments = match &args.experiments {
        Some(e) => e.clone(),
        None => layout.experiments()?,
    };
    if experiments.is_empty() {
        return Err(Error::Config("no experiments to evaluate".into()));
    }
    let mut data = Vec::new();
    for e in &experiments {
        check_name(e)?;
        let (ds, manifest) = layout.load_data(e)?;
        data.push(observed(&ds, &manifest)?);
    }
    let range = args.extrapolate.as_deref().map(parse_range).transpose()?;
    let reconstruct = args.reconstruct || range.is_some();
    let any = args.rmse || args.timing || args.latent || reconstruct;
    let (do_rmse, do_timing) = if any { (args.rmse, args.timing) } else { (true, true) };

    let out = layout.eval_dir();
    let mut written = Vec::new();

    if do_timing {
        let logs = experiments
            .iter()
            .map(|e| {
                let read = |k| {
                    let p = layout.log(e, k);
                    p.is_file().then(|| read_log(&p)).transpose()
                };
                Ok((read(ModelKind::Node)?, read(ModelKind::Baseline)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<TimingInput> = experiments
            .iter()
            .zip(&logs)
            .map(|(e, (n, b))| TimingInput {
                experiment: e,
                node: n.as_deref(),
                baseline: b.as_deref(),
            })
            .collect();
        if inputs.iter().any(|i| i.node.is_none() && i.baseline.is_none()) {
            let e = inputs.iter().find(|i| i.node.is_none() && i.baseline.is_none()).expect("checked");
            return Err(Error::MissingCheckpoint(format!("{} (no training logs)", e.experiment)));
        }
        let path = out.join("timing.csv");
        timing_report(&inputs)?.write_csv(&path)?;
        written.push(path);
    }

    let needs_models = do_rmse || args.latent || reconstruct;
    if !needs_models {
        report(&written);
        return Ok(written);
    }

    let models = experiments.iter().map(|e| load_pair(layout, e)).collect::<Result<Vec<_>>>()?;

    if do_rmse {
        let runs: Vec<ExperimentRun> = experiments
            .iter()
            .zip(&data)
            .zip(&models)
            .map(|((e, sub), (n, b))| ExperimentRun {
                experiment: e,
                dataset: &sub.observed,
                node: n.as_ref(),
                baseline: b.as_ref(),
            })
            .collect();
        let path = out.join("rmse_table.csv");
        rmse_table(&runs)?.write_csv(&path)?;
        written.push(path);
    }

    for ((e, sub), (node, base)) in experiments.iter().zip(&data).zip(&models) {
        if args.latent {
            let fitted = node.as_ref().ok_or_else(|| Error::MissingCheckpoint(layout.checkpoint(e, ModelKind::Node).display().to_string()))?;
            let scatter = latent_scatter(fitted, &sub.observed)?;
            let path = out.join(format!("latent_{e}.csv"));
            eval::write_text(&path, &scatter.to_csv())?;
            println!(
                "{e}: explained variance {:.3} ({:.3} + {:.3})",
                scatter.projection.explained_variance(),
                scatter.projection.ratios[0],
                scatter.projection.ratios[1]
            );
            written.push(path);
        }
        if reconstruct {
            let test = sub.observed.indices(Split::Test)?;
            let times = sub.observed.times();
            let (lo, hi) = range.unwrap_or((0.0, 1.0));
            let grid = extrapolation_grid(times, lo, hi).map_err(|e| Error::Config(e.to_string()))?;
            for &s in &args.samples {
                let &i = test.get(s).ok_or_else(|| Error::Config(format!("{e}: test split has {} samples, asked for {s}", test.len())))?;
                let tail = sub.tail_sample(i);
                let truth_at = |t: f64| sub.tail_times.iter().position(|&u| u == t).map(|k| [tail[2 * k], tail[2 * k + 1]]);
                for (fitted, suffix) in [(node, ""), (base, "_baseline")] {
                    let Some(fitted) = fitted else { continue };
                    let rows = export_reconstruction(fitted, times, &sub.observed.sample(i), &grid, truth_at)?;
                    let path = out.join(format!("recon_{e}_{s}{suffix}.csv"));
                    eval::write_text(&path, &reconstruction_csv(&rows))?;
                    written.push(path);
                }
            }
        }
    }
    report(&written);
    Ok(written)
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("--extrapolate takes two numbers like -0.5,1.5, got `{text}`"));
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn report(written: &[PathBuf]) {
    for p in written {
        println!("wrote {}", p.display());
    }
}
