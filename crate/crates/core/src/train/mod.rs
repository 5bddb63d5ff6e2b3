//! Adam, the epoch loop with per-epoch timing and divergence accounting,
//! training logs and checkpoints.
//!
//! All randomness in a run flows from one seed. Independent streams are
//! derived with [`derive_seed`]; the generator for epoch `e` is
//! `ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_EPOCH))` switched to
//! stream `e`, so a resumed run draws exactly what an uninterrupted run would.

mod adam;
mod checkpoint;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, DEFAULT_LR};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::baseline::{BaselineConfig, LstmAutoencoder};
use crate::data::{Dataset, SequenceBatch, Split};
use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::latentode::{LatentOde, LatentOdeConfig};

pub const STREAM_INIT: u64 = 1;
pub const STREAM_EPOCH: u64 = 2;
pub const STREAM_DATA: u64 = 3;
pub const STREAM_SPLIT: u64 = 4;

/// SplitMix64 finaliser applied to `seed + stream·φ`, with φ the 64-bit
/// golden-ratio constant.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for epoch `epoch` of a run seeded with `seed`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_EPOCH));
    rng.set_stream(epoch as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Node,
    Baseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Node => "node",
            ModelKind::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Node(LatentOdeConfig),
    Baseline(BaselineConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Node(_) => ModelKind::Node,
            ModelConfig::Baseline(_) => ModelKind::Baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Abort when more than this fraction of an epoch's steps diverge.
    pub max_diverged_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: DEFAULT_LR,
            seed: 0,
            checkpoint_every: 0,
            max_diverged_fraction: 0.01,
        }
    }
}

impl TrainConfig {
    /// Epoch count used for each experiment family at full scale.
    pub fn paper_epochs(experiment: &str) -> Option<usize> {
        if experiment == "spiral" {
            Some(10_000)
        } else if experiment.starts_with("spring") {
            Some(20_000)
        } else if experiment == "solar" {
            Some(25_000)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("lr must be a non-negative number".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must be below 2^63".into()));
        }
        if !(0.0..=1.0).contains(&self.max_diverged_fraction) {
            return Err(Error::Config("max_diverged_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
    pub diverged_steps: usize,
}

/// A built model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Node(LatentOde),
    Baseline(LstmAutoencoder),
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(match config {
            ModelConfig::Node(c) => Model::Node(LatentOde::new(c.clone())?),
            ModelConfig::Baseline(c) => Model::Baseline(LstmAutoencoder::new(c.clone())?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Node(_) => ModelKind::Node,
            Model::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Node(m) => ModelConfig::Node(m.config.clone()),
            Model::Baseline(m) => ModelConfig::Baseline(m.config.clone()),
        }
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        match self {
            Model::Node(m) => m.init_params(seed),
            Model::Baseline(m) => m.init_params(seed),
        }
    }

    /// One optimiser step: −ELBO for the latent ODE, RMSE for the baseline.
    pub fn train_step(&self, params: &mut ParamSet, batch: &SequenceBatch, adam: &mut Adam, rng: &mut ChaCha8Rng) -> Result<f64> {
        match self {
            Model::Node(m) => m.train_step(params, batch, adam, rng),
            Model::Baseline(m) => m.train_step(params, batch, adam),
        }
    }

    /// Deterministic loss of a batch (posterior mean for the latent ODE).
    pub fn evaluate(&self, params: &ParamSet, batch: &SequenceBatch) -> Result<f64> {
        match self {
            Model::Node(m) => Ok(m.evaluate(params, batch)?.loss),
            Model::Baseline(m) => m.evaluate(params, batch),
        }
    }

    /// Deterministic reconstruction at the batch's own time stamps.
    pub fn reconstruct(&self, params: &ParamSet, batch: &SequenceBatch) -> Result<Vec<Tensor>> {
        match self {
            Model::Node(m) => m.reconstruct_batch(params, &batch.steps, &batch.times),
            Model::Baseline(m) => m.reconstruct_batch(params, &batch.steps),
        }
    }
}

/// Owns a model, its parameters and optimiser state across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub params: ParamSet,
    pub adam: Adam,
    /// Number of completed epochs; also the index of the next one.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model_config: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(model_config)?;
        let params = model.init_params(derive_seed(config.seed, STREAM_INIT))?;
        let adam = Adam::new(&params, config.lr);
        Ok(Self {
            model,
            config,
            params,
            adam,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let model = Model::new(&ckpt.model)?;
        model.init_params(0)?.check_aligned(&ckpt.params)?;
        Ok(Self {
            model,
            config: ckpt.train,
            params: ckpt.params,
            adam: ckpt.adam,
            epoch: ckpt.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.config(),
            train: self.config.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
        }
    }

    /// Mean loss over `indices`, evaluated in chunks of the batch size and
    /// weighted by chunk length. NaN when `indices` is empty.
    pub fn evaluate(&self, ds: &Dataset, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for chunk in indices.chunks(self.config.batch_size) {
            total += self.model.evaluate(&self.params, &ds.batch(chunk)?)? * chunk.len() as f64;
        }
        Ok(total / indices.len() as f64)
    }

    /// One pass over the shuffled training split followed by validation.
    pub fn run_epoch(&mut self, ds: &Dataset) -> Result<EpochRecord> {
        let start = Instant::now();
        let mut order = ds.indices(Split::Train)?;
        if order.is_empty() {
            return Err(Error::invalid("training split is empty"));
        }
        let mut rng = epoch_rng(self.config.seed, self.epoch);
        order.shuffle(&mut rng);
        let steps = order.len().div_ceil(self.config.batch_size);
        let mut loss_sum = 0.0;
        let mut done = 0;
        let mut diverged = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = ds.batch(chunk)?;
            match self.model.train_step(&mut self.params, &batch, &mut self.adam, &mut rng) {
                Ok(loss) => {
                    loss_sum += loss;
                    done += 1;
                }
                Err(e) if e.is_divergence() => {
                    diverged += 1;
                    eprintln!("epoch {}: skipped step ({e})", self.epoch);
                    if diverged as f64 > self.config.max_diverged_fraction * steps as f64 {
                        return Err(Error::TooManyDiverged {
                            epoch: self.epoch,
                            diverged,
                            steps,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let val_loss = self.evaluate(ds, &ds.indices(Split::Val)?)?;
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: if done > 0 { loss_sum / done as f64 } else { f64::NAN },
            val_loss,
            seconds: start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
            diverged_steps: diverged,
        };
        self.epoch += 1;
        Ok(record)
    }

    /// Runs until `self.config.epochs` epochs are complete. With a
    /// `checkpoint` path the state is saved every `checkpoint_every` epochs
    /// and after the last one; `on_epoch` sees every record as it is produced.
    pub fn train(
        &mut self,
        ds: &Dataset,
        checkpoint: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut records = Vec::new();
        while self.epoch < self.config.epochs {
            let record = self.run_epoch(ds)?;
            on_epoch(&record)?;
            records.push(record);
            if let Some(path) = checkpoint {
                let every = self.config.checkpoint_every;
                if self.epoch == self.config.epochs || (every > 0 && self.epoch % every == 0) {
                    save_checkpoint(path, &self.checkpoint())?;
                }
            }
        }
        Ok(records)
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(config: &TrainConfig, ds: &Dataset, model: &ModelConfig) -> Result<(Vec<EpochRecord>, Checkpoint)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    let records = trainer.train(ds, None, |_| Ok(()))?;
    Ok((records, trainer.checkpoint()))
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,seconds";

pub fn format_log_row(r: &EpochRecord) -> String {
    format!("{},{:.17e},{:.17e},{:.6}", r.epoch, r.train_loss, r.val_loss, r.seconds)
}

pub fn write_log(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format_log_row(r));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |row: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row: Some(row),
        msg,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(LOG_HEADER) {
        return Err(parse(1, format!("expected header `{LOG_HEADER}`")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(parse(row, format!("expected 4 columns, got {}", cells.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse(row, format!("`{s}`: {e}")));
        records.push(EpochRecord {
            epoch: cells[0].trim().parse().map_err(|e| parse(row, format!("epoch: {e}")))?,
            train_loss: num(cells[1])?,
            val_loss: num(cells[2])?,
            seconds: num(cells[3])?,
            diverged_steps: 0,
        });
    }
    Ok(records)
}
