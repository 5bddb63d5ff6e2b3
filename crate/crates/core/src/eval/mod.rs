//! Test-split RMSE tables, reconstruction and extrapolation exports, latent
//! projections and per-epoch timing summaries.
//!
//! Every reported number decodes from the posterior mean, so exports are a
//! pure function of the checkpoint and the data.

mod pca;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use pca::{cluster_separation, pca_project, symmetric_eigen, ClusterSeparation, PcaProjection};

use crate::baseline::rmse;
use crate::data::{Dataset, Split, FEATURES};
use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::latentode::LatentOde;
use crate::train::{Checkpoint, EpochRecord, Model, ModelKind};

/// Experiment names in reporting order.
pub const EXPERIMENTS: [&str; 9] = [
    "spiral", "spring1", "spring2", "spring3", "spring12", "spring13", "spring23", "spring123", "solar",
];

const EVAL_CHUNK: usize = 64;

fn experiment_rank(name: &str) -> usize {
    EXPERIMENTS.iter().position(|&e| e == name).unwrap_or(EXPERIMENTS.len())
}

fn sort_by_experiment<T>(rows: &mut [T], name: impl Fn(&T) -> &str) {
    rows.sort_by(|a, b| (experiment_rank(name(a)), name(a)).cmp(&(experiment_rank(name(b)), name(b))));
}

/// A model together with trained parameters.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub params: ParamSet,
}

impl Fitted {
    pub fn new(model: Model, params: ParamSet) -> Self {
        Self { model, params }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = Model::new(&ckpt.model)?;
        model.init_params(0)?.check_aligned(&ckpt.params)?;
        Ok(Self::new(model, ckpt.params.clone()))
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    /// Posterior means (latent ODE) or codes (baseline) of the given samples.
    pub fn encode(&self, ds: &Dataset, indices: &[usize]) -> Result<Tensor> {
        let mut parts = Vec::new();
        for chunk in indices.chunks(EVAL_CHUNK) {
            let batch = ds.batch(chunk)?;
            parts.push(match &self.model {
                Model::Node(m) => m.encode_batch(&self.params, &batch.steps)?.mu,
                Model::Baseline(m) => m.encode_batch(&self.params, &batch.steps)?,
            });
        }
        Tensor::vstack(&parts)
    }
}

/// RMSE of each sample, given reconstructions and targets laid out one
/// `[B, 2]` tensor per time step.
pub fn sample_rmse(recon: &[Tensor], truth: &[Tensor]) -> Result<Vec<f64>> {
    if recon.len() != truth.len() || recon.is_empty() {
        return Err(Error::invalid("reconstruction and target lengths differ"));
    }
    let b = truth[0].rows();
    let per_sample = |steps: &[Tensor], i: usize| -> Result<Tensor> {
        let rows: Vec<f64> = steps.iter().flat_map(|s| s.row(i).to_vec()).collect();
        Tensor::matrix(steps.len(), FEATURES, rows)
    };
    (0..b).map(|i| rmse(&per_sample(recon, i)?, &per_sample(truth, i)?)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseStats {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean over samples.
    pub std_err: f64,
}

impl RmseStats {
    pub fn from_samples(per_sample: Vec<f64>) -> Result<Self> {
        let n = per_sample.len();
        if n == 0 {
            return Err(Error::invalid("no samples to average"));
        }
        let mean = per_sample.iter().sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            let var = per_sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { per_sample, mean, std_err })
    }
}

/// Reconstruction RMSE on the test split: per-sample RMSE, then the mean.
pub fn test_rmse(fitted: &Fitted, ds: &Dataset) -> Result<RmseStats> {
    let test = ds.indices(Split::Test)?;
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let mut all = Vec::with_capacity(test.len());
    for chunk in test.chunks(EVAL_CHUNK) {
        let batch = ds.batch(chunk)?;
        let recon = fitted.model.reconstruct(&fitted.params, &batch)?;
        all.extend(sample_rmse(&recon, &batch.steps)?);
    }
    RmseStats::from_samples(all)
}

/// Inputs for one row of the RMSE table.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentRun<'a> {
    pub experiment: &'a str,
    pub dataset: &'a Dataset,
    pub node: Option<&'a Fitted>,
    pub baseline: Option<&'a Fitted>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub experiment: String,
    pub node: Option<RmseStats>,
    pub baseline: Option<RmseStats>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmseReport {
    pub rows: Vec<RmseRow>,
}

impl RmseReport {
    /// `experiment,node,baseline`; a missing model leaves its cell empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,node,baseline\n");
        let cell = |s: &Option<RmseStats>| s.as_ref().map(|s| format!("{:.6}", s.mean)).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.experiment, cell(&r.node), cell(&r.baseline));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }
}

pub fn rmse_table(runs: &[ExperimentRun<'_>]) -> Result<RmseReport> {
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let stats = |f: Option<&Fitted>| f.map(|f| test_rmse(f, run.dataset)).transpose();
        rows.push(RmseRow {
            experiment: run.experiment.to_string(),
            node: stats(run.node)?,
            baseline: stats(run.baseline)?,
        });
    }
    sort_by_experiment(&mut rows, |r| &r.experiment);
    Ok(RmseReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Observed,
    Extrapolated,
    /// Marks where decoding stopped because the latent trajectory diverged.
    Truncated,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Observed => "observed",
            Region::Extrapolated => "extrapolated",
            Region::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconRow {
    pub t: f64,
    /// NaN where no ground truth is known.
    pub truth: [f64; 2],
    pub recon: [f64; 2],
    pub region: Region,
}

/// Points outside the observed window on the observed step size, covering
/// `[first + lo·span, first + hi·span]` where `span` is the observed duration.
pub fn extrapolation_grid(observed: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if observed.len() < 2 {
        return Err(Error::InvalidGrid("need at least two observed times".into()));
    }
    if !(lo <= 0.0 && hi >= 1.0) {
        return Err(Error::InvalidGrid(format!("extrapolation range [{lo}, {hi}] must contain [0, 1]")));
    }
    let n = observed.len();
    let first = observed[0];
    let span = observed[n - 1] - first;
    let step = span / (n - 1) as f64;
    let kmin = (lo * span / step - 1e-9).ceil() as i64;
    let kmax = (hi * span / step + 1e-9).floor() as i64;
    Ok((kmin..=kmax)
        .filter(|&k| k < 0 || k >= n as i64)
        .map(|k| first + k as f64 * step)
        .collect())
}

/// Decodes `times` (all on one side of `t0`); on divergence keeps the
/// reachable part and reports where integration failed.
fn decode_guarded(model: &LatentOde, params: &ParamSet, z0: &Tensor, times: &[f64]) -> Result<(Vec<[f64; 2]>, Option<f64>)> {
    if times.is_empty() {
        return Ok((Vec::new(), None));
    }
    let rows = |x: Tensor| (0..x.rows()).map(|i| [x.row(i)[0], x.row(i)[1]]).collect::<Vec<_>>();
    match model.decode(params, z0, times) {
        Ok(x) if x.all_finite() => Ok((rows(x), None)),
        Ok(x) => {
            // Finite latents can still overflow in the readout.
            let finite = |i: &usize| x.row(*i).iter().all(|v| v.is_finite());
            let mut all = rows(x.clone());
            if times[0] < model.config.t0 {
                let keep = (0..x.rows()).rev().take_while(finite).count();
                let at = times[times.len() - 1 - keep];
                Ok((all.split_off(all.len() - keep), Some(at)))
            } else {
                let keep = (0..x.rows()).take_while(finite).count();
                all.truncate(keep);
                Ok((all, Some(times[keep])))
            }
        }
        Err(Error::IntegrationDiverged { t, .. }) => {
            let backward = times[0] < model.config.t0;
            let reachable: Vec<f64> = times.iter().copied().filter(|&s| if backward { s > t } else { s < t }).collect();
            if reachable.is_empty() {
                return Ok((Vec::new(), Some(t)));
            }
            let (kept, _) = decode_guarded(model, params, z0, &reachable)?;
            Ok((kept, Some(t)))
        }
        Err(e) => Err(e),
    }
}

/// Reconstruction of one `[T, 2]` sample at its observed `times`, plus the
/// latent ODE's decode at `extrapolate` (ignored for the baseline, which has
/// no notion of time). `truth_at` supplies known values at extrapolated times.
pub fn export_reconstruction(
    fitted: &Fitted,
    times: &[f64],
    sample: &Tensor,
    extrapolate: &[f64],
    truth_at: impl Fn(f64) -> Option<[f64; 2]>,
) -> Result<Vec<ReconRow>> {
    if sample.shape() != [times.len(), FEATURES] {
        return Err(Error::ShapeMismatch {
            op: "export_reconstruction",
            lhs: sample.shape().to_vec(),
            rhs: vec![times.len(), FEATURES],
        });
    }
    let truth = |i: usize| [sample.row(i)[0], sample.row(i)[1]];
    let model = match &fitted.model {
        Model::Baseline(m) => {
            let recon = m.forward(&fitted.params, sample)?;
            return Ok((0..times.len())
                .map(|i| ReconRow {
                    t: times[i],
                    truth: truth(i),
                    recon: [recon.row(i)[0], recon.row(i)[1]],
                    region: Region::Observed,
                })
                .collect());
        }
        Model::Node(m) => m,
    };

    let mut grid: Vec<(f64, Option<usize>)> = times.iter().enumerate().map(|(i, &t)| (t, Some(i))).collect();
    grid.extend(extrapolate.iter().filter(|t| !times.contains(t)).map(|&t| (t, None)));
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    grid.dedup_by(|a, b| a.0 == b.0);

    let z0 = model.encode(&fitted.params, sample)?.mu;
    let split = grid.partition_point(|g| g.0 < model.config.t0);
    let (before, after) = grid.split_at(split);
    let ts = |g: &[(f64, Option<usize>)]| g.iter().map(|x| x.0).collect::<Vec<_>>();
    let (back, back_stop) = decode_guarded(model, &fitted.params, &z0, &ts(before))?;
    let (fwd, fwd_stop) = decode_guarded(model, &fitted.params, &z0, &ts(after))?;

    let row = |(t, obs): (f64, Option<usize>), recon: [f64; 2]| ReconRow {
        t,
        truth: obs.map(truth).or_else(|| truth_at(t)).unwrap_or([f64::NAN; 2]),
        recon,
        region: if obs.is_some() { Region::Observed } else { Region::Extrapolated },
    };
    let marker = |t: f64| ReconRow {
        t,
        truth: [f64::NAN; 2],
        recon: [f64::NAN; 2],
        region: Region::Truncated,
    };
    let mut rows = Vec::with_capacity(grid.len() + 2);
    if let Some(t) = back_stop {
        rows.push(marker(t));
    }
    let skipped = before.len() - back.len();
    rows.extend(before[skipped..].iter().zip(back).map(|(&g, r)| row(g, r)));
    rows.extend(after.iter().zip(fwd).map(|(&g, r)| row(g, r)));
    if let Some(t) = fwd_stop {
        rows.push(marker(t));
    }
    Ok(rows)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.10e}")
    }
}

/// `t,truth_x,truth_y,recon_x,recon_y,region`; unknown values are empty.
pub fn reconstruction_csv(rows: &[ReconRow]) -> String {
    let mut out = String::from("t,truth_x,truth_y,recon_x,recon_y,region\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            num(r.t),
            num(r.truth[0]),
            num(r.truth[1]),
            num(r.recon[0]),
            num(r.recon[1]),
            r.region.as_str()
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentScatter {
    pub projection: PcaProjection,
    pub labels: Vec<String>,
}

impl LatentScatter {
    pub fn separation(&self) -> Result<ClusterSeparation> {
        cluster_separation(&self.projection.points, &self.labels)
    }

    /// Header comment with the explained variance, then `pc1,pc2,label`.
    pub fn to_csv(&self) -> String {
        let p = &self.projection;
        let mut out = format!(
            "# explained_variance={:.6} ratio1={:.6} ratio2={:.6} degenerate={}\npc1,pc2,label\n",
            p.explained_variance(),
            p.ratios[0],
            p.ratios[1],
            p.degenerate
        );
        for (i, label) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "{:.10e},{:.10e},{}", p.points.row(i)[0], p.points.row(i)[1], label);
        }
        out
    }
}

/// Encodes every test sample at its posterior mean and projects onto the
/// first two principal components.
pub fn latent_scatter(fitted: &Fitted, ds: &Dataset) -> Result<LatentScatter> {
    let labels = ds.labels().ok_or_else(|| Error::invalid("latent scatter needs a labelled dataset"))?;
    let test = ds.indices(Split::Test)?;
    let latents = fitted.encode(ds, &test)?;
    Ok(LatentScatter {
        projection: pca_project(&latents)?,
        labels: test.iter().map(|&i| labels[i].clone()).collect(),
    })
}

/// Mean seconds per epoch, leaving out epoch 0 as warm-up. A log holding
/// only epoch 0 falls back to that single value.
pub fn mean_epoch_seconds(records: &[EpochRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("empty training log"));
    }
    let timed: Vec<f64> = records.iter().filter(|r| r.epoch > 0).map(|r| r.seconds).collect();
    let timed = if timed.is_empty() { records.iter().map(|r| r.seconds).collect() } else { timed };
    Ok(timed.iter().sum::<f64>() / timed.len() as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct TimingInput<'a> {
    pub experiment: &'a str,
    pub node: Option<&'a [EpochRecord]>,
    pub baseline: Option<&'a [EpochRecord]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub experiment: String,
    pub node: Option<f64>,
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,node,baseline\n");
        let cell = |s: Option<f64>| s.map(|s| format!("{s:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.experiment, cell(r.node), cell(r.baseline));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }
}

pub fn timing_report(inputs: &[TimingInput<'_>]) -> Result<TimingReport> {
    let mut rows = Vec::with_capacity(inputs.len());
    for i in inputs {
        if i.node.is_none() && i.baseline.is_none() {
            return Err(Error::invalid(format!("no training logs for {}", i.experiment)));
        }
        rows.push(TimingRow {
            experiment: i.experiment.to_string(),
            node: i.node.map(mean_epoch_seconds).transpose()?,
            baseline: i.baseline.map(mean_epoch_seconds).transpose()?,
        });
    }
    sort_by_experiment(&mut rows, |r| &r.experiment);
    Ok(TimingReport { rows })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
