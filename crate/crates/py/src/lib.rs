//! Python bindings: datasets, training, checkpoints and evaluation.
//!
//! Sequences cross the boundary as nested lists (`[T][2]` per sample) so the
//! module has no dependency on numpy.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use latentode::baseline::{self, BaselineConfig};
use latentode::data::{self, SpringKind, Split};
use latentode::diffcore::Tensor;
use latentode::eval::{self, Fitted};
use latentode::latentode::LatentOdeConfig;
use latentode::train::{self, EpochRecord, ModelConfig, TrainConfig, Trainer as CoreTrainer};
use latentode::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingCheckpoint(_) | Error::MissingDataset(_) => PyIOError::new_err(e.to_string()),
        Error::IntegrationDiverged { .. } | Error::TooManyDiverged { .. } | Error::NonFinite { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let n = rows.len();
    Tensor::matrix(n, cols, rows.into_iter().flatten().collect()).map_err(py_err)
}

/// A set of equally long two-feature sequences on a shared time grid.
#[pyclass(name = "Dataset", module = "pylatentode")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// `(num_data, seq_len, 2)`
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let [n, t, f] = self.inner.shape();
        (n, t, f)
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times().to_vec()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<String>> {
        self.inner.labels().map(<[String]>::to_vec)
    }

    /// Split name of every sample, or None before `split()`.
    #[getter]
    fn split_names(&self) -> Option<Vec<&'static str>> {
        self.inner.split().map(|s| s.iter().map(|x| x.as_str()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.num_data()
    }

    fn __repr__(&self) -> String {
        let [n, t, f] = self.inner.shape();
        format!("Dataset(num_data={n}, seq_len={t}, features={f})")
    }

    /// Sample `i` as `[seq_len][2]`.
    fn sample(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        if i >= self.inner.num_data() {
            return Err(PyValueError::new_err(format!("sample {i} out of range")));
        }
        Ok(to_rows(&self.inner.sample(i)))
    }

    /// Indices of `"train"`, `"val"` or `"test"` samples.
    fn indices(&self, which: &str) -> PyResult<Vec<usize>> {
        let which: Split = which.parse().map_err(py_err)?;
        self.inner.indices(which).map_err(py_err)
    }

    /// Copy with a seeded, label-stratified 60/20/20 split.
    fn split(&self, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: data::split(&self.inner, seed).map_err(py_err)?,
        })
    }

    /// `(prefix, tail_times)` keeping the first `m` steps of every sequence.
    fn subsample(&self, m: usize) -> PyResult<(Self, Vec<f64>)> {
        let sub = data::subsample(&self.inner, m).map_err(py_err)?;
        Ok((Self { inner: sub.observed }, sub.tail_times))
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        data::write_bundle(dir, &self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::read_bundle(dir).map_err(py_err)?,
        })
    }
}

#[pyfunction]
#[pyo3(signature = (n, seq_len = 300, noise_std = 0.05, seed = 0))]
fn gen_spirals(n: usize, seq_len: usize, noise_std: f64, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::gen_spirals(n, seq_len, noise_std, seed).map_err(py_err)?,
    })
}

/// Springs of the given kinds (1 undamped, 2 damped, 3 exponentially damped).
#[pyfunction]
#[pyo3(signature = (kinds, n, seed = 0))]
fn gen_springs(kinds: Vec<u8>, n: usize, seed: u64) -> PyResult<PyDataset> {
    let kinds = kinds.into_iter().map(SpringKind::from_index).collect::<Result<Vec<_>, _>>().map_err(py_err)?;
    Ok(PyDataset {
        inner: data::gen_springs(&kinds, n, seed).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (days = 68, seed = 0))]
fn gen_synthetic_solar(days: usize, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::gen_synthetic_solar(days, seed).map_err(py_err)?,
    })
}

#[pyfunction]
fn load_solar_csv(path: PathBuf) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::load_solar_csv(path).map_err(py_err)?,
    })
}

fn model_config(kind: &str, preset: &str) -> PyResult<ModelConfig> {
    match (kind, preset) {
        ("node", "desk") => Ok(ModelConfig::Node(LatentOdeConfig::desk())),
        ("node", p) => Ok(ModelConfig::Node(LatentOdeConfig::preset(p).map_err(py_err)?)),
        ("baseline", "desk") => Ok(ModelConfig::Baseline(BaselineConfig::desk())),
        ("baseline", _) => Ok(ModelConfig::Baseline(BaselineConfig::default())),
        (other, _) => Err(PyValueError::new_err(format!("unknown model kind `{other}` (node or baseline)"))),
    }
}

fn record_dict<'py>(py: Python<'py>, r: &EpochRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("train_loss", r.train_loss)?;
    d.set_item("val_loss", r.val_loss)?;
    d.set_item("seconds", r.seconds)?;
    d.set_item("diverged_steps", r.diverged_steps)?;
    Ok(d)
}

/// A latent ODE (`kind="node"`) or LSTM autoencoder (`kind="baseline"`)
/// with its Adam state.
///
/// `preset` is `"desk"` or, for the latent ODE, one of `"spiral"`,
/// `"spring"`, `"solar"`; the baseline uses its paper sizes otherwise.
#[pyclass(name = "Trainer", module = "pylatentode")]
struct PyTrainer {
    inner: CoreTrainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (kind = "node", preset = "desk", epochs = 100, batch_size = 64, lr = train::DEFAULT_LR, seed = 0))]
    fn new(kind: &str, preset: &str, epochs: usize, batch_size: usize, lr: f64, seed: u64) -> PyResult<Self> {
        let config = TrainConfig {
            epochs,
            batch_size,
            lr,
            seed,
            ..TrainConfig::default()
        };
        Ok(Self {
            inner: CoreTrainer::new(&model_config(kind, preset)?, config).map_err(py_err)?,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.model.kind().as_str()
    }

    /// Completed epochs.
    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    /// Optimiser steps taken so far.
    #[getter]
    fn steps(&self) -> u64 {
        self.inner.adam.t
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params.num_scalars()
    }

    fn run_epoch<'py>(&mut self, py: Python<'py>, ds: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.run_epoch(&ds.inner).map_err(py_err)?;
        record_dict(py, &r)
    }

    /// Trains up to `epochs` in total; returns one dict per epoch run.
    fn train<'py>(&mut self, py: Python<'py>, ds: &PyDataset) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let records = self.inner.train(&ds.inner, None, |_| Ok(())).map_err(py_err)?;
        records.iter().map(|r| record_dict(py, r)).collect()
    }

    /// Mean training objective over the given split.
    #[pyo3(signature = (ds, which = "val"))]
    fn evaluate(&self, ds: &PyDataset, which: &str) -> PyResult<f64> {
        let which: Split = which.parse().map_err(py_err)?;
        let idx = ds.inner.indices(which).map_err(py_err)?;
        self.inner.evaluate(&ds.inner, &idx).map_err(py_err)
    }

    /// `(mean, std_err)` of per-sample reconstruction RMSE on the test split.
    fn test_rmse(&self, ds: &PyDataset) -> PyResult<(f64, f64)> {
        let s = eval::test_rmse(&self.fitted(), &ds.inner).map_err(py_err)?;
        Ok((s.mean, s.std_err))
    }

    /// Posterior-mean reconstruction of one `[T][2]` sequence at `times`;
    /// the latent ODE may also decode outside the observed window.
    #[pyo3(signature = (sample, times, extrapolate = None))]
    fn reconstruct(&self, sample: Vec<Vec<f64>>, times: Vec<f64>, extrapolate: Option<Vec<f64>>) -> PyResult<Vec<(f64, f64, f64, &'static str)>> {
        let x = from_rows(sample)?;
        let rows = eval::export_reconstruction(&self.fitted(), &times, &x, &extrapolate.unwrap_or_default(), |_| None).map_err(py_err)?;
        Ok(rows.iter().map(|r| (r.t, r.recon[0], r.recon[1], r.region.as_str())).collect())
    }

    /// Two-component PCA of test-set posterior means:
    /// `{"points", "labels", "ratios", "separated"}`.
    fn latent<'py>(&self, py: Python<'py>, ds: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let s = eval::latent_scatter(&self.fitted(), &ds.inner).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("points", to_rows(&s.projection.points))?;
        d.set_item("ratios", s.projection.ratios.to_vec())?;
        d.set_item("separated", s.separation().map(|c| c.separated()).ok())?;
        d.set_item("labels", s.labels)?;
        Ok(d)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        train::save_checkpoint(path, &self.inner.checkpoint()).map_err(py_err)
    }

    /// Restores a trainer; `epochs` raises the target for further training.
    #[staticmethod]
    #[pyo3(signature = (path, epochs = None))]
    fn load(path: PathBuf, epochs: Option<usize>) -> PyResult<Self> {
        let mut ckpt = train::load_checkpoint(path).map_err(py_err)?;
        if let Some(e) = epochs {
            ckpt.train.epochs = e;
        }
        Ok(Self {
            inner: CoreTrainer::from_checkpoint(ckpt).map_err(py_err)?,
        })
    }
}

impl PyTrainer {
    fn fitted(&self) -> Fitted {
        Fitted::new(self.inner.model.clone(), self.inner.params.clone())
    }
}

/// `{"components", "points", "ratios", "degenerate"}` for `[n][dim]` points.
#[pyfunction]
fn pca_project<'py>(py: Python<'py>, points: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let p = eval::pca_project(&from_rows(points)?).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("components", to_rows(&p.components))?;
    d.set_item("points", to_rows(&p.points))?;
    d.set_item("ratios", p.ratios.to_vec())?;
    d.set_item("degenerate", p.degenerate)?;
    Ok(d)
}

#[pyfunction]
fn rmse(pred: Vec<Vec<f64>>, target: Vec<Vec<f64>>) -> PyResult<f64> {
    baseline::rmse(&from_rows(pred)?, &from_rows(target)?).map_err(py_err)
}

#[pyfunction]
fn derive_seed(seed: u64, stream: u64) -> u64 {
    train::derive_seed(seed, stream)
}

#[pymodule]
fn pylatentode(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(gen_spirals, m)?)?;
    m.add_function(wrap_pyfunction!(gen_springs, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic_solar, m)?)?;
    m.add_function(wrap_pyfunction!(load_solar_csv, m)?)?;
    m.add_function(wrap_pyfunction!(pca_project, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
