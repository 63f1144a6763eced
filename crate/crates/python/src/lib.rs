use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use loadbench::curation::{self, CuratedDataset, CurationMode, CurationSpec};
use loadbench::data::{self, BuildingType, NormScope, PreparedDataset, SplitKind, SplitSpec, WindowSpec};
use loadbench::metrics::{self, MetricConfig, MetricSpace};
use loadbench::models::{self, Arch, Checkpoint, ForecastModel, ModelConfig};
use loadbench::synth::{self, SynthSpec};
use loadbench::trainer::{self, EarlyStopper, TrainConfig};

create_exception!(loadbench, LoadbenchError, PyException);

fn py_err(e: loadbench::Error) -> PyErr {
    LoadbenchError::new_err(format!("{}: {e}", e.code()))
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for loadbench::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn split_kind(name: &str) -> PyResult<SplitKind> {
    match name {
        "train" => Ok(SplitKind::Train),
        "val" => Ok(SplitKind::Val),
        "test" => Ok(SplitKind::Test),
        other => Err(LoadbenchError::new_err(format!("BadValue: unknown split `{other}` (train, val, test)"))),
    }
}

fn metric_space(name: &str) -> PyResult<MetricSpace> {
    match name {
        "normalized" => Ok(MetricSpace::Normalized),
        "physical" => Ok(MetricSpace::Physical),
        other => Err(LoadbenchError::new_err(format!("BadValue: unknown metric space `{other}`"))),
    }
}

/// A named collection of buildings with a train/val/test split.
#[pyclass(name = "Dataset", module = "loadbench")]
struct PyDataset {
    inner: CuratedDataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic pool; building `i` gets type `i % n_types`.
    #[staticmethod]
    #[pyo3(signature = (n_buildings = 14, n_steps = 2688, n_types = None, seed = 0, name = "synth"))]
    fn synth(n_buildings: usize, n_steps: usize, n_types: Option<usize>, seed: u64, name: &str) -> PyResult<Self> {
        let spec = SynthSpec { n_buildings, n_steps, n_types: n_types.unwrap_or(n_buildings.min(14)), seed, ..Default::default() };
        Ok(PyDataset { inner: CuratedDataset::new(name, synth::generate(&spec).py()?) })
    }

    #[staticmethod]
    #[pyo3(signature = (timeseries, static_file, name = "dataset"))]
    fn ingest(timeseries: &str, static_file: &str, name: &str) -> PyResult<Self> {
        Ok(PyDataset { inner: CuratedDataset::new(name, data::ingest(timeseries, static_file).py()?) })
    }

    #[staticmethod]
    fn read(dir: &str) -> PyResult<Self> {
        Ok(PyDataset { inner: CuratedDataset::read(dir).py()? })
    }

    fn write(&self, dir: &str) -> PyResult<()> {
        self.inner.write(dir).py()
    }

    /// Heterogeneous subset matching the type mix, or a single-type subset
    /// when `building_type` is given.
    #[pyo3(signature = (target_count, seed = 0, building_type = None, name = "curated"))]
    fn curate(&self, target_count: usize, seed: u64, building_type: Option<&str>, name: &str) -> PyResult<Self> {
        let mode = match building_type {
            Some(t) => CurationMode::Homogeneous(t.parse::<BuildingType>().py()?),
            None => CurationMode::Heterogeneous,
        };
        let spec = CurationSpec { target_count, mode, random_seed: seed };
        Ok(PyDataset { inner: curation::curate(&self.inner.buildings, &spec, name).py()? })
    }

    /// Pooled load mean and standard deviation and the observation count.
    fn heterogeneity(&self) -> PyResult<(f64, f64, usize)> {
        let r = curation::heterogeneity_report(&self.inner).py()?;
        Ok((r.pooled_mean, r.pooled_std, r.total_observations))
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    fn building_ids(&self) -> Vec<String> {
        self.inner.buildings.iter().map(|b| b.building_id().to_string()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.buildings.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, buildings={})", self.inner.name, self.inner.buildings.len())
    }
}

/// One of the seven forecasting architectures with its parameters.
#[pyclass(name = "Model", module = "loadbench")]
struct PyModel {
    inner: ForecastModel,
    lr: Option<f64>,
}

impl PyModel {
    fn prepare(&self, ds: &PyDataset) -> PyResult<PreparedDataset> {
        ds.inner.prepare(NormScope::Global, self.inner.window).py()
    }
}

#[pymethods]
impl PyModel {
    /// `preset` is `reference` or `toy`.
    #[new]
    #[pyo3(signature = (arch, lookback, horizon, seed = 0, preset = "reference"))]
    fn new(arch: &str, lookback: usize, horizon: usize, seed: u64, preset: &str) -> PyResult<Self> {
        let arch: Arch = arch.parse().py()?;
        let config = match preset {
            "reference" => ModelConfig::default_for(arch),
            "toy" => ModelConfig::toy(arch),
            other => return Err(LoadbenchError::new_err(format!("BadValue: unknown preset `{other}`"))),
        };
        let window = WindowSpec::new(lookback, horizon).py()?;
        Ok(PyModel { inner: models::build(&config, window, seed).py()?, lr: None })
    }

    #[getter]
    fn arch(&self) -> &'static str {
        self.inner.arch().as_str()
    }

    #[getter]
    fn lookback(&self) -> usize {
        self.inner.window.lookback
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.window.horizon
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Trains at one learning rate with early stopping and keeps the best
    /// epoch. Returns `(epoch, train_loss, val_nmse)` per epoch.
    #[pyo3(signature = (dataset, lr = 1e-3, max_epochs = 20, batch_size = 1024, patience = 5, seed = 0))]
    fn fit(
        &mut self,
        py: Python<'_>,
        dataset: &PyDataset,
        lr: f64,
        max_epochs: usize,
        batch_size: usize,
        patience: usize,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let data = self.prepare(dataset)?;
        let cfg = TrainConfig { max_epochs, batch_size, patience, lr_grid: vec![lr], seed, ..Default::default() };
        let model = &mut self.inner;
        let outcome = py
            .detach(|| {
                let train = data.window_set(SplitKind::Train)?;
                let val = data.window_set(SplitKind::Val)?;
                trainer::train(model, &train, &val, &cfg, lr)
            })
            .py()?;
        self.lr = Some(lr);
        Ok(outcome.log.epochs.iter().map(|e| (e.epoch, e.train_loss, e.val_nmse)).collect())
    }

    /// NMSE and NMAE over every window of `split`.
    #[pyo3(signature = (dataset, split = "test", space = "normalized", batch_size = 1024))]
    fn evaluate(&self, dataset: &PyDataset, split: &str, space: &str, batch_size: usize) -> PyResult<(f64, f64)> {
        let data = self.prepare(dataset)?;
        let set = data.window_set(split_kind(split)?).py()?;
        let s = trainer::evaluate(&self.inner, &set, metric_space(space)?, batch_size, Default::default()).py()?;
        Ok((s.nmse, s.nmae))
    }

    /// Normalized forecasts, one list of `horizon` values per window.
    #[pyo3(signature = (dataset, split = "test", batch_size = 1024))]
    fn predict(&self, dataset: &PyDataset, split: &str, batch_size: usize) -> PyResult<Vec<Vec<f64>>> {
        let data = self.prepare(dataset)?;
        let set = data.window_set(split_kind(split)?).py()?;
        let pred = trainer::predict_set(&self.inner, &set, batch_size, Default::default()).py()?;
        Ok(pred.outer_iter().map(|r| r.to_vec()).collect())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut ckpt = Checkpoint::new(self.inner.clone(), None);
        if let Some(lr) = self.lr {
            ckpt.meta.insert("lr".into(), lr.into());
        }
        ckpt.save(path).py()
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = Checkpoint::load(path).py()?;
        let lr = ckpt.meta.get("lr").and_then(|v| v.as_f64());
        Ok(PyModel { inner: ckpt.model, lr })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(arch={:?}, lookback={}, horizon={}, parameters={})",
            self.inner.arch().as_str(),
            self.inner.window.lookback,
            self.inner.window.horizon,
            self.inner.num_parameters()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (pred, target, sigma_y = 1.0))]
fn nmse(pred: Vec<f64>, target: Vec<f64>, sigma_y: f64) -> PyResult<f64> {
    let cfg = MetricConfig::new(sigma_y, 1).py()?;
    metrics::nmse(ndarray::aview1(&pred), ndarray::aview1(&target), &cfg).py()
}

#[pyfunction]
#[pyo3(signature = (pred, target, sigma_y = 1.0))]
fn nmae(pred: Vec<f64>, target: Vec<f64>, sigma_y: f64) -> PyResult<f64> {
    let cfg = MetricConfig::new(sigma_y, 1).py()?;
    metrics::nmae(ndarray::aview1(&pred), ndarray::aview1(&target), &cfg).py()
}

/// Population Pearson coefficient, `None` when either side is constant.
#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> Option<f64> {
    curation::pearson(&x, &y)
}

#[pyfunction]
fn largest_remainder(counts: Vec<usize>, target: usize) -> Vec<usize> {
    curation::largest_remainder(&counts, target)
}

#[pyfunction]
#[pyo3(signature = (n, train = 0.8, val = 0.1, test = 0.1))]
fn split_lengths(n: usize, train: f64, val: f64, test: f64) -> PyResult<(usize, usize, usize)> {
    let spec = SplitSpec::new(train, val, test).py()?;
    Ok(data::split_len(n, &spec).py()?.lengths())
}

#[pyfunction]
fn window_count(n: usize, lookback: usize, horizon: usize) -> PyResult<usize> {
    WindowSpec::new(lookback, horizon).py()?.count(n).py()
}

/// Dominant periods of a `[time][channel]` series, strongest first.
#[pyfunction]
#[pyo3(signature = (series, k = 5))]
fn detect_periods(series: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<usize>> {
    let t = series.len();
    let c = series.first().map_or(0, Vec::len);
    if t < 2 || c == 0 || series.iter().any(|r| r.len() != c) {
        return Err(LoadbenchError::new_err("ShapeError: expected a rectangular [time][channel] series with time >= 2"));
    }
    let arr = ndarray::Array2::from_shape_vec((t, c), series.concat()).expect("rectangular");
    Ok(models::detect_periods(arr.view(), k))
}

#[pyfunction]
fn patch_count(lookback: usize, patch_len: usize, stride: usize) -> PyResult<usize> {
    if patch_len == 0 || stride == 0 || patch_len > lookback {
        return Err(LoadbenchError::new_err("BadHyperparameters: need 1 <= patch_len <= lookback and stride >= 1"));
    }
    Ok(models::patch_count(lookback, patch_len, stride))
}

/// Replays a validation curve through the stopping rule:
/// `(termination_epoch, best_epoch, stopped_early)`.
#[pyfunction]
#[pyo3(signature = (curve, patience = 5, max_epochs = 20))]
fn early_stopping(curve: Vec<f64>, patience: usize, max_epochs: usize) -> (usize, usize, bool) {
    EarlyStopper::simulate(&curve, patience, max_epochs)
}

#[pymodule]
#[pyo3(name = "loadbench")]
fn loadbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LoadbenchError", m.py().get_type::<LoadbenchError>())?;
    m.add("ARCHITECTURES", Arch::ALL.iter().map(|a| a.as_str()).collect::<Vec<_>>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(nmae, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(largest_remainder, m)?)?;
    m.add_function(wrap_pyfunction!(split_lengths, m)?)?;
    m.add_function(wrap_pyfunction!(window_count, m)?)?;
    m.add_function(wrap_pyfunction!(detect_periods, m)?)?;
    m.add_function(wrap_pyfunction!(patch_count, m)?)?;
    m.add_function(wrap_pyfunction!(early_stopping, m)?)?;
    Ok(())
}
