//! Python bindings: networks, datasets, the energy objective, the
//! zero-skipping census and the training loop.
//!
//! Batches cross the boundary as flat lists of floats in row-major order;
//! the batch size is inferred from the network's input shape.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;

use sponge_core::asic::{census, energy_increase as census_increase, energy_ratio as census_ratio, OperationCensus};
use sponge_core::data::{self, GenKind, GenSpec};
use sponge_core::energy::{self, Objective, Sigma};
use sponge_core::experiment::{report_json, run_experiment as run_config, write_outcome, ExperimentConfig};
use sponge_core::nn::{self, build_network, NetworkSpec, OptimizerState, SgdConfig};
use sponge_core::train::{self as core_train, Mode, SpongeConfig, TrainSettings};
use sponge_core::{arch, Error, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Diverged { .. } | Error::NonFiniteGradient { .. } => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for sponge_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Parses a lowercase enum name such as `"sponge"` or `"tiny-images"`.
fn parse_name<T: DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

fn sigma(v: f64) -> PyResult<Sigma> {
    Sigma::new(v).py()
}

#[pyclass(name = "Network", module = "sponge")]
struct PyNetwork {
    inner: nn::Network,
}

impl PyNetwork {
    fn batch(&self, x: Vec<f64>) -> PyResult<Tensor> {
        let per: usize = self.inner.input_shape().iter().product();
        if x.is_empty() || !x.len().is_multiple_of(per) {
            return Err(PyValueError::new_err(format!(
                "expected a non-empty multiple of {per} values, got {}",
                x.len()
            )));
        }
        let mut shape = vec![x.len() / per];
        shape.extend(self.inner.input_shape());
        Tensor::new(shape, x).py()
    }
}

#[pymethods]
impl PyNetwork {
    /// Builds a network from a JSON spec with seeded initialization.
    #[new]
    #[pyo3(signature = (spec_json, seed = 0))]
    fn new(spec_json: &str, seed: u64) -> PyResult<Self> {
        let spec: NetworkSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyNetwork { inner: build_network(&spec, seed).py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (input_shape, classes, seed = 0))]
    fn toy_cnn(input_shape: Vec<usize>, classes: usize, seed: u64) -> PyResult<Self> {
        let spec = arch::toy_cnn(&input_shape, classes).py()?;
        Ok(PyNetwork { inner: build_network(&spec, seed).py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (inputs, classes, seed = 0))]
    fn mlp(inputs: usize, classes: usize, seed: u64) -> PyResult<Self> {
        let spec = arch::mlp(&[inputs], classes).py()?;
        Ok(PyNetwork { inner: build_network(&spec, seed).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork { inner: nn::load_network(path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nn::save_network(&self.inner, path).py()
    }

    fn spec_json(&self) -> String {
        serde_json::to_string(&self.inner.spec()).expect("specs serialize")
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().to_vec()
    }

    /// All weights then biases, layer by layer.
    fn params(&self) -> Vec<f64> {
        self.inner.flat_params()
    }

    /// Logits, one list per sample.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let (logits, _) = self.inner.forward(&self.batch(x)?).py()?;
        Ok((0..logits.batch()).map(|b| logits.row(b).to_vec()).collect())
    }

    /// Batch-mean network energy E; divided by the parameter count when
    /// `normalize` is set.
    #[pyo3(signature = (x, sigma = 1e-4, normalize = false))]
    fn energy(&self, x: Vec<f64>, sigma: f64, normalize: bool) -> PyResult<f64> {
        let (_, trace) = self.inner.forward(&self.batch(x)?).py()?;
        let m = normalize.then(|| self.inner.param_count());
        Ok(energy::energy(&trace, self::sigma(sigma)?, m).value)
    }

    /// Zero-skipping operation counts for a batch.
    fn census<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        census_dict(py, &census(&self.inner, &self.batch(x)?).py()?)
    }

    fn energy_ratio(&self, x: Vec<f64>) -> PyResult<f64> {
        census_ratio(&census(&self.inner, &self.batch(x)?).py()?).py()
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(input_shape={:?}, layers={}, params={})",
            self.inner.input_shape(),
            self.inner.layers().len(),
            self.inner.param_count()
        )
    }
}

fn census_dict<'py>(py: Python<'py>, c: &OperationCensus) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let t = c.totals();
    d.set_item("samples", c.samples)?;
    d.set_item("total_macs", t.total_macs)?;
    d.set_item("skipped_macs", t.skipped_macs)?;
    d.set_item("fixed_ops", t.fixed_ops)?;
    d.set_item("energy_ratio", census_ratio(c).py()?)?;
    let layers = c
        .layers
        .iter()
        .map(|l| {
            let e = PyDict::new(py);
            e.set_item("layer", l.layer)?;
            e.set_item("kind", l.kind.as_str())?;
            e.set_item("total_macs", l.total_macs)?;
            e.set_item("skipped_macs", l.skipped_macs)?;
            e.set_item("fixed_ops", l.fixed_ops)?;
            Ok(e)
        })
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("layers", layers)?;
    Ok(d)
}

#[pyclass(name = "Dataset", module = "sponge")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic data: `kind` is `"blobs"`, `"rings"` or `"tiny-images"`.
    #[staticmethod]
    #[pyo3(signature = (kind, samples, classes, seed = 0, noise = None, dim = 2, image = (1, 16, 16), imbalance = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        kind: &str,
        samples: usize,
        classes: usize,
        seed: u64,
        noise: Option<f64>,
        dim: usize,
        image: (usize, usize, usize),
        imbalance: f64,
    ) -> PyResult<Self> {
        let spec = GenSpec {
            kind: parse_name::<GenKind>("dataset kind", kind)?,
            samples,
            classes,
            dim,
            image: [image.0, image.1, image.2],
            imbalance,
            noise,
            seed,
        };
        Ok(PyDataset { inner: data::generate(&spec).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: data::load_dataset(path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_dataset(&self.inner, path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn sample_shape(&self) -> Vec<usize> {
        self.inner.sample_shape().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    /// Features as one flat row-major list.
    #[getter]
    fn features(&self) -> Vec<f64> {
        self.inner.features().data().to_vec()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    /// Splits off `n` seeded random samples: returns (rest, held out).
    fn split_holdout(&self, n: usize, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
        let (rest, held) = self.inner.split_holdout(n, seed).py()?;
        Ok((PyDataset { inner: rest }, PyDataset { inner: held }))
    }
}

#[pyfunction]
fn l0_hat(phi: Vec<f64>, sigma: f64) -> PyResult<f64> {
    Ok(energy::l0_hat(&phi, self::sigma(sigma)?))
}

#[pyfunction]
fn l0_hat_grad(phi: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
    Ok(energy::l0_hat_grad(&phi, self::sigma(sigma)?))
}

/// Trains a copy of `net` and returns `(trained, history)`. `mode` is
/// `"clean"`, `"sponge"` or `"sanitize"`; `lam` is the magnitude of λ.
#[pyfunction]
#[pyo3(signature = (
    net, train_data, val_data, *, mode = "clean", lam = 0.0, sigma = 1e-4, poison_fraction = 0.0,
    objective = "l0_hat", normalize_by_m = true, epochs = 10, batch_size = 32, lr = 0.1,
    lr_decay = 0.95, momentum = 0.9, weight_decay = 5e-4, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    train_data: &PyDataset,
    val_data: &PyDataset,
    mode: &str,
    lam: f64,
    sigma: f64,
    poison_fraction: f64,
    objective: &str,
    normalize_by_m: bool,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    lr_decay: f64,
    momentum: f64,
    weight_decay: f64,
    seed: u64,
) -> PyResult<(PyNetwork, Vec<Bound<'py, PyDict>>)> {
    let cfg = SpongeConfig {
        lambda: lam,
        sigma: self::sigma(sigma)?,
        poison_fraction,
        mode: parse_name::<Mode>("mode", mode)?,
        objective: parse_name::<Objective>("objective", objective)?,
        normalize_by_m,
        seed,
    };
    let sgd = SgdConfig { lr, lr_decay, momentum, weight_decay };
    let settings = TrainSettings { epochs, batch_size };
    let start = net.inner.clone();
    let (trained, history) = py
        .detach(|| {
            let mut opt = OptimizerState::new(sgd, &start);
            core_train::train(&train_data.inner, &val_data.inner, start, &cfg, &mut opt, &settings)
        })
        .py()?;
    let records = history
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("val_accuracy", r.val_accuracy)?;
            d.set_item("val_energy_ratio", r.val_energy_ratio)?;
            d.set_item("lr", r.lr)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyNetwork { inner: trained }, records))
}

/// Accuracy, energy ratio, mean energy and per-layer firing fractions.
#[pyfunction]
#[pyo3(signature = (net, data, sigma = 1e-4))]
fn evaluate<'py>(py: Python<'py>, net: &PyNetwork, data: &PyDataset, sigma: f64) -> PyResult<Bound<'py, PyDict>> {
    let s = self::sigma(sigma)?;
    let ev = py.detach(|| core_train::evaluate(&net.inner, &data.inner, s)).py()?;
    let d = PyDict::new(py);
    d.set_item("accuracy", ev.accuracy)?;
    d.set_item("energy_ratio", ev.energy_ratio)?;
    d.set_item("mean_energy", ev.mean_energy)?;
    d.set_item("firing", ev.firing.fractions())?;
    d.set_item("census", census_dict(py, &ev.census)?)?;
    Ok(d)
}

/// Per-sample zero-skipping cost of `sponge` over `clean` on `data`.
#[pyfunction]
fn energy_increase(py: Python<'_>, sponge: &PyNetwork, clean: &PyNetwork, data: &PyDataset) -> PyResult<f64> {
    py.detach(|| {
        let s = sigma_default();
        let a = core_train::evaluate(&sponge.inner, &data.inner, s)?;
        let b = core_train::evaluate(&clean.inner, &data.inner, s)?;
        census_increase(&a.census, &b.census)
    })
    .py()
}

fn sigma_default() -> Sigma {
    Sigma::new(1e-4).expect("positive")
}

/// Runs a JSON experiment config file and returns the report as JSON.
/// Writes `report.json` and `model.spngnet` into `out` when given.
#[pyfunction]
#[pyo3(signature = (config_path, out = None))]
fn run_experiment(py: Python<'_>, config_path: PathBuf, out: Option<PathBuf>) -> PyResult<String> {
    let text = std::fs::read_to_string(&config_path).map_err(|e| PyOSError::new_err(e.to_string()))?;
    let cfg = ExperimentConfig::from_json(&text).py()?;
    let base = config_path.parent().map(PathBuf::from).unwrap_or_default();
    let outcome = py.detach(|| run_config(&cfg, &base)).py()?;
    if let Some(dir) = out {
        write_outcome(&outcome, &dir).py()?;
    }
    report_json(&outcome.report).py()
}

#[pymodule]
fn sponge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(l0_hat, m)?)?;
    m.add_function(wrap_pyfunction!(l0_hat_grad, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(energy_increase, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l0_hat_counts_nonzeros_at_small_sigma() {
        let v = l0_hat(vec![0.0, 1.0, -3.0], 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn bad_names_and_sigmas_are_value_errors() {
        Python::initialize();
        Python::attach(|py| {
            let e = parse_name::<Mode>("mode", "chaos").unwrap_err();
            assert!(e.is_instance_of::<PyValueError>(py));
            assert!(l0_hat(vec![1.0], 0.0).unwrap_err().is_instance_of::<PyValueError>(py));
        });
    }

    #[test]
    fn flat_batches_must_match_the_input_size() {
        let net = PyNetwork::mlp(3, 2, 0).unwrap();
        assert_eq!(net.forward(vec![0.5; 6]).unwrap().len(), 2);
        assert!(net.forward(vec![0.5; 5]).is_err());
    }

    #[test]
    fn census_dict_reports_totals() {
        Python::initialize();
        Python::attach(|py| {
            let net = PyNetwork::mlp(2, 2, 1).unwrap();
            let d = net.census(py, vec![0.0, 1.0]).unwrap();
            let skipped: u64 = d.get_item("skipped_macs").unwrap().unwrap().extract().unwrap();
            assert!(skipped >= 32);
        });
    }
}
