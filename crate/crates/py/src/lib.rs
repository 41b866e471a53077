//! Python bindings: network specs and geometries, datasets, both trainers,
//! metrics and the gradient check.

use debinn::data::{self, Split, TwoMoons};
use debinn::eval::{self, ConfusionMatrix};
use debinn::ga::{self, GaConfig, PopulationSize};
use debinn::gd::{self, DerivativeMode, GdConfig, NormBackward};
use debinn::gradcheck::{finite_difference_oracle, GradCheckConfig, DEFAULT_FD_STEP};
use debinn::loss::{ClassWeighting, ClassWeights};
use debinn::{ActivationKind, InitScheme, MappingKind};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(debinn, DivergedError, PyException, "Training produced a non-finite or exploding loss.");

fn err(e: debinn::Error) -> PyErr {
    match e {
        debinn::Error::Diverged { .. } => DivergedError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn bad(msg: String) -> PyErr {
    PyValueError::new_err(msg)
}

fn parse_mapping(name: &str, sigma: f64) -> PyResult<MappingKind> {
    match name {
        "gaussian" => Ok(MappingKind::Gaussian { sigma }),
        "inverse" => Ok(MappingKind::Inverse),
        _ => Err(bad(format!("unknown mapping `{name}` (gaussian, inverse)"))),
    }
}

fn parse_activation(name: &str) -> PyResult<ActivationKind> {
    match name {
        "sigmoid" => Ok(ActivationKind::Sigmoid),
        "tanh" => Ok(ActivationKind::Tanh),
        "relu" => Ok(ActivationKind::Relu),
        _ => Err(bad(format!("unknown activation `{name}` (sigmoid, tanh, relu)"))),
    }
}

fn parse_init(name: &str) -> PyResult<InitScheme> {
    match name {
        "random" => Ok(InitScheme::Random),
        "onion" => Ok(InitScheme::Onion),
        "singularity" => Ok(InitScheme::Singularity),
        _ => Err(bad(format!("unknown init `{name}` (random, onion, singularity)"))),
    }
}

fn parse_norm_backward(name: &str) -> PyResult<NormBackward> {
    match name {
        "diagonal" => Ok(NormBackward::Diagonal),
        "full" => Ok(NormBackward::Full),
        _ => Err(bad(format!("unknown norm backward `{name}` (diagonal, full)"))),
    }
}

fn parse_weighting(name: &str) -> PyResult<ClassWeighting> {
    match name {
        "inverse_frequency" => Ok(ClassWeighting::InverseFrequency),
        "uniform" => Ok(ClassWeighting::Uniform),
        _ => Err(bad(format!("unknown class weighting `{name}` (inverse_frequency, uniform)"))),
    }
}

#[pyclass(name = "NetworkSpec", module = "debinn", skip_from_py_object)]
#[derive(Clone)]
pub struct PyNetworkSpec {
    inner: debinn::NetworkSpec,
}

#[pymethods]
impl PyNetworkSpec {
    #[new]
    #[pyo3(signature = (
        input_dim, hidden_widths, output_dim, *, mapping = "gaussian", sigma = 0.5,
        activation = "sigmoid", init = "random", groupnorm = true, group_size = None,
        weight_standardization = false, l1 = 0.0, l2 = 0.0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        mapping: &str,
        sigma: f64,
        activation: &str,
        init: &str,
        groupnorm: bool,
        group_size: Option<usize>,
        weight_standardization: bool,
        l1: f64,
        l2: f64,
    ) -> PyResult<Self> {
        let inner = debinn::NetworkSpec {
            input_dim,
            hidden_widths,
            output_dim,
            mapping: parse_mapping(mapping, sigma)?,
            activation: parse_activation(activation)?,
            init: parse_init(init)?,
            groupnorm,
            group_size,
            weight_standardization,
            l1,
            l2,
        };
        inner.validate().map_err(err)?;
        Ok(PyNetworkSpec { inner })
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn hidden_widths(&self) -> Vec<usize> {
        self.inner.hidden_widths.clone()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim
    }

    /// Number of spatial parameters (soma and axon coordinates).
    fn parameter_count(&self) -> PyResult<usize> {
        debinn::parameter_count(&self.inner).map_err(err)
    }

    /// Chromosome length: coordinates plus one (γ, β) pair per normalized neuron.
    fn genome_len(&self) -> usize {
        ga::genome_len(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Dataset", module = "debinn", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Labels are class indices into `class_names` (default `"0"`, `"1"`, ...).
    #[new]
    #[pyo3(signature = (features, labels, class_names = None, feature_names = None))]
    fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Option<Vec<String>>,
        feature_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let dim = features.first().map_or(0, Vec::len);
        let classes = class_names
            .unwrap_or_else(|| (0..labels.iter().max().map_or(0, |m| m + 1)).map(|c| c.to_string()).collect());
        let names = feature_names.unwrap_or_else(|| (0..dim).map(|k| format!("x{k}")).collect());
        let inner = data::Dataset::new(features, labels, classes, names, Split::Train).map_err(err)?;
        Ok(PyDataset { inner })
    }

    /// Train and test splits of the two-moons generator.
    #[staticmethod]
    #[pyo3(signature = (train_counts = (406, 394), test_counts = (106, 94), noise_std = 0.1, seed = 0))]
    fn two_moons(
        train_counts: (usize, usize),
        test_counts: (usize, usize),
        noise_std: f64,
        seed: u64,
    ) -> PyResult<(PyDataset, PyDataset)> {
        let (train, test) = TwoMoons {
            train_counts: [train_counts.0, train_counts.1],
            test_counts: [test_counts.0, test_counts.1],
            noise_std,
            seed,
        }
        .generate()
        .map_err(err)?;
        Ok((PyDataset { inner: train }, PyDataset { inner: test }))
    }

    #[staticmethod]
    #[pyo3(signature = (path, label_column = "label", class_names = None))]
    fn load_csv(path: &str, label_column: &str, class_names: Option<Vec<String>>) -> PyResult<Self> {
        let inner = data::load_csv(path, label_column, class_names.as_deref(), Split::Train).map_err(err)?;
        Ok(PyDataset { inner })
    }

    #[pyo3(signature = (path, label_column = "label"))]
    fn save_csv(&self, path: &str, label_column: &str) -> PyResult<()> {
        self.inner.save_csv(path, label_column).map_err(err)
    }

    /// Z-scores this split and `other` with this split's statistics.
    fn standardize(&self, other: PyRef<'_, PyDataset>) -> PyResult<(PyDataset, PyDataset)> {
        let (a, b, _) = data::standardize(&self.inner, &other.inner).map_err(err)?;
        Ok((PyDataset { inner: a }, PyDataset { inner: b }))
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(samples={}, features={}, classes={:?})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.class_names
        )
    }
}

#[pyclass(name = "Geometry", module = "debinn", skip_from_py_object)]
#[derive(Clone)]
pub struct PyGeometry {
    inner: debinn::NetworkGeometry,
}

fn points(g: &debinn::NetworkGeometry, soma: bool) -> Vec<Vec<Option<(f64, f64, f64)>>> {
    g.layers
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|n| if soma { n.soma } else { n.axon }.map(|p| (p.x, p.y, p.z)))
                .collect()
        })
        .collect()
}

#[pymethods]
impl PyGeometry {
    /// Initial placement; `scheme` defaults to `NetworkSpec::init`.
    #[staticmethod]
    #[pyo3(signature = (spec, seed = 0, scheme = None))]
    fn init(spec: PyRef<'_, PyNetworkSpec>, seed: u64, scheme: Option<&str>) -> PyResult<Self> {
        let scheme = match scheme {
            Some(s) => parse_init(s)?,
            None => spec.inner.init,
        };
        let inner = debinn::init_geometry(&spec.inner, scheme, seed).map_err(err)?;
        Ok(PyGeometry { inner })
    }

    #[staticmethod]
    fn load(spec: PyRef<'_, PyNetworkSpec>, path: &str) -> PyResult<Self> {
        let inner = debinn::NetworkGeometry::load(&spec.inner, path).map_err(err)?;
        Ok(PyGeometry { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[staticmethod]
    fn from_genome(spec: PyRef<'_, PyNetworkSpec>, genes: Vec<f64>) -> PyResult<Self> {
        let genome = ga::Genome {
            genes,
            spatial_len: debinn::parameter_count(&spec.inner).map_err(err)?,
        };
        let inner = ga::decode(&genome, &spec.inner).map_err(err)?;
        Ok(PyGeometry { inner })
    }

    /// Flat chromosome: somas, then axons, then (γ, β) pairs.
    fn genome(&self) -> Vec<f64> {
        ga::encode(&self.inner).genes
    }

    #[getter]
    fn spec(&self) -> PyNetworkSpec {
        PyNetworkSpec {
            inner: self.inner.spec.clone(),
        }
    }

    /// Per layer, per neuron: `(x, y, z)` or `None` for input neurons.
    fn somas(&self) -> Vec<Vec<Option<(f64, f64, f64)>>> {
        points(&self.inner, true)
    }

    /// Per layer, per neuron: `(x, y, z)` or `None` for output neurons.
    fn axons(&self) -> Vec<Vec<Option<(f64, f64, f64)>>> {
        points(&self.inner, false)
    }

    /// Connection weights per layer pair, rows = receiving neurons.
    fn weights(&self) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let net = debinn::Network::compile(&self.inner).map_err(err)?;
        Ok(net
            .layers
            .iter()
            .map(|l| l.effective.chunks(l.inputs()).map(<[f64]>::to_vec).collect())
            .collect())
    }

    fn probabilities(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let net = debinn::Network::compile(&self.inner).map_err(err)?;
        net.probabilities(&x).map_err(err)
    }

    /// Predicted class of each row.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let net = debinn::Network::compile(&self.inner).map_err(err)?;
        rows.iter().map(|x| net.predict(x).map_err(err)).collect()
    }

    fn evaluate<'py>(&self, py: Python<'py>, dataset: PyRef<'_, PyDataset>) -> PyResult<Bound<'py, PyDict>> {
        let net = debinn::Network::compile(&self.inner).map_err(err)?;
        metrics_dict(py, &eval::evaluate(&net, &dataset.inner).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Geometry(widths={:?})", self.inner.spec.layer_widths())
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &eval::Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("bacc", m.bacc)?;
    d.set_item("sensitivity", m.sensitivity)?;
    d.set_item("specificity", m.specificity)?;
    let k = m.confusion.classes;
    let rows: Vec<Vec<u64>> = (0..k).map(|t| (0..k).map(|p| m.confusion.get(t, p)).collect()).collect();
    d.set_item("confusion", rows)?;
    Ok(d)
}

/// Genetic algorithm. Returns `(geometry, history)` with one dict per
/// generation, generation 0 included.
#[pyfunction]
#[pyo3(signature = (
    spec, train, test = None, *, population = None, generations = 100, tournament_size = 3,
    mutation_rate = 0.05, mutation_scale = 0.1, elitism = 1, class_weighting = "inverse_frequency", seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train_ga<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyNetworkSpec>,
    train: PyRef<'_, PyDataset>,
    test: Option<PyRef<'_, PyDataset>>,
    population: Option<usize>,
    generations: usize,
    tournament_size: usize,
    mutation_rate: f64,
    mutation_scale: f64,
    elitism: usize,
    class_weighting: &str,
    seed: u64,
) -> PyResult<(PyGeometry, Vec<Bound<'py, PyDict>>)> {
    let cfg = GaConfig {
        population: population.map_or(PopulationSize::Auto, PopulationSize::Fixed),
        generations,
        tournament_size,
        mutation_rate,
        mutation_scale,
        elitism,
        class_weighting: parse_weighting(class_weighting)?,
        rng_seed: seed,
    };
    let out = ga::train_ga(&spec.inner, &train.inner, test.as_ref().map(|t| &t.inner), &cfg).map_err(err)?;
    let history = out
        .history
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("generation", r.generation)?;
            d.set_item("best_fitness", r.best_fitness)?;
            d.set_item("mean_fitness", r.mean_fitness)?;
            d.set_item("train_bacc", r.train_bacc)?;
            d.set_item("test_bacc", r.test_bacc)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((PyGeometry { inner: out.geometry }, history))
}

/// Spatial backpropagation. Returns `(geometry, curve)` with one dict per
/// epoch. Raises `DivergedError` when the loss blows up.
#[pyfunction]
#[pyo3(signature = (
    spec, train, test = None, *, learning_rate = 0.1, epochs = 250, batch_size = None,
    derivative_mode = None, norm_backward = "diagonal", class_weighting = "inverse_frequency", seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train_gd<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyNetworkSpec>,
    train: PyRef<'_, PyDataset>,
    test: Option<PyRef<'_, PyDataset>>,
    learning_rate: f64,
    epochs: usize,
    batch_size: Option<usize>,
    derivative_mode: Option<&str>,
    norm_backward: &str,
    class_weighting: &str,
    seed: u64,
) -> PyResult<(PyGeometry, Vec<Bound<'py, PyDict>>)> {
    let derivative_mode = match derivative_mode {
        None => None,
        Some("exact") => Some(DerivativeMode::Exact),
        Some("linear_surrogate") => Some(DerivativeMode::LinearSurrogate),
        Some(other) => return Err(bad(format!("unknown derivative mode `{other}` (exact, linear_surrogate)"))),
    };
    let cfg = GdConfig {
        learning_rate,
        epochs,
        derivative_mode,
        norm_backward: parse_norm_backward(norm_backward)?,
        batch_size,
        class_weighting: parse_weighting(class_weighting)?,
        rng_seed: seed,
    };
    let out = gd::train_gd(&spec.inner, &train.inner, test.as_ref().map(|t| &t.inner), &cfg).map_err(err)?;
    let curve = out
        .curve
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item(
                "phase",
                match r.phase {
                    gd::Phase::Soma => "soma",
                    gd::Phase::Axon => "axon",
                },
            )?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("train_bacc", r.train_bacc)?;
            d.set_item("test_bacc", r.test_bacc)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((PyGeometry { inner: out.geometry }, curve))
}

/// Analytic coordinate gradients against finite differences on `batch`.
#[pyfunction]
#[pyo3(signature = (geometry, batch, *, norm_backward = "diagonal", step = DEFAULT_FD_STEP))]
fn gradcheck<'py>(
    py: Python<'py>,
    geometry: PyRef<'_, PyGeometry>,
    batch: PyRef<'_, PyDataset>,
    norm_backward: &str,
    step: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = GradCheckConfig {
        step,
        norm_backward: parse_norm_backward(norm_backward)?,
        ..Default::default()
    };
    let weights = ClassWeights::uniform(batch.inner.class_count);
    let r = finite_difference_oracle(&geometry.inner, &batch.inner, &weights, &cfg).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("max_rel_error", r.max_rel_error)?;
    d.set_item("max_abs_error", r.max_abs_error)?;
    d.set_item("worst_index", r.worst_index)?;
    d.set_item("analytic", r.analytic)?;
    d.set_item("numeric", r.numeric)?;
    Ok(d)
}

/// BAcc, Se, Sp and the confusion matrix of predicted vs true labels.
#[pyfunction]
#[pyo3(signature = (truth, predicted, classes, positive_class = 1))]
fn metrics<'py>(
    py: Python<'py>,
    truth: Vec<usize>,
    predicted: Vec<usize>,
    classes: usize,
    positive_class: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cm = ConfusionMatrix::from_predictions(&truth, &predicted, classes).map_err(err)?;
    metrics_dict(py, &eval::Metrics::from_confusion(cm, positive_class).map_err(err)?)
}

/// Two-sided Mann-Whitney U test: `(u, p, exact)`.
#[pyfunction]
fn mann_whitney(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64, bool)> {
    let r = eval::mann_whitney_u(&xs, &ys).map_err(err)?;
    Ok((r.u, r.p, r.exact))
}

#[pymodule]
#[pyo3(name = "debinn")]
fn debinn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetworkSpec>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGeometry>()?;
    m.add_function(wrap_pyfunction!(train_ga, m)?)?;
    m.add_function(wrap_pyfunction!(train_gd, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney, m)?)?;
    m.add("DivergedError", m.py().get_type::<DivergedError>())?;
    Ok(())
}
