//! Python bindings: configs and full stream runs, the model, and the
//! standalone numeric operations. Matrices cross the boundary as lists of rows.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

use cilkit::backbone::LayerSpec;
use cilkit::checkpoint::Checkpoint;
use cilkit::harness::dataset::generate_synthetic;
use cilkit::harness::metrics;
use cilkit::harness::report::{format_results, format_table, write_run, RunSummary};
use cilkit::harness::runner;
use cilkit::subset::{self, KMeansParams, SelectionCriterion};
use cilkit::{losses, numkit, Activation, ClassId, Error, Matrix, Vector};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Input { .. } => PyIOError::new_err(e.to_string()),
        Error::State(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Stream { ref source, .. } if matches!(**source, Error::State(_)) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix needs at least one row"));
    }
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn labels(ids: Vec<u32>) -> Vec<ClassId> {
    ids.into_iter().map(ClassId).collect()
}

/// Every stream setting; keyword arguments override the defaults and unknown
/// names raise `ValueError`.
#[pyclass(name = "StreamConfig", from_py_object)]
#[derive(Clone)]
struct PyStreamConfig {
    inner: cilkit::harness::StreamConfig,
}

#[pymethods]
impl PyStreamConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(cilkit::harness::StreamConfig::default())
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        if let Some(kw) = kwargs {
            let map = value.as_object_mut().expect("config serializes to an object");
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let json = if v.is_none() {
                    serde_json::Value::Null
                } else if v.is_instance_of::<PyBool>() {
                    v.extract::<bool>()?.into()
                } else if v.is_instance_of::<PyInt>() {
                    v.extract::<i64>()?.into()
                } else if v.is_instance_of::<PyFloat>() {
                    v.extract::<f64>()?.into()
                } else if v.is_instance_of::<PyString>() {
                    v.extract::<String>()?.into()
                } else {
                    return Err(PyValueError::new_err(format!("unsupported value for {key}")));
                };
                map.insert(key, json);
            }
        }
        let inner: cilkit::harness::StreamConfig =
            serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = cilkit::harness::StreamConfig::from_toml_str(text).map_err(PyValueError::new_err)?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: cilkit::harness::StreamConfig::load(&path).map_err(to_py)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    fn __repr__(&self) -> String {
        format!("StreamConfig(seed={}, epsilon={}, classes_per_task={})", self.inner.seed, self.inner.epsilon, self.inner.classes_per_task)
    }
}

/// Outcome of a full stream run.
#[pyclass(name = "StreamRun")]
struct PyStreamRun {
    config: cilkit::harness::StreamConfig,
    run: runner::StreamRun,
}

#[pymethods]
impl PyStreamRun {
    /// `accuracy[t][j]`: task `j` after stream `t`, both 0-based.
    #[getter]
    fn accuracy(&self) -> Vec<Vec<f64>> {
        self.run.metrics.accuracy.clone()
    }

    #[getter]
    fn overall_accuracy(&self) -> Vec<f64> {
        self.run.metrics.overall_accuracy.clone()
    }

    #[getter]
    fn forgetting(&self) -> Vec<f64> {
        self.run.metrics.forgetting_curve()
    }

    fn average_incremental_accuracy(&self) -> PyResult<f64> {
        metrics::average_incremental_accuracy(&self.run.metrics).map_err(to_py)
    }

    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string(&RunSummary::of(&self.run)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// The flat `stream,accuracy,forgetting` table.
    fn table(&self) -> String {
        format_table(&self.run)
    }

    /// One JSON record per stream plus a summary line.
    fn results_jsonl(&self) -> PyResult<String> {
        format_results(&self.config, &self.run).map_err(to_py)
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        write_run(&dir, &self.config, &self.run).map_err(to_py)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        let r = &self.run;
        Checkpoint::new(r.records.len(), r.model.clone(), r.memory.clone(), r.units.clone())
            .save(&path)
            .map_err(to_py)
    }

    /// Stored exemplar count per class id.
    fn memory(&self) -> BTreeMap<u32, usize> {
        self.run.memory.classes().map(|(c, s)| (c.0, s.samples.rows())).collect()
    }

    fn model(&self) -> PyModel {
        PyModel { inner: self.run.model.clone() }
    }
}

/// Runs the configured stream end to end. Releases the GIL while training.
#[pyfunction]
fn run(py: Python<'_>, config: PyStreamConfig) -> PyResult<PyStreamRun> {
    let cfg = config.inner;
    let run = py.detach(|| runner::run_config(&cfg)).map_err(to_py)?;
    Ok(PyStreamRun { config: cfg, run })
}

#[pyclass(name = "IncrementalModel", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: cilkit::IncrementalModel,
}

#[pymethods]
impl PyModel {
    /// `input → hidden ReLU → feature_dim identity`; `hidden = 0` drops the
    /// hidden layer. Starts with no heads.
    #[new]
    #[pyo3(signature = (input_dim, classes_per_head, seed, hidden=64, feature_dim=128))]
    fn new(input_dim: usize, classes_per_head: usize, seed: u64, hidden: usize, feature_dim: usize) -> PyResult<Self> {
        let mut trunk = Vec::new();
        if hidden > 0 {
            trunk.push(LayerSpec::new(hidden, Activation::Relu));
        }
        trunk.push(LayerSpec::new(feature_dim, Activation::Identity));
        let inner = cilkit::IncrementalModel::new(input_dim, &trunk, classes_per_head, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn expand_head(&mut self, k: usize, seed: u64) -> PyResult<()> {
        self.inner.expand_head(k, seed).map_err(to_py)
    }

    fn logits(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.forward(&matrix(x)?).map_err(to_py)?.logits))
    }

    fn features(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.features(&matrix(x)?).map_err(to_py)?))
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    #[getter]
    fn head_count(&self) -> usize {
        self.inner.head_count()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }
}

#[pyfunction]
#[pyo3(signature = (z, temperature=1.0))]
fn softmax(z: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    Ok(numkit::softmax(&z, temperature).map_err(to_py)?.into_inner())
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    numkit::cosine_similarity(&a, &b).map_err(to_py)
}

#[pyfunction]
fn entropy(p: Vec<f64>) -> PyResult<f64> {
    numkit::entropy(&p).map_err(to_py)
}

#[pyfunction]
fn membership_probabilities(feature: Vec<f64>, centroids: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let c: Vec<Vector> = centroids.into_iter().map(Vector::new).collect();
    Ok(subset::membership_probabilities(&feature, &c).map_err(to_py)?.into_inner())
}

/// Mean cross-entropy and its gradient with respect to the logits.
#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (v, g) = losses::cross_entropy(&matrix(logits)?, &labels).map_err(to_py)?;
    Ok((v, rows(&g)))
}

/// `(cross_entropy, regularizer, total, grad_wrt_logits)`.
#[pyfunction]
#[pyo3(signature = (student_logits, labels, teacher_old_logits, old_class_count, temperature=2.0, regularizer_weight=1.0))]
fn total_loss(
    student_logits: Vec<Vec<f64>>,
    labels: Vec<usize>,
    teacher_old_logits: Vec<Vec<f64>>,
    old_class_count: usize,
    temperature: f64,
    regularizer_weight: f64,
) -> PyResult<(f64, f64, f64, Vec<Vec<f64>>)> {
    let student = matrix(student_logits)?;
    let teacher = if old_class_count == 0 {
        Matrix::zeros(student.rows(), 0)
    } else {
        matrix(teacher_old_logits)?
    };
    let b = losses::total_loss(&student, &labels, &teacher, old_class_count, temperature, regularizer_weight)
        .map_err(to_py)?;
    Ok((b.cross_entropy, b.regularizer, b.total, rows(&b.grad_wrt_logits)))
}

type ClusterTuple = (Vec<Vec<f64>>, Vec<usize>, f64, Vec<f64>);

/// `(centroids, assignments, inertia, inertia_history)` of the best restart.
#[pyfunction]
#[pyo3(signature = (features, k, seed, max_iter=100, tol=1e-6, restarts=5))]
fn kmeans(
    features: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    restarts: usize,
) -> PyResult<ClusterTuple> {
    let params = KMeansParams { max_iter, tol, restarts };
    let m = subset::kmeans_best_of(&matrix(features)?, k, seed, &params).map_err(to_py)?;
    let centroids = m.centroids.into_iter().map(Vector::into_inner).collect();
    Ok((centroids, m.assignments, m.inertia, m.inertia_history))
}

/// Kept row indices per class; `criterion` is `"entropy"`, `"distance"` or `"random"`.
#[pyfunction]
#[pyo3(signature = (features, labels, epsilon, seed, criterion="entropy"))]
fn select_exemplars(
    features: Vec<Vec<f64>>,
    labels: Vec<u32>,
    epsilon: f64,
    seed: u64,
    criterion: &str,
) -> PyResult<BTreeMap<u32, Vec<usize>>> {
    let labels = self::labels(labels);
    let sel = match criterion {
        "random" => subset::select_random(&labels, epsilon, seed),
        "entropy" | "distance" => {
            let c = if criterion == "entropy" { SelectionCriterion::Entropy } else { SelectionCriterion::Distance };
            subset::select_exemplars(&matrix(features)?, &labels, epsilon, seed, c, &KMeansParams::default())
        }
        other => return Err(PyValueError::new_err(format!("unknown criterion {other:?}"))),
    }
    .map_err(to_py)?;
    Ok(sel.kept.into_iter().map(|(c, v)| (c.0, v)).collect())
}

/// `(features, labels)` of unit-variance Gaussian blobs.
#[pyfunction]
#[pyo3(signature = (classes, samples, dim, separation, seed=0))]
fn synthetic(classes: usize, samples: usize, dim: usize, separation: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<u32>)> {
    let d = generate_synthetic(classes, samples, dim, separation, seed).map_err(to_py)?;
    Ok((rows(&d.features), d.labels.iter().map(|c| c.0).collect()))
}

/// Mean of the per-stream accuracies after the first.
#[pyfunction]
fn average_incremental_accuracy(per_stream: Vec<f64>) -> PyResult<f64> {
    metrics::average_of_incremental(&per_stream).map_err(to_py)
}

#[pymodule]
pub fn pycilkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStreamConfig>()?;
    m.add_class::<PyStreamRun>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(membership_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(select_exemplars, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(average_incremental_accuracy, m)?)?;
    Ok(())
}
