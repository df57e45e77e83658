//! Python bindings. Points cross the boundary as lists of float lists.

use std::path::Path;

use femda::classifiers::{classify_batch, ThresholdGrid};
use femda::datasets::{load_with_schema, DatasetSchema};
use femda::distributions::{generate_scenario as generate, ScenarioConfig};
use femda::{ContaminationSpec, LabeledDataset, Method, Observation, TrainSettings, TrainedModel};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

create_exception!(pyfemda, FemdaError, PyException);

fn py_err(e: femda::FemdaError) -> PyErr {
    FemdaError::new_err(e.to_string())
}

fn to_points(rows: Vec<Vec<f64>>) -> Vec<Observation> {
    rows.into_iter().map(Observation::from_vec).collect()
}

fn from_points(points: &[Observation]) -> Vec<Vec<f64>> {
    points.iter().map(|p| p.iter().copied().collect()).collect()
}

fn parse_method(name: &str) -> PyResult<Method> {
    name.parse::<Method>().map_err(py_err)
}

/// A labelled point cloud.
#[pyclass(name = "Dataset", module = "pyfemda", from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (points, labels, class_names = None, feature_names = None))]
    fn new(
        points: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Option<Vec<String>>,
        feature_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let k = labels.iter().max().map_or(0, |&l| l + 1);
        let m = points.first().map_or(0, Vec::len);
        let class_names = class_names.unwrap_or_else(|| (0..k).map(|c| c.to_string()).collect());
        let feature_names = feature_names.unwrap_or_else(|| (0..m).map(|j| format!("x{j}")).collect());
        let inner = LabeledDataset::new(to_points(points), labels, class_names, feature_names).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Loads a CSV file described by a schema file.
    #[staticmethod]
    fn load(schema_path: &str) -> PyResult<Self> {
        let path = Path::new(schema_path);
        let schema = DatasetSchema::from_file(path).map_err(py_err)?;
        let data_path = schema
            .resolve_data_path(path)
            .ok_or_else(|| FemdaError::new_err("schema names no data file"))?;
        let (inner, _) = load_with_schema(&data_path, &schema).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        from_points(self.inner.points())
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    #[getter]
    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    /// Stratified train/test split.
    #[pyo3(signature = (train_fraction = 0.7, seed = 0))]
    fn split(&self, train_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train, test) = femda::stratified_split(&self.inner, train_fraction, &mut rng).map_err(py_err)?;
        Ok((Self { inner: train }, Self { inner: test }))
    }

    /// Pushes a fraction of every class away from its empirical mean by a factor `lam`.
    /// Returns the new dataset and the altered indices.
    #[pyo3(signature = (fraction, lam, seed = 0))]
    fn contaminate(&self, fraction: f64, lam: f64, seed: u64) -> PyResult<(Self, Vec<usize>)> {
        let spec = ContaminationSpec::new(fraction, lam).map_err(py_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = self.inner.class_means();
        let (inner, altered) = femda::contaminate(&self.inner, &centers, &spec, &mut rng).map_err(py_err)?;
        Ok((Self { inner }, altered))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, dim={}, classes={:?})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.class_names()
        )
    }
}

/// A fitted classifier.
#[pyclass(name = "Model", module = "pyfemda", from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method().name()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.params().iter().map(|p| p.mean.iter().copied().collect()).collect()
    }

    /// Row-major dispersion matrices, one per class.
    #[getter]
    fn dispersions(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner
            .params()
            .iter()
            .map(|p| {
                let s = p.dispersion.matrix();
                s.row_iter().map(|r| r.iter().copied().collect()).collect()
            })
            .collect()
    }

    #[getter]
    fn nu(&self) -> Option<Vec<f64>> {
        self.inner.nu().map(<[f64]>::to_vec)
    }

    #[getter]
    fn threshold(&self) -> Option<f64> {
        self.inner.gqda_threshold()
    }

    #[getter]
    fn convergence_failures(&self) -> usize {
        self.inner.convergence_failures()
    }

    /// Per-class scores for one point; the prediction is the smallest.
    fn scores(&self, point: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.scores(&Observation::from_vec(point)).map_err(py_err)
    }

    fn predict(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        classify_batch(&self.inner, &to_points(points)).map_err(py_err)
    }

    fn accuracy(&self, data: &PyDataset) -> PyResult<f64> {
        femda::accuracy(&self.inner, &data.inner).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainedModel::from_json(text).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Model(method={}, classes={:?})", self.inner.method().name(), self.inner.class_names())
    }
}

/// Fits `method` ("QDA", "t-QDA", "GQDA", "RGQDA" or "FEMDA") on `data`.
#[pyfunction]
#[pyo3(signature = (method, data, tol = None, max_iter = None))]
fn train(method: &str, data: &PyDataset, tol: Option<f64>, max_iter: Option<usize>) -> PyResult<PyModel> {
    let defaults = TrainSettings::default();
    let settings = TrainSettings {
        tol: tol.unwrap_or(defaults.tol),
        femda_max_iter: max_iter.unwrap_or(defaults.femda_max_iter),
        student_max_iter: max_iter.unwrap_or(defaults.student_max_iter),
        threshold_grid: ThresholdGrid::default(),
    };
    let inner = femda::train(parse_method(method)?, &data.inner, &settings).map_err(py_err)?;
    Ok(PyModel { inner })
}

/// Draws a synthetic train/test pair, e.g. `generate_scenario("green:0.5GG-0.5T", m=5, k=3)`.
#[pyfunction]
#[pyo3(signature = (scenario, m = 10, k = 5, n_train = 5000, n_test = 20000, seed = 0))]
fn generate_scenario(
    scenario: &str,
    m: usize,
    k: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> PyResult<(PyDataset, PyDataset)> {
    let mut config = ScenarioConfig::full_scale(scenario.parse().map_err(py_err)?);
    config.m = m;
    config.k = k;
    config.n_train = n_train;
    config.n_test = n_test;
    config.tau_range.hi = m as f64;
    config.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = generate(&config, &mut rng).map_err(py_err)?;
    Ok((PyDataset { inner: draw.train }, PyDataset { inner: draw.test }))
}

#[pymodule]
pub fn pyfemda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add("FemdaError", m.py().get_type::<FemdaError>())?;
    m.add(
        "METHODS",
        Method::ALL.iter().map(|x| x.name()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
