//! Python bindings: datasets, clustering, the classic and robust trainers,
//! model persistence, metrics, and the sweep harness, exposed as the
//! `amnn` module. Matrices cross the boundary as plain nested lists.

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use amnn_core::clustering::{dpc, CenterPolicy};
use amnn_core::data::{self, Dataset, LabelColumn, NoiseKind, NoiseSpec, SynthSpec};
use amnn_core::error::Error;
use amnn_core::experiment::{cmd_sweep, parse_config, TrainedModel};
use amnn_core::gating::fuzzy_membership;
use amnn_core::metrics::{self, MetricsReport};
use amnn_core::network::{
    load_model, save_model, train_amnn, train_classic, SavedModel, StandardizerRecord,
    TrainConfig,
};
use amnn_core::robust::{self, RobustConfig};

fn pyerr(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("feature rows have unequal lengths"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_matrix(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn noise_kind(name: &str) -> PyResult<NoiseKind> {
    match name {
        "symmetric" => Ok(NoiseKind::Symmetric),
        "pair_asymmetric" => Ok(NoiseKind::PairAsymmetric),
        other => Err(PyValueError::new_err(format!("unknown noise kind {other:?}"))),
    }
}

fn policy(fixed: Option<usize>, spread: f64) -> CenterPolicy {
    match fixed {
        Some(g) => CenterPolicy::Fixed(g),
        None => CenterPolicy::Auto(spread),
    }
}

fn report_dict(report: &MetricsReport) -> HashMap<String, f64> {
    HashMap::from([
        ("accuracy".to_string(), report.accuracy),
        ("weighted_precision".to_string(), report.weighted_precision),
        ("weighted_recall".to_string(), report.weighted_recall),
        ("weighted_f1".to_string(), report.weighted_f1),
        ("kappa".to_string(), report.kappa),
    ])
}

/// A feature matrix with integer class labels.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> PyResult<Self> {
        let inner = Dataset::new(to_matrix(features)?, labels, class_count).map_err(pyerr)?;
        Ok(PyDataset { inner })
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        from_matrix(&self.inner.features)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Stratified split into (train, test) by the given test ratio.
    fn split(&self, test_ratio: f64, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
        let (train, test) = data::split(&self.inner, test_ratio, seed).map_err(pyerr)?;
        Ok((PyDataset { inner: train }, PyDataset { inner: test }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, dim={}, classes={})",
            self.inner.n(),
            self.inner.dim(),
            self.inner.class_count
        )
    }
}

/// Gaussian blob synthesis: one isotropic cluster per class on a diagonal
/// line of centers.
#[pyfunction]
#[pyo3(signature = (class_counts, dimension, center_separation, cluster_stddev, seed=0))]
fn synth_dataset(
    class_counts: Vec<usize>,
    dimension: usize,
    center_separation: f64,
    cluster_stddev: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let spec = SynthSpec { class_counts, dimension, center_separation, cluster_stddev, seed };
    Ok(PyDataset { inner: data::synthesize(&spec).map_err(pyerr)? })
}

/// CSV load; the label column is selected by name, or by 0-based index when
/// `label_index` is given instead.
#[pyfunction]
#[pyo3(signature = (path, label="label", label_index=None))]
fn load_csv(path: PathBuf, label: &str, label_index: Option<usize>) -> PyResult<PyDataset> {
    let column = match label_index {
        Some(i) => LabelColumn::Index(i),
        None => LabelColumn::Name(label.to_string()),
    };
    let (ds, _) = data::load_csv_with_mapping(&path, &column).map_err(pyerr)?;
    Ok(PyDataset { inner: ds })
}

/// Per-feature z-scoring fitted on train and applied to both splits.
/// Returns (train, test, means, stds).
#[pyfunction]
fn standardize(
    train: &PyDataset,
    test: &PyDataset,
) -> PyResult<(PyDataset, PyDataset, Vec<f64>, Vec<f64>)> {
    let (tr, te, means, stds) = data::standardize(&train.inner, &test.inner).map_err(pyerr)?;
    Ok((PyDataset { inner: tr }, PyDataset { inner: te }, means, stds))
}

/// Label corruption at an exact flip count of round(rate * n).
/// Returns (noisy_labels, flipped_mask).
#[pyfunction]
#[pyo3(signature = (labels, class_count, rate, seed=0, kind="symmetric"))]
fn inject_noise(
    labels: Vec<usize>,
    class_count: usize,
    rate: f64,
    seed: u64,
    kind: &str,
) -> PyResult<(Vec<usize>, Vec<bool>)> {
    let spec = NoiseSpec { kind: noise_kind(kind)?, rate, seed };
    data::inject_noise(&labels, &spec, class_count).map_err(pyerr)
}

/// Density-peak clustering. Returns a dict with centers, assignments, and
/// the decision-graph columns alpha, beta, gamma.
#[pyfunction]
#[pyo3(signature = (features, fixed=None, spread=3.0))]
fn cluster(
    py: Python<'_>,
    features: Vec<Vec<f64>>,
    fixed: Option<usize>,
    spread: f64,
) -> PyResult<Py<PyAny>> {
    let m = to_matrix(features)?;
    let (model, graph) = dpc(&m, &policy(fixed, spread)).map_err(pyerr)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("centers", model.centers)?;
    dict.set_item("assignments", model.assignments)?;
    dict.set_item("alpha", graph.alpha)?;
    dict.set_item("beta", graph.beta)?;
    dict.set_item("gamma", graph.gamma)?;
    Ok(dict.into())
}

/// Fuzzy membership matrix, centers x samples.
#[pyfunction]
#[pyo3(signature = (features, centers, denom=0.02))]
fn membership(
    features: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    denom: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let f = to_matrix(features)?;
    let c = to_matrix(centers)?;
    let m = fuzzy_membership(&f, &c, denom).map_err(pyerr)?;
    Ok(from_matrix(&m.g))
}

/// A trained classifier (single network or gated modular ensemble) with an
/// optional embedded standardizer applied at prediction time.
#[pyclass(name = "Model")]
struct PyModel {
    inner: TrainedModel,
    standardizer: Option<StandardizerRecord>,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner {
            TrainedModel::Classic(_) => "mlp",
            TrainedModel::Modular(_) => "amnn",
        }
    }

    /// Attach feature means/stds so predict standardizes its input.
    fn set_standardizer(&mut self, means: Vec<f64>, stds: Vec<f64>) {
        self.standardizer = Some(StandardizerRecord { means, stds });
    }

    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let mut m = to_matrix(features)?;
        if let Some(s) = &self.standardizer {
            m = apply_standardizer_matrix(&m, s)?;
        }
        self.inner.predict(&m).map_err(pyerr)
    }

    /// Predictions and metric dict against a labeled dataset.
    fn evaluate(&self, dataset: &PyDataset) -> PyResult<HashMap<String, f64>> {
        let mut features = dataset.inner.features.clone();
        if let Some(s) = &self.standardizer {
            features = apply_standardizer_matrix(&features, s)?;
        }
        let predictions = self.inner.predict(&features).map_err(pyerr)?;
        let cm = metrics::confusion(&dataset.inner.labels, &predictions, dataset.inner.class_count)
            .map_err(pyerr)?;
        Ok(report_dict(&metrics::report(&cm).map_err(pyerr)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.inner.to_saved(self.standardizer.clone())).map_err(pyerr)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?})", self.kind())
    }
}

fn apply_standardizer_matrix(
    features: &Array2<f64>,
    s: &StandardizerRecord,
) -> PyResult<Array2<f64>> {
    if features.ncols() != s.means.len() {
        return Err(PyValueError::new_err(format!(
            "feature dim {} vs standardizer dim {}",
            features.ncols(),
            s.means.len()
        )));
    }
    let mut out = features.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - s.means[j]) / s.stds[j];
        }
    }
    Ok(out)
}

#[pyfunction]
fn load(path: PathBuf) -> PyResult<PyModel> {
    let saved = load_model(&path).map_err(pyerr)?;
    let standardizer = saved.standardizer().cloned();
    let inner = match &saved {
        SavedModel::Mlp(record) => TrainedModel::Classic(record.to_mlp().map_err(pyerr)?),
        SavedModel::Amnn(record) => TrainedModel::Modular(record.to_model().map_err(pyerr)?),
    };
    Ok(PyModel { inner, standardizer })
}

fn classic_config(
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    target_error: Option<f64>,
) -> TrainConfig {
    TrainConfig {
        learning_rate,
        epochs,
        batch_size,
        target_error: target_error.unwrap_or(f64::INFINITY),
        seed,
    }
}

/// Classic squared-error backprop with logistic activations.
#[pyfunction]
#[pyo3(signature = (dataset, hidden=vec![20], learning_rate=1e-4, epochs=20, batch_size=128, seed=0, target_error=None))]
#[allow(clippy::too_many_arguments)]
fn fit_classic(
    dataset: &PyDataset,
    hidden: Vec<usize>,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    target_error: Option<f64>,
) -> PyResult<PyModel> {
    let cfg = classic_config(learning_rate, epochs, batch_size, seed, target_error);
    let net = train_classic(&dataset.inner, &hidden, &cfg).map_err(pyerr)?;
    Ok(PyModel { inner: TrainedModel::Classic(net), standardizer: None })
}

/// Adaptive modular network: cluster, gate, and train one subnet per
/// cluster with the classic rule.
#[pyfunction]
#[pyo3(signature = (dataset, hidden=vec![20], learning_rate=1e-4, epochs=20, batch_size=128, seed=0, target_error=None, fixed=None, spread=3.0, membership_denom=0.02))]
#[allow(clippy::too_many_arguments)]
fn fit_amnn(
    dataset: &PyDataset,
    hidden: Vec<usize>,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    target_error: Option<f64>,
    fixed: Option<usize>,
    spread: f64,
    membership_denom: f64,
) -> PyResult<PyModel> {
    let cfg = classic_config(learning_rate, epochs, batch_size, seed, target_error);
    let model = train_amnn(&dataset.inner, &policy(fixed, spread), membership_denom, &hidden, &cfg)
        .map_err(pyerr)?;
    Ok(PyModel { inner: TrainedModel::Modular(model), standardizer: None })
}

#[allow(clippy::too_many_arguments)]
fn robust_config(
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    q: f64,
    k: f64,
    sample_rate: f64,
    prune_warmup_epochs: usize,
) -> RobustConfig {
    RobustConfig {
        learning_rate,
        epochs,
        batch_size,
        seed,
        q,
        k,
        sample_rate,
        prune_warmup_epochs,
        ..RobustConfig::default()
    }
}

/// Dynamic truncated-loss training with gradient pruning (ELU + softmax +
/// Adam).
#[pyfunction]
#[pyo3(signature = (dataset, hidden=vec![20], learning_rate=1e-4, epochs=20, batch_size=128, seed=0, q=0.7, k=0.5, sample_rate=1.0, prune_warmup_epochs=2))]
#[allow(clippy::too_many_arguments)]
fn fit_robust(
    dataset: &PyDataset,
    hidden: Vec<usize>,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    q: f64,
    k: f64,
    sample_rate: f64,
    prune_warmup_epochs: usize,
) -> PyResult<PyModel> {
    let cfg =
        robust_config(learning_rate, epochs, batch_size, seed, q, k, sample_rate, prune_warmup_epochs);
    let net = robust::train_robust(&dataset.inner, &hidden, &cfg).map_err(pyerr)?;
    Ok(PyModel { inner: TrainedModel::Classic(net), standardizer: None })
}

/// Cross-entropy twin of fit_robust (no truncation, no pruning).
#[pyfunction]
#[pyo3(signature = (dataset, hidden=vec![20], learning_rate=1e-4, epochs=20, batch_size=128, seed=0))]
fn fit_ce(
    dataset: &PyDataset,
    hidden: Vec<usize>,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let cfg = robust_config(learning_rate, epochs, batch_size, seed, 0.7, 0.5, 1.0, 2);
    let net = robust::train_ce(&dataset.inner, &hidden, &cfg).map_err(pyerr)?;
    Ok(PyModel { inner: TrainedModel::Classic(net), standardizer: None })
}

/// Cross-entropy training on mixup-augmented batches.
#[pyfunction]
#[pyo3(signature = (dataset, hidden=vec![20], learning_rate=1e-4, epochs=20, batch_size=128, seed=0, alpha=0.2))]
#[allow(clippy::too_many_arguments)]
fn fit_mixup(
    dataset: &PyDataset,
    hidden: Vec<usize>,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    alpha: f64,
) -> PyResult<PyModel> {
    let cfg = robust_config(learning_rate, epochs, batch_size, seed, 0.7, 0.5, 1.0, 2);
    let net = robust::train_ce_mixup(&dataset.inner, &hidden, &cfg, alpha).map_err(pyerr)?;
    Ok(PyModel { inner: TrainedModel::Classic(net), standardizer: None })
}

/// Classification metrics from parallel truth/prediction label vectors.
#[pyfunction]
fn evaluate_labels(
    truths: Vec<usize>,
    predictions: Vec<usize>,
    class_count: usize,
) -> PyResult<HashMap<String, f64>> {
    let cm = metrics::confusion(&truths, &predictions, class_count).map_err(pyerr)?;
    Ok(report_dict(&metrics::report(&cm).map_err(pyerr)?))
}

#[pyfunction]
fn adjusted_rand(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    metrics::adjusted_rand(&a, &b).map_err(pyerr)
}

#[pyfunction]
#[pyo3(signature = (p, q=0.7, k=0.5))]
fn truncated_loss(p: f64, q: f64, k: f64) -> PyResult<f64> {
    robust::truncated_loss(p, q, k).map_err(pyerr)
}

#[pyfunction]
fn gce_loss(p: f64, q: f64) -> PyResult<f64> {
    robust::gce_loss(p, q).map_err(pyerr)
}

/// Full sweep from a JSON config file; writes the report files and returns
/// the one-line summary.
#[pyfunction]
fn sweep(config_path: PathBuf) -> PyResult<String> {
    let config = parse_config(&config_path).map_err(pyerr)?;
    cmd_sweep(&config).map_err(pyerr)
}

#[pymodule]
fn amnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(inject_noise, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(membership, m)?)?;
    m.add_function(wrap_pyfunction!(fit_classic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_amnn, m)?)?;
    m.add_function(wrap_pyfunction!(fit_robust, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ce, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mixup, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_labels, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
