//! Python bindings: datasets, training, evaluation, explanations, and the
//! low-level numeric operations.
//!
//! Build with `cargo build -p dnc-py --release`, then rename/copy the cdylib
//! to `dnc_py.so` somewhere on `sys.path` (see `python/smoke_test.py`).

// The pymethods/pyfunction macro glue trips this lint on its own expansion.
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use dnc_core::error::Error;
use dnc_core::explain::{build_rule, exhaustive_rivals, similarity_report};
use dnc_core::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use dnc_core::io::dataset::{self, LabeledDataset, SyntheticSpec};
use dnc_core::numerics::{self, Matrix};
use dnc_core::sinkhorn::{self, SinkhornConfig};
use dnc_core::trainer::{
    self, ClassifierKind, ClassifierState, ClusterAlgo, KSpec, TrainConfig, TrainState, Trainer,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix_from_py(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

fn matrix_to_py(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

/// Labeled dataset with optional fine labels.
#[pyclass]
#[derive(Clone)]
struct Dataset {
    inner: LabeledDataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (inputs, labels, fine_labels=None))]
    fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        fine_labels: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: LabeledDataset::new(matrix_from_py(inputs)?, labels, fine_labels)
                .map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn inputs(&self) -> Vec<Vec<f64>> {
        matrix_to_py(self.inner.inputs())
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    fn fine_labels(&self) -> Option<Vec<usize>> {
        self.inner.fine_labels().map(|f| f.to_vec())
    }

    /// Seeded shuffle split into (train, test).
    fn split(&self, test_frac: f64, seed: u64) -> PyResult<(Dataset, Dataset)> {
        let (train, test) = self.inner.split(test_frac, seed).map_err(py_err)?;
        Ok((Dataset { inner: train }, Dataset { inner: test }))
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        dataset::save_csv(path, &self.inner).map_err(py_err)
    }
}

/// Evaluation metrics; top5 is flagged undefined below five classes.
#[pyclass]
#[derive(Clone, Copy)]
struct Metrics {
    #[pyo3(get)]
    top1: f64,
    #[pyo3(get)]
    top5: f64,
    #[pyo3(get)]
    top5_defined: bool,
}

/// A trained model (encoder plus either a sub-centroid bank or a linear
/// classifier).
#[pyclass]
struct Model {
    state: TrainState,
    #[pyo3(get)]
    loss_curve: Vec<f64>,
}

#[pymethods]
impl Model {
    #[getter]
    fn classifier_kind(&self) -> &'static str {
        match self.state.classifier {
            ClassifierState::Dnc { .. } => "dnc",
            ClassifierState::Softmax(_) => "softmax",
        }
    }

    #[getter]
    fn is_anchored(&self) -> bool {
        match &self.state.classifier {
            ClassifierState::Dnc { bank, .. } => bank.is_anchored(),
            _ => false,
        }
    }

    fn evaluate(&self, dataset: &Dataset) -> PyResult<Metrics> {
        let m = trainer::evaluate(&self.state.encoder, &self.state.classifier, &dataset.inner)
            .map_err(py_err)?;
        Ok(Metrics {
            top1: m.top1,
            top5: m.top5,
            top5_defined: m.top5_defined,
        })
    }

    /// Predicted class per input row.
    fn predict(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let raw = matrix_from_py(inputs)?;
        let (features, _) = self.state.encoder.forward(&raw).map_err(py_err)?;
        match &self.state.classifier {
            ClassifierState::Dnc { bank, .. } => Ok(dnc_core::head::predict(&features, bank)
                .map_err(py_err)?
                .into_iter()
                .map(|p| p.class_id)
                .collect()),
            ClassifierState::Softmax(clf) => {
                let logits = dnc_core::baseline::linear_logits(&features, clf).map_err(py_err)?;
                Ok((0..logits.rows())
                    .map(|n| {
                        let row = logits.row(n);
                        let mut best = 0;
                        for c in 1..row.len() {
                            if row[c] > row[best] {
                                best = c;
                            }
                        }
                        best
                    })
                    .collect())
            }
        }
    }

    /// Unit-norm embeddings of raw input rows.
    fn embed(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let raw = matrix_from_py(inputs)?;
        let (features, _) = self.state.encoder.forward(&raw).map_err(py_err)?;
        Ok(matrix_to_py(&features))
    }

    /// 1-NN fine-label induction accuracy of the frozen encoder.
    fn knn_induction_eval(&self, train: &Dataset, test: &Dataset) -> PyResult<f64> {
        trainer::knn_induction_eval(&self.state.encoder, &train.inner, &test.inner)
            .map_err(py_err)
    }

    /// Similarity report for one dataset row: (predicted class, entries as
    /// (class, sub, raw, normalized), formatted text).
    fn explain(
        &self,
        dataset: &Dataset,
        query_index: usize,
        top_m: usize,
    ) -> PyResult<(usize, Vec<(usize, usize, f64, f64)>, String)> {
        let bank = match &self.state.classifier {
            ClassifierState::Dnc { bank, .. } => bank,
            _ => return Err(PyValueError::new_err("explain needs a dnc model")),
        };
        if query_index >= dataset.inner.len() {
            return Err(PyValueError::new_err(format!(
                "query index {query_index} out of range"
            )));
        }
        let row = dataset.inner.inputs().select_rows(&[query_index]);
        let (feature, _) = self.state.encoder.forward(&row).map_err(py_err)?;
        let report =
            similarity_report(query_index, feature.row(0), bank, top_m).map_err(py_err)?;
        let entries = report
            .entries
            .iter()
            .map(|e| (e.class_id, e.sub_index, e.raw_similarity, e.normalized_similarity))
            .collect();
        Ok((report.predicted_class, entries, report.to_string()))
    }

    /// IF...THEN rule text for a class over all other classes' sub-centroids
    /// (requires an anchored model).
    fn rule(&self, class_id: usize) -> PyResult<String> {
        let bank = match &self.state.classifier {
            ClassifierState::Dnc { bank, .. } => bank,
            _ => return Err(PyValueError::new_err("rules need a dnc model")),
        };
        let rule = build_rule(bank, class_id, &exhaustive_rivals(bank, class_id))
            .map_err(py_err)?;
        Ok(rule.to_string())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(path, &Checkpoint::from_state(&self.state)).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        let state = load_checkpoint(path)
            .and_then(Checkpoint::into_state)
            .map_err(py_err)?;
        Ok(Model {
            state,
            loss_curve: Vec::new(),
        })
    }
}

/// Synthesize a Gaussian-blob dataset with interleaved multimodal classes.
#[pyfunction]
#[pyo3(signature = (classes, subclusters, dim, per_cluster, sigma, seed=0, class_spread=0.4))]
fn gen_synthetic(
    classes: usize,
    subclusters: usize,
    dim: usize,
    per_cluster: usize,
    sigma: f64,
    seed: u64,
    class_spread: f64,
) -> PyResult<Dataset> {
    Ok(Dataset {
        inner: dataset::gen_synthetic(&SyntheticSpec {
            classes,
            subclusters,
            dim,
            per_cluster,
            sigma,
            seed,
            class_spread,
        })
        .map_err(py_err)?,
    })
}

#[pyfunction]
fn load_csv(path: &str) -> PyResult<Dataset> {
    Ok(Dataset {
        inner: dataset::load_csv(path).map_err(py_err)?,
    })
}

/// Train a model. `classifier` is "dnc" or "softmax"; `cluster_algo` is
/// "sinkhorn" or "kmeans"; `k_map` overrides `k` per class; `hidden_dims`
/// of `[]` trains a linear encoder.
#[pyfunction]
#[pyo3(signature = (
    dataset, epochs=30, batch_size=64, classifier="dnc", k=4, k_map=None,
    mu=0.999, epsilon=0.05, sinkhorn_iters=3, memory_batches=8,
    temperature=1.0, learning_rate=0.5, seed=0, anchor_after_epoch=None,
    cluster_algo="sinkhorn", output_dim=16, hidden_dims=vec![64, 64],
    poly_decay_power=None
))]
#[allow(clippy::too_many_arguments)]
fn train(
    dataset: &Dataset,
    epochs: usize,
    batch_size: usize,
    classifier: &str,
    k: usize,
    k_map: Option<Vec<usize>>,
    mu: f64,
    epsilon: f64,
    sinkhorn_iters: usize,
    memory_batches: usize,
    temperature: f64,
    learning_rate: f64,
    seed: u64,
    anchor_after_epoch: Option<usize>,
    cluster_algo: &str,
    output_dim: usize,
    hidden_dims: Vec<usize>,
    poly_decay_power: Option<f64>,
) -> PyResult<Model> {
    let config = TrainConfig {
        epochs,
        batch_size,
        classifier: match classifier {
            "dnc" => ClassifierKind::Dnc,
            "softmax" => ClassifierKind::Softmax,
            other => {
                return Err(PyValueError::new_err(format!(
                    "classifier must be 'dnc' or 'softmax', got '{other}'"
                )))
            }
        },
        k: match k_map {
            Some(map) => KSpec::PerClass(map),
            None => KSpec::Global(k),
        },
        mu,
        epsilon,
        sinkhorn_iters,
        memory_batches,
        temperature,
        learning_rate,
        seed,
        anchor_after_epoch,
        cluster_algo: match cluster_algo {
            "sinkhorn" => ClusterAlgo::Sinkhorn,
            "kmeans" => ClusterAlgo::KMeans,
            other => {
                return Err(PyValueError::new_err(format!(
                    "cluster_algo must be 'sinkhorn' or 'kmeans', got '{other}'"
                )))
            }
        },
        output_dim,
        hidden_dims,
        poly_decay_power,
    };
    let mut t = Trainer::new(config, &dataset.inner).map_err(py_err)?;
    let report = t.run().map_err(py_err)?;
    Ok(Model {
        state: t.state,
        loss_curve: report.loss_curve,
    })
}

#[pyfunction]
fn l2_normalize(v: Vec<f64>) -> PyResult<Vec<f64>> {
    numerics::l2_normalize(&v).map_err(py_err)
}

#[pyfunction]
fn cosine_distance(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    numerics::cosine_distance(&u, &v).map_err(py_err)
}

#[pyfunction]
fn similarity_matrix(x: Vec<Vec<f64>>, p: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let s = numerics::similarity_matrix(&matrix_from_py(x)?, &matrix_from_py(p)?)
        .map_err(py_err)?;
    Ok(matrix_to_py(&s))
}

/// Soft cluster assignment: K x N scores in, K x N column-normalized matrix
/// out.
#[pyfunction]
#[pyo3(signature = (scores, epsilon=0.05, iterations=3))]
fn sinkhorn_soft_assign(
    scores: Vec<Vec<f64>>,
    epsilon: f64,
    iterations: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = SinkhornConfig::new(epsilon, iterations).map_err(py_err)?;
    let q = sinkhorn::sinkhorn_soft_assign(&matrix_from_py(scores)?, &cfg).map_err(py_err)?;
    Ok(matrix_to_py(q.values()))
}

/// Hard cluster index per sample for row-normalized features and centroids.
#[pyfunction]
#[pyo3(signature = (features, centroids, epsilon=0.05, iterations=3))]
fn cluster_class(
    features: Vec<Vec<f64>>,
    centroids: Vec<Vec<f64>>,
    epsilon: f64,
    iterations: usize,
) -> PyResult<Vec<usize>> {
    let cfg = SinkhornConfig::new(epsilon, iterations).map_err(py_err)?;
    sinkhorn::cluster_class(&matrix_from_py(features)?, &matrix_from_py(centroids)?, &cfg)
        .map_err(py_err)
}

#[pyfunction]
fn kmeans_cluster(features: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    trainer::kmeans_baseline_cluster(&matrix_from_py(features)?, k, seed).map_err(py_err)
}

#[pymodule]
fn dnc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<Metrics>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(l2_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_distance, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn_soft_assign, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_class, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans_cluster, m)?)?;
    Ok(())
}
