//! Python bindings: spans, metrics, losses, a `Model` class, corpus
//! synthesis and training.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wslln::autodiff::Tensor;
use wslln::checkpoint;
use wslln::data::load_dataset;
use wslln::features::FeatureSequence;
use wslln::metrics::{self, GroundTruth, Interval, Predictions};
use wslln::model::{self, ModelDims, ModelParams, Mode};
use wslln::proposals;
use wslln::synth::{self, SynthConfig};
use wslln::training::{self, TrainConfig};

fn py_err(e: wslln::Error) -> PyErr {
    match e {
        wslln::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(py_err)
}

fn interval((start, end): (f64, f64)) -> PyResult<Interval> {
    Interval::new(start, end).map_err(py_err)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(py_err)
}

/// An `n x 2` score matrix with `n >= 1`.
fn scores(s: &[Vec<f64>]) -> PyResult<Tensor> {
    let t = matrix(s)?;
    if t.rows() == 0 || t.last_dim() != 2 {
        return Err(PyValueError::new_err(format!("scores must be n x 2, got {:?}", t.shape())));
    }
    Ok(t)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// All contiguous spans over `k` base segments as `(start, end)` pairs.
#[pyfunction]
fn generate_spans(k: usize) -> PyResult<Vec<(usize, usize)>> {
    let spans = proposals::generate_spans(k).map_err(py_err)?;
    Ok(spans.iter().map(|s| (s.start, s.end)).collect())
}

#[pyfunction]
fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    metrics::temporal_iou(interval(a)?, interval(b)?).map_err(py_err)
}

fn metric_inputs(
    predictions: BTreeMap<String, Vec<(f64, f64)>>,
    gts: BTreeMap<String, (f64, f64)>,
) -> PyResult<(Predictions, Vec<GroundTruth>)> {
    let mut preds = Predictions::new();
    for (q, ranked) in predictions {
        preds.insert(q, ranked.into_iter().map(interval).collect::<PyResult<_>>()?);
    }
    let gts = gts
        .into_iter()
        .map(|(query, span)| Ok(GroundTruth { query, span: interval(span)? }))
        .collect::<PyResult<_>>()?;
    Ok((preds, gts))
}

/// Percentage of queries with a top-`k` prediction at IoU >= `th`.
/// `predictions` maps query id to ranked `(start, end)` spans, `gts` maps
/// query id to its ground-truth span.
#[pyfunction]
fn recall_at_k(
    predictions: BTreeMap<String, Vec<(f64, f64)>>,
    gts: BTreeMap<String, (f64, f64)>,
    k: usize,
    th: f64,
) -> PyResult<f64> {
    let (preds, gts) = metric_inputs(predictions, gts)?;
    metrics::recall_at_k(&preds, &gts, k, th).map_err(py_err)
}

#[pyfunction]
fn mean_iou(predictions: BTreeMap<String, Vec<(f64, f64)>>, gts: BTreeMap<String, (f64, f64)>) -> PyResult<f64> {
    let (preds, gts) = metric_inputs(predictions, gts)?;
    metrics::mean_iou(&preds, &gts).map_err(py_err)
}

#[pyfunction]
fn video_loss(vq: (f64, f64), label: bool) -> f64 {
    training::video_loss(&[vq.0, vq.1], label)
}

/// Index of the highest match score (column 1 of the `n x 2` scores).
#[pyfunction]
fn pseudo_label(s: Vec<Vec<f64>>) -> PyResult<usize> {
    Ok(training::pseudo_label(&scores(&s)?))
}

#[pyfunction]
fn refine_loss(match_scores: Vec<f64>, target: usize) -> PyResult<f64> {
    if target >= match_scores.len() {
        return Err(PyValueError::new_err(format!(
            "target {target} out of range for {} proposals",
            match_scores.len()
        )));
    }
    Ok(training::refine_loss(&match_scores, target))
}

#[pyfunction]
#[pyo3(signature = (vq, label, s, lam=0.3))]
fn total_loss(vq: (f64, f64), label: bool, s: Vec<Vec<f64>>, lam: f64) -> PyResult<f64> {
    Ok(training::total_loss(&[vq.0, vq.1], label, &scores(&s)?, lam))
}

/// Model parameters with forward, ranking and evaluation.
#[pyclass(name = "Model")]
struct PyModel {
    params: ModelParams,
}

impl PyModel {
    fn run(&self, features: Vec<Vec<f64>>, query: Vec<f64>, k: usize, mode: &str) -> PyResult<model::ForwardResult> {
        let fv = FeatureSequence::from_rows(&features).map_err(py_err)?;
        let spans = proposals::generate_spans(k).map_err(py_err)?;
        model::forward(&self.params, &fv, &query, &spans, k, parse_mode(mode)?).map_err(py_err)
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (visual_dim, query_dim, d=1000, h=256, seed=0))]
    fn new(visual_dim: usize, query_dim: usize, d: usize, h: usize, seed: u64) -> PyResult<Self> {
        let params = ModelParams::init(seed, ModelDims::new(visual_dim, query_dim, d, h)).map_err(py_err)?;
        Ok(Self { params })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            params: checkpoint::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(path, &self.params).map_err(py_err)
    }

    /// `(visual_dim, query_dim, d, h)`.
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.params.dims;
        (d.visual, d.query, d.d, d.h)
    }

    /// Scores of every proposal as a dict of `sa`, `sd`, `s` (n x 2 lists)
    /// and `vq`.
    #[pyo3(signature = (features, query, k=5, mode="full"))]
    fn forward<'py>(
        &self,
        py: Python<'py>,
        features: Vec<Vec<f64>>,
        query: Vec<f64>,
        k: usize,
        mode: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let r = self.run(features, query, k, mode)?;
        let out = PyDict::new(py);
        out.set_item("sa", rows(&r.sa))?;
        out.set_item("sd", rows(&r.sd))?;
        out.set_item("s", rows(&r.s))?;
        out.set_item("vq", r.vq.data().to_vec())?;
        Ok(out)
    }

    /// Proposals as `(start_segment, end_segment, score)`, best first.
    #[pyo3(signature = (features, query, k=5, mode="full"))]
    fn rank(&self, features: Vec<Vec<f64>>, query: Vec<f64>, k: usize, mode: &str) -> PyResult<Vec<(usize, usize, f64)>> {
        let r = self.run(features, query, k, mode)?;
        let spans = proposals::generate_spans(k).map_err(py_err)?;
        let scores = r.match_scores();
        Ok(model::rank(&r)
            .into_iter()
            .map(|j| (spans[j].start, spans[j].end, scores[j]))
            .collect())
    }

    /// Evaluation report for a manifest, as a dict mirroring its JSON form.
    #[pyo3(signature = (manifest, k=5, ks=vec![1, 5], ths=vec![0.1, 0.3, 0.5], mode="full"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        manifest: PathBuf,
        k: usize,
        ks: Vec<usize>,
        ths: Vec<f64>,
        mode: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let dataset = load_dataset(manifest).map_err(py_err)?;
        let report = metrics::evaluate(&self.params, &dataset, k, parse_mode(mode)?, &ks, &ths).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("num_queries", report.num_queries)?;
        out.set_item("miou", report.miou)?;
        let cells: Vec<(usize, f64, f64)> = report.recalls.iter().map(|c| (c.k, c.iou, c.recall)).collect();
        out.set_item("recalls", cells)?;
        out.set_item("table", report.to_table())?;
        Ok(out)
    }
}

/// Writes a synthetic corpus under `out_dir` and returns the train and test
/// manifest paths.
#[pyfunction]
#[pyo3(signature = (out_dir, num_train=500, num_test=100, seed=0, beta=0.7, sigma=1.0, k=5))]
fn synthesize(
    out_dir: PathBuf,
    num_train: usize,
    num_test: usize,
    seed: u64,
    beta: f64,
    sigma: f64,
    k: usize,
) -> PyResult<(PathBuf, PathBuf)> {
    let config = SynthConfig {
        num_train,
        num_test,
        seed,
        beta,
        sigma,
        k,
        ..SynthConfig::default()
    };
    let corpus = synth::gen_synthetic(&config).map_err(py_err)?;
    synth::write_corpus(out_dir, &corpus).map_err(py_err)
}

/// Trains on a manifest. Returns the model and one dict per epoch with
/// `epoch`, `mean_Lv`, `mean_Lr` and `mean_loss`.
#[pyfunction]
#[pyo3(signature = (manifest, lam=0.3, lr=0.01, momentum=0.9, epochs=50, d=1000, h=256, seed=0, k=5, mode="full"))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    lam: f64,
    lr: f64,
    momentum: f64,
    epochs: usize,
    d: usize,
    h: usize,
    seed: u64,
    k: usize,
    mode: &str,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let config = TrainConfig {
        lambda: lam,
        lr,
        momentum,
        epochs,
        seed,
        d,
        h,
        k,
        mode: parse_mode(mode)?,
        ..TrainConfig::default()
    };
    let dataset = load_dataset(manifest).map_err(py_err)?;
    let (params, logs) = py.detach(|| training::train(&dataset, &config)).map_err(py_err)?;
    let logs = logs
        .iter()
        .map(|l| {
            let d = PyDict::new(py);
            d.set_item("epoch", l.epoch)?;
            d.set_item("mean_Lv", l.mean_lv)?;
            d.set_item("mean_Lr", l.mean_lr)?;
            d.set_item("mean_loss", l.mean_loss)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((PyModel { params }, logs))
}

#[pymodule]
fn wslln_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_spans, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_iou, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mean_iou, m)?)?;
    m.add_function(wrap_pyfunction!(video_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_label, m)?)?;
    m.add_function(wrap_pyfunction!(refine_loss, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
