//! Python bindings: corpus generation, training, evaluation and the
//! closed-form helpers.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict};

use hlnet::config::parse_kv;
use hlnet::evalmetrics::{MetricsReport, TaskMetrics};
use hlnet::scenedata::{self, GenConfig, Split};
use hlnet::trainer::{self, ModelParams, Task, TrainConfig};
use hlnet::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Turns keyword arguments into `key=value` strings, rejecting keys the
/// default configuration does not know.
fn kwargs_map(kwargs: Option<&Bound<'_, PyDict>>, known_kv: &str) -> PyResult<BTreeMap<String, String>> {
    let known = parse_kv(known_kv).map_err(to_py)?;
    let mut out = BTreeMap::new();
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            if !known.contains_key(&key) {
                return Err(PyValueError::new_err(format!("unknown option `{key}`")));
            }
            let val = if v.is_instance_of::<PyBool>() {
                v.extract::<bool>()?.to_string()
            } else {
                v.str()?.to_string()
            };
            out.insert(key, val);
        }
    }
    Ok(out)
}

fn parse_split(name: &str) -> PyResult<Split> {
    Split::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown split `{name}`")))
}

/// Layer weights `(-tau)^(u-1)` normalized to unit absolute sum.
#[pyfunction]
fn init_gamma(tau: f64, layers: usize) -> PyResult<Vec<f64>> {
    hlnet::art::init_gamma(tau, layers).map_err(to_py)
}

/// Weighted score `0.2 * R@50 + 0.4 * wmAP_rel + 0.4 * wmAP_phr`.
#[pyfunction]
fn score_wtd(recall50: f64, wmap_rel: f64, wmap_phr: f64) -> f64 {
    hlnet::evalmetrics::score_wtd(recall50, wmap_rel, wmap_phr)
}

#[pyclass(name = "Corpus", module = "hlnet_py")]
struct PyCorpus {
    inner: scenedata::Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Generates a corpus; keyword arguments override generator defaults
    /// (e.g. `homophily=0.2, train_scenes=100, seed=3`).
    #[staticmethod]
    #[pyo3(signature = (**kwargs))]
    fn generate(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = GenConfig::default();
        cfg.apply_kv(&kwargs_map(kwargs, &cfg.to_kv())?).map_err(to_py)?;
        Ok(Self { inner: scenedata::generate_corpus(&cfg).map_err(to_py)? })
    }

    #[staticmethod]
    fn read(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: scenedata::read_corpus_dir(&dir).map_err(to_py)? })
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        scenedata::write_corpus_dir(&self.inner, &dir).map_err(to_py)
    }

    fn num_scenes(&self, split: &str) -> PyResult<usize> {
        Ok(self.inner.split(parse_split(split)?).len())
    }

    /// Mean per-scene homophily over all splits, or `None`.
    fn mean_homophily(&self) -> Option<f64> {
        self.inner.mean_homophily()
    }

    /// Generator settings as `key=value` lines.
    fn config(&self) -> String {
        self.inner.config.to_kv()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(train={}, val={}, test={})",
            self.inner.train.len(),
            self.inner.val.len(),
            self.inner.test.len()
        )
    }
}

#[pyclass(name = "Model", module = "hlnet_py")]
struct PyModel {
    cfg: TrainConfig,
    model: ModelParams,
    losses: Vec<f64>,
}

fn task_dict<'py>(py: Python<'py>, t: &TaskMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (i, k) in hlnet::evalmetrics::RECALL_KS.iter().enumerate() {
        d.set_item(format!("R@{k}"), t.recall[i])?;
        d.set_item(format!("mR@{k}"), t.mean_recall[i])?;
        d.set_item(format!("C-R@{k}"), t.occluded_recall[i])?;
        d.set_item(format!("S-R@{k}"), t.clear_recall[i])?;
    }
    d.set_item("wmAP_rel", t.wmap_rel)?;
    d.set_item("wmAP_phr", t.wmap_phr)?;
    d.set_item("score_wtd", t.score_wtd)?;
    d.set_item("node_acc", t.node_accuracy)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("homophily", r.homophily)?;
    for t in &r.tasks {
        d.set_item(t.task.name(), task_dict(py, t)?)?;
    }
    Ok(d)
}

#[pymethods]
impl PyModel {
    /// Trains on `corpus`; keyword arguments override training defaults
    /// (e.g. `epochs=5, dim=16, hmp=False, beta=0.5`).
    #[staticmethod]
    #[pyo3(signature = (corpus, **kwargs))]
    fn train(py: Python<'_>, corpus: &PyCorpus, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&kwargs_map(kwargs, &cfg.to_kv())?).map_err(to_py)?;
        cfg.validate().map_err(to_py)?;
        let corpus = &corpus.inner;
        let out = py.detach(|| trainer::train(corpus, &cfg)).map_err(to_py)?;
        Ok(Self { losses: out.log.iter().map(|e| e.train_loss).collect(), cfg, model: out.model })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (cfg, model) = trainer::load_checkpoint(&path).map_err(to_py)?;
        Ok(Self { cfg, model, losses: Vec::new() })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::save_checkpoint(&path, &self.model, &self.cfg).map_err(to_py)
    }

    /// Mean training loss per epoch (empty for a loaded model).
    #[getter]
    fn losses(&self) -> Vec<f64> {
        self.losses.clone()
    }

    fn config(&self) -> String {
        self.cfg.to_kv()
    }

    /// Metrics as a dict: `homophily` plus one sub-dict per task.
    #[pyo3(signature = (corpus, split = "test", task = "all"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        corpus: &PyCorpus,
        split: &str,
        task: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let tasks = match task {
            "all" => Task::ALL.to_vec(),
            t => vec![Task::parse(t).map_err(to_py)?],
        };
        self.model.check_corpus(&corpus.inner.config).map_err(to_py)?;
        let scenes = corpus.inner.split(parse_split(split)?);
        let report = py
            .detach(|| trainer::evaluate_model(&self.model, &self.cfg, scenes, &tasks))
            .map_err(to_py)?;
        report_dict(py, &report)
    }

    /// Metrics CSV text, as written by the command line `eval`.
    #[pyo3(signature = (corpus, split = "test"))]
    fn metrics_csv(&self, py: Python<'_>, corpus: &PyCorpus, split: &str) -> PyResult<String> {
        self.model.check_corpus(&corpus.inner.config).map_err(to_py)?;
        let scenes = corpus.inner.split(parse_split(split)?);
        let report = py
            .detach(|| trainer::evaluate_model(&self.model, &self.cfg, scenes, &Task::ALL))
            .map_err(to_py)?;
        Ok(report.to_csv())
    }
}

#[pymodule]
fn hlnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(init_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(score_wtd, m)?)?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
