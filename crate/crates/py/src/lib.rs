//! Python bindings: corpus extraction, the tokenizer, pass@k and sample
//! scoring. Structured results come back as plain dicts and lists.

use std::path::PathBuf;

use mrpt_core::corpus::{self, FilterRules, Style};
use mrpt_core::eval::{self, EvalOptions, Mode, ReferenceMatch, SubprocessRunner, VerdictSource};
use mrpt_core::tokenizer::{self as tok, TokenId};
use mrpt_core::Error;
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingInput(_) | Error::MissingSamples(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Config(_) | Error::KExceedsN { .. } | Error::Data(_) | Error::UnknownToken(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Unbiased pass@k for `c` correct out of `n` samples.
#[pyfunction]
fn pass_at_k(n: usize, c: usize, k: usize) -> PyResult<f64> {
    eval::pass_at_k(n, c, k).map_err(to_py)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval::pearson(&x, &y).map_err(to_py)
}

/// Function body source to marker form.
#[pyfunction]
fn normalize_body(body: &str) -> PyResult<String> {
    corpus::normalize_body(body).map_err(to_py)
}

/// Marker form back to indented source.
#[pyfunction]
fn denormalize(text: &str) -> String {
    corpus::denormalize(text)
}

/// Runs the extraction pipeline over `root`; returns `(pairs, stats)`.
#[pyfunction]
#[pyo3(signature = (root, style = "pangu", workers = 1))]
fn extract<'py>(py: Python<'py>, root: PathBuf, style: &str, workers: usize) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let style: Style = style.parse().map_err(to_py)?;
    let out = py
        .detach(|| corpus::run_pipeline(&root, &FilterRules::default(), style, workers))
        .map_err(to_py)?;
    Ok((json(py, &out.pairs)?, json(py, &out.stats)?))
}

/// Scores a samples file against a problem file. Without `runner` the
/// samples are matched against the reference solutions.
#[pyfunction]
#[pyo3(signature = (problems, samples, ks = vec![1, 10], mode = "standard", runner = None, workers = 1))]
fn evaluate<'py>(
    py: Python<'py>,
    problems: PathBuf,
    samples: PathBuf,
    ks: Vec<usize>,
    mode: &str,
    runner: Option<String>,
    workers: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let mode: Mode = mode.parse().map_err(to_py)?;
    let report = py
        .detach(|| -> mrpt_core::Result<_> {
            for path in [&problems, &samples] {
                if !path.exists() {
                    return Err(Error::MissingInput(path.display().to_string()));
                }
            }
            let problems = eval::read_problems(&problems)?;
            let samples = eval::read_samples(&samples)?;
            let source: Box<dyn VerdictSource> = match runner {
                Some(cmd) => Box::new(SubprocessRunner::from_command_line(&cmd)?),
                None => Box::new(ReferenceMatch::new(&problems)?),
            };
            let opts = EvalOptions {
                ks,
                mode,
                workers,
                ..EvalOptions::default()
            };
            eval::evaluate(&problems, &samples, &opts, source.as_ref())
        })
        .map_err(to_py)?;
    json(py, &report)
}

/// A trained subword vocabulary.
#[pyclass(frozen)]
struct Vocabulary {
    inner: tok::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = tok::Vocabulary::load(&path).map_err(to_py)?;
        Ok(Vocabulary { inner })
    }

    /// Trains on `texts` with the control symbols reserved.
    #[staticmethod]
    fn train(texts: Vec<String>, size: usize) -> PyResult<Self> {
        let inner = tok::train_vocabulary(texts.iter().map(String::as_str), size, &mrpt_core::control::ALL).map_err(to_py)?;
        Ok(Vocabulary { inner })
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        self.inner.encode(text)
    }

    fn decode(&self, ids: Vec<TokenId>) -> PyResult<String> {
        if let Some(bad) = ids.iter().find(|id| **id as usize >= self.inner.size()) {
            return Err(PyValueError::new_err(format!("token id {bad} is out of range")));
        }
        Ok(self.inner.decode(&ids))
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }
}

#[pymodule]
fn mrpt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pass_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_body, m)?)?;
    m.add_function(wrap_pyfunction!(denormalize, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<Vocabulary>()?;
    m.add("CONTROL_SYMBOLS", mrpt_core::control::ALL.to_vec())?;
    Ok(())
}
