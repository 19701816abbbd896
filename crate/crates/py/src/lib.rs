//! Python bindings: chain loading and per-address queries, the staged
//! pipeline, the scenario generator and the validation rule.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rwtrace::chain::{ingest_chain, ChainFormat};
use rwtrace::config::RunConfig;
use rwtrace::flow::{exposure_of, ruzicka as ruzicka_score, shared_exposure, ExposureParams};
use rwtrace::pipeline::{Stage, StageReport, Workspace};
use rwtrace::split::{detect_split_of, SplitParams};
use rwtrace::synth::{generate, ScenarioConfig};
use rwtrace::validation::Outcome;

create_exception!(rwtrace_py, RwtraceError, PyException);

/// Raised errors carry `(code, message)` as their arguments.
fn err(e: rwtrace::Error) -> PyErr {
    RwtraceError::new_err((e.code(), e.to_string()))
}

fn hops(h: u8) -> PyResult<ExposureParams> {
    if (1..=3).contains(&h) {
        Ok(ExposureParams::with_hops(h))
    } else {
        Err(PyValueError::new_err(format!("hops must be 1, 2 or 3, got {h}")))
    }
}

/// Indexed transaction graph loaded from a JSONL or CSV export.
#[pyclass(name = "Chain", frozen)]
struct PyChain {
    inner: rwtrace::chain::Chain,
}

#[pymethods]
impl PyChain {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let format = ChainFormat::from_path(&path)
            .ok_or_else(|| PyValueError::new_err(format!("{}: expected a .jsonl or .csv file", path.display())))?;
        let inner = ingest_chain(&path, format).map_err(err)?;
        Ok(PyChain { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Chain(transactions={}, addresses={})", self.inner.len(), self.inner.address_count())
    }

    #[getter]
    fn address_count(&self) -> usize {
        self.inner.address_count()
    }

    /// Received satoshis, incoming transaction count and first/last receipt
    /// timestamps of one address.
    fn address_totals<'py>(&self, py: Python<'py>, address: &str) -> PyResult<Bound<'py, PyDict>> {
        let t = self.inner.address_totals(address, None).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("known", t.known)?;
        d.set_item("received_sat", t.received_sat)?;
        d.set_item("incoming_tx_count", t.incoming_tx_count)?;
        d.set_item("first_seen", t.first_seen)?;
        d.set_item("last_seen", t.last_seen)?;
        Ok(d)
    }

    /// Fraction of the address's outgoing funds reaching each downstream address.
    #[pyo3(signature = (address, hops = 3))]
    fn exposure(&self, address: &str, hops: u8) -> PyResult<BTreeMap<String, f64>> {
        let e = exposure_of(&self.inner, address, self::hops(hops)?).map_err(err)?;
        Ok(e.weights.iter().map(|(a, w)| (self.inner.address(*a).to_owned(), *w)).collect())
    }

    /// Ruzicka similarity of two addresses' exposure vectors.
    #[pyo3(signature = (a, b, hops = 3))]
    fn shared_exposure(&self, a: &str, b: &str, hops: u8) -> PyResult<f64> {
        Ok(shared_exposure(&self.inner, a, b, self::hops(hops)?).map_err(err)?.score)
    }

    /// The operator/affiliate split of a payment, or None.
    #[pyo3(signature = (address, tolerance = rwtrace::split::DEFAULT_TOLERANCE))]
    fn detect_split<'py>(&self, py: Python<'py>, address: &str, tolerance: f64) -> PyResult<Option<Bound<'py, PyDict>>> {
        let Some(f) = detect_split_of(&self.inner, address, SplitParams::with_tolerance(tolerance)).map_err(err)? else {
            return Ok(None);
        };
        let d = PyDict::new(py);
        d.set_item("split_tx", f.split_tx.to_string())?;
        d.set_item("hop", f.hop)?;
        d.set_item("affiliate_share", f.affiliate_share)?;
        d.set_item("operator_share", f.operator_share)?;
        d.set_item("grid_pct", f.matched_grid_pct)?;
        Ok(Some(d))
    }
}

fn report_dict<'py>(py: Python<'py>, stage: Stage, r: &StageReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("stage", stage.name())?;
    d.set_item("cached", r.cached)?;
    d.set_item("files", r.files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>())?;
    d.set_item("summary", r.summary.clone())?;
    Ok(d)
}

/// Staged pipeline over input files, writing CSV exports to `out`.
#[pyclass(name = "Pipeline")]
struct PyPipeline {
    config: RunConfig,
}

#[pymethods]
impl PyPipeline {
    /// Keyword arguments are run-configuration keys (`chain`, `seeds`,
    /// `hops`, `min_btc`, ...). `config` names a `key = value` file applied first.
    #[new]
    #[pyo3(signature = (out, config = None, **options))]
    fn new(out: PathBuf, config: Option<PathBuf>, options: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut c = match config {
            Some(p) => RunConfig::from_path(&p).map_err(err)?,
            None => RunConfig::default(),
        };
        c.out = out;
        if let Some(opts) = options {
            for (k, v) in opts.iter() {
                let key: String = k.extract()?;
                let value = v.str()?.to_string();
                let value = if value == "True" || value == "False" { value.to_lowercase() } else { value };
                c.set(&key, &value, Path::new(""))
                    .map_err(|m| PyValueError::new_err(format!("{key}: {m}")))?;
            }
        }
        c.validate().map_err(err)?;
        Ok(PyPipeline { config: c })
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.config.out.clone()
    }

    /// Runs one stage by name, e.g. `"detect-origin"`.
    fn run<'py>(&self, py: Python<'py>, stage: &str) -> PyResult<Bound<'py, PyDict>> {
        let stage: Stage = stage.parse().map_err(PyValueError::new_err)?;
        let config = self.config.clone();
        let report = py.detach(move || Workspace::new(config).run(stage)).map_err(err)?;
        report_dict(py, stage, &report)
    }

    /// Runs every stage in order; with `resume`, stages whose outputs exist are skipped.
    #[pyo3(signature = (resume = false))]
    fn run_all<'py>(&self, py: Python<'py>, resume: bool) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut config = self.config.clone();
        config.resume |= resume;
        let reports = py.detach(move || Workspace::new(config).run_all()).map_err(err)?;
        reports.iter().map(|(s, r)| report_dict(py, *s, r)).collect()
    }
}

/// Names of the pipeline stages in execution order.
#[pyfunction]
fn stages() -> Vec<&'static str> {
    Stage::ALL.iter().map(|s| s.name()).collect()
}

/// Writes a synthetic scenario with its ground-truth manifest to `out`.
#[pyfunction]
#[pyo3(signature = (out, preset = "paper-shape", seed = 1, payments = 40))]
fn synth<'py>(py: Python<'py>, out: PathBuf, preset: &str, seed: u64, payments: usize) -> PyResult<Bound<'py, PyDict>> {
    let scenario = match preset {
        "paper-shape" => ScenarioConfig::paper_shape(seed),
        "small" => ScenarioConfig::small(seed, payments),
        "empty" => ScenarioConfig::empty(seed),
        other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    };
    let s = py.detach(|| generate(&scenario)).map_err(err)?;
    s.write_to_dir(&out).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("transactions", s.manifest.transactions)?;
    d.set_item("addresses", s.manifest.addresses)?;
    d.set_item("payments", s.manifest.payments.len())?;
    Ok(d)
}

/// Validation outcome from the shares of funds reaching ransomware,
/// other illicit and low-risk destinations.
#[pyfunction]
fn classify_outcome(pct_ransomware: f64, pct_highrisk: f64, pct_lowrisk: f64) -> &'static str {
    Outcome::classify(pct_ransomware, pct_highrisk, pct_lowrisk).as_str()
}

/// Ruzicka similarity of two non-negative weight maps.
#[pyfunction]
fn ruzicka(a: BTreeMap<String, f64>, b: BTreeMap<String, f64>) -> f64 {
    ruzicka_score(&a, &b)
}

#[pymodule]
fn rwtrace_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RwtraceError", m.py().get_type::<RwtraceError>())?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(stages, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(classify_outcome, m)?)?;
    m.add_function(wrap_pyfunction!(ruzicka, m)?)?;
    Ok(())
}
