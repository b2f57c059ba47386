//! Python bindings for the `multiconcern` simulator.
//!
//! Structured values (skeletons, plans, deltas, verdicts) cross the boundary
//! as plain Python objects shaped like the JSON the core crate reads and
//! writes.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use multiconcern::graph::{ExpandConfig, GraphDelta};
use multiconcern::system::run_scenario;
use multiconcern::trace::first_divergence;
use multiconcern::{
    expand as expand_expr, resolve as resolve_core, ApplicationGraph, Concern, ConsensusResponse,
    CoordinationMode, Decision, DecisionId, RunReport, Scenario, SkeletonExpr, Verdict,
};

create_exception!(multiconcern_py, MulticoncernError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    MulticoncernError::new_err(e.to_string())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A scenario file: skeleton, contracts, resource pool, workload, settings.
#[pyclass(name = "Scenario", module = "multiconcern_py", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Scenario::load(path).map(|inner| PyScenario { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Scenario::from_json(text).map(|inner| PyScenario { inner }).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.sim.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.sim.seed = seed;
    }

    /// `"sm"` or `"cm"`.
    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            CoordinationMode::Sm => "sm",
            CoordinationMode::Cm => "cm",
        }
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.mode = mode.parse().map_err(PyValueError::new_err)?;
        Ok(())
    }

    fn contracts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.contracts)
    }

    /// Runs to completion. The GIL is released while simulating.
    fn run(&self, py: Python<'_>) -> PyResult<PyRunReport> {
        let scenario = self.inner.clone();
        py.detach(move || run_scenario(&scenario)).map(|inner| PyRunReport { inner }).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(contracts={}, mode={}, seed={})",
            self.inner.contracts.len(),
            self.mode(),
            self.inner.sim.seed
        )
    }
}

/// Outcome of one run.
#[pyclass(name = "RunReport", module = "multiconcern_py", frozen)]
struct PyRunReport {
    inner: RunReport,
}

#[pymethods]
impl PyRunReport {
    #[getter]
    fn converged(&self) -> bool {
        self.inner.verdict.converged
    }

    #[getter]
    fn ticks_to_converge(&self) -> Option<usize> {
        self.inner.verdict.ticks_to_converge
    }

    #[getter]
    fn final_throughput(&self) -> f64 {
        self.inner.verdict.final_throughput
    }

    #[getter]
    fn contracts_satisfied(&self) -> BTreeMap<String, bool> {
        self.inner.verdict.contracts_satisfied.clone()
    }

    fn verdict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.verdict)
    }

    fn trace_jsonl(&self) -> String {
        self.inner.trace_jsonl()
    }

    fn metrics_csv(&self) -> String {
        self.inner.metrics_csv()
    }

    /// Protocol records only, as dictionaries.
    fn protocol_records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let recs: Vec<_> = self.inner.mgmt().collect();
        to_py(py, &recs)
    }

    #[getter]
    fn final_graph(&self) -> PyGraph {
        PyGraph { inner: self.inner.final_graph.clone() }
    }

    fn write_outputs(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write_outputs(&dir).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

/// A versioned application graph.
#[pyclass(name = "Graph", module = "multiconcern_py", frozen)]
struct PyGraph {
    inner: ApplicationGraph,
}

#[pymethods]
impl PyGraph {
    #[getter]
    fn version(&self) -> u64 {
        self.inner.version()
    }

    fn node_ids(&self) -> Vec<String> {
        self.inner.nodes().keys().map(|n| n.as_str().to_string()).collect()
    }

    #[getter]
    fn arc_count(&self) -> usize {
        self.inner.arc_count()
    }

    #[getter]
    fn ssl_arc_count(&self) -> usize {
        self.inner.ssl_arc_count()
    }

    #[getter]
    fn farm_degree(&self) -> Option<usize> {
        self.inner.managed_farm().map(|f| f.degree())
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.snapshot())
    }

    /// Delta that turns `self` into `other`.
    fn diff<'py>(&self, py: Python<'py>, other: &PyGraph) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &multiconcern::diff(&self.inner, &other.inner))
    }

    fn apply(&self, delta: &Bound<'_, PyAny>) -> PyResult<PyGraph> {
        let delta: GraphDelta = from_py(delta)?;
        multiconcern::apply_delta(&self.inner, &delta).map(|inner| PyGraph { inner }).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.node_count()
    }

    fn __repr__(&self) -> String {
        format!("Graph(v{}, {} nodes, {} arcs)", self.inner.version(), self.inner.node_count(), self.inner.arc_count())
    }
}

/// Expands a skeleton expression into an unplaced graph.
#[pyfunction]
#[pyo3(signature = (skeleton, default_degree = 4))]
fn expand(skeleton: &Bound<'_, PyAny>, default_degree: u32) -> PyResult<PyGraph> {
    let expr: SkeletonExpr = from_py(skeleton)?;
    expand_expr(&expr, &ExpandConfig { default_degree })
        .map(|inner| PyGraph { inner })
        .map_err(err)
}

/// Resolves a decision's responses into `{"commit": {...}}` or `{"abort": {...}}`.
///
/// `responses` holds `(manager, verdict)` pairs such as `("AM_S", "ack")` or
/// `("AM_W", {"needProperty": "security"})`.
#[pyfunction]
#[pyo3(signature = (base_plan, responses, substitutes = None))]
fn resolve<'py>(
    py: Python<'py>,
    base_plan: &Bound<'py, PyAny>,
    responses: Vec<(Bound<'py, PyAny>, Bound<'py, PyAny>)>,
    substitutes: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let decision = Decision {
        id: DecisionId(1),
        proposer: Concern::Performance,
        rule: String::new(),
        tag: String::new(),
        proposed_delta: GraphDelta::default(),
        recruited_resource: None,
        base_plan: from_py(base_plan)?,
        substitutes: substitutes.map(from_py).transpose()?.unwrap_or_default(),
    };
    let responses = responses
        .iter()
        .map(|(who, v)| Ok(ConsensusResponse::new(from_py::<Concern>(who)?, from_py::<Verdict>(v)?)))
        .collect::<PyResult<Vec<_>>>()?;
    to_py(py, &resolve_core(&decision, &responses))
}

/// Re-runs `scenario` and compares with `trace`; returns the first differing
/// 1-based line, or `None` when identical.
#[pyfunction]
fn replay(py: Python<'_>, trace: &str, scenario: &PyScenario) -> PyResult<Option<usize>> {
    let s = scenario.inner.clone();
    let fresh = py.detach(move || run_scenario(&s)).map_err(err)?;
    Ok(first_divergence(trace, &fresh.trace_jsonl()))
}

#[pymodule]
pub fn multiconcern_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MulticoncernError", m.py().get_type::<MulticoncernError>())?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunReport>()?;
    m.add_class::<PyGraph>()?;
    m.add_function(wrap_pyfunction!(expand, m)?)?;
    m.add_function(wrap_pyfunction!(resolve, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    Ok(())
}
