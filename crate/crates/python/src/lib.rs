//! Python bindings: diagrams, templates, inference, planners, environments
//! and simulation runs. Exact values cross over as `fractions.Fraction`.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use cfplan_core::agents::{AgentKind, AgentSpec, AgentState};
use cfplan_core::dsl;
use cfplan_core::envs::{self, Environment};
use cfplan_core::inference::Model;
use cfplan_core::planning::{
    indifference_check, is_downstream, is_on_path_to_value, solve_backward_induction, solve_enumeration,
    solve_policy_iteration, IndifferenceMode, Policy, SolveResult, DEFAULT_CAP,
};
use cfplan_core::sim::{self, RunConfig};
use cfplan_core::value::{Rational, Value};
use cfplan_core::{Diagram, DiagramTemplate};

create_exception!(cfplan, CfplanError, PyException);

fn err(e: cfplan_core::Error) -> PyErr {
    CfplanError::new_err(e.to_string())
}

fn fraction<'py>(py: Python<'py>, r: &Rational) -> PyResult<Bound<'py, PyAny>> {
    py.import("fractions")?.getattr("Fraction")?.call1((r.to_string(),))
}

fn json<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn policy_dict<'py>(py: Python<'py>, p: &Policy) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (pa, a) in p.rows() {
        let key: Vec<String> = pa.iter().map(Value::to_string).collect();
        d.set_item(pyo3::types::PyTuple::new(py, key)?, a.to_string())?;
    }
    Ok(d)
}

fn solution<'py>(py: Python<'py>, s: &SolveResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", format!("{:?}", s.method))?;
    d.set_item("utility", fraction(py, &s.utility)?)?;
    d.set_item("policy", policy_dict(py, &s.policy)?)?;
    d.set_item("stationary", s.stationary)?;
    let rules = PyDict::new(py);
    for (id, p) in &s.rules {
        rules.set_item(id, policy_dict(py, p)?)?;
    }
    d.set_item("rules", rules)?;
    Ok(d)
}

/// A finite world-model diagram.
#[pyclass(name = "Diagram", module = "cfplan", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDiagram(Diagram);

#[pymethods]
impl PyDiagram {
    /// Parses `.cid` text holding a `diagram` block.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        dsl::load_diagram(text).map(PyDiagram).map_err(err)
    }

    #[getter]
    fn label(&self) -> &str {
        &self.0.label
    }

    fn nodes(&self) -> Vec<String> {
        self.0.nodes.keys().cloned().collect()
    }

    fn parents(&self, node: &str) -> PyResult<Vec<String>> {
        Ok(self.0.node(node).map_err(err)?.parents.clone())
    }

    fn serialize(&self) -> String {
        dsl::serialize(&self.0)
    }

    /// Exact probability of an event, optionally given another.
    #[pyo3(signature = (event, given=None))]
    fn prob<'py>(&self, py: Python<'py>, event: &str, given: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let e = dsl::parse_event(event).map_err(|e| err(e.into()))?;
        let p = match given {
            Some(g) => {
                let c = dsl::parse_event(g).map_err(|e| err(e.into()))?;
                cfplan_core::inference::cond_prob(&self.0, &e, &c)
            }
            None => cfplan_core::inference::prob(&self.0, &e),
        }
        .map_err(err)?;
        fraction(py, &p)
    }

    /// Marginal of one node as a `{value: Fraction}` dict.
    fn marginal<'py>(&self, py: Python<'py>, node: &str) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (v, p) in cfplan_core::inference::marginal(&self.0, node).map_err(err)? {
            d.set_item(v.to_string(), fraction(py, &p)?)?;
        }
        Ok(d)
    }

    fn expected_utility<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let m = Model::new(&self.0).map_err(err)?;
        fraction(py, &m.expected_utility().map_err(err)?)
    }

    /// Optimal policy by exhaustive enumeration (`"enum"`) or backward
    /// induction (`"bi"`).
    #[pyo3(signature = (method="enum", cap=DEFAULT_CAP))]
    fn solve<'py>(&self, py: Python<'py>, method: &str, cap: u64) -> PyResult<Bound<'py, PyDict>> {
        let s = match method {
            "enum" => solve_enumeration(&self.0, cap),
            "bi" => solve_backward_induction(&self.0),
            m => return Err(CfplanError::new_err(format!("unknown method `{m}`"))),
        }
        .map_err(err)?;
        solution(py, &s)
    }

    /// Graph predicates and the vertex indifference check for `node`.
    fn indifference<'py>(&self, py: Python<'py>, node: &str) -> PyResult<Bound<'py, PyDict>> {
        let rep = indifference_check(&self.0, node, &IndifferenceMode::Vertex).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("downstream", is_downstream(&self.0, node).map_err(err)?)?;
        d.set_item("on_path_to_value", is_on_path_to_value(&self.0, node).map_err(err)?)?;
        d.set_item("passed", rep.passed())?;
        d.set_item("complete", rep.complete)?;
        d.set_item("witnesses", rep.witness_labels())?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Diagram({:?}, {} nodes)", self.0.label, self.0.nodes.len())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

/// A repeating diagram pattern.
#[pyclass(name = "Template", module = "cfplan", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTemplate(DiagramTemplate);

#[pymethods]
impl PyTemplate {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        dsl::load_template(text).map(PyTemplate).map_err(err)
    }

    #[getter]
    fn label(&self) -> &str {
        &self.0.label
    }

    fn unroll(&self, steps: u32) -> PyResult<PyDiagram> {
        self.0.unroll(steps).map(PyDiagram).map_err(err)
    }

    fn serialize(&self) -> String {
        dsl::serialize_template(&self.0)
    }

    /// Exact policy iteration on an infinite-horizon template.
    fn solve<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        solution(py, &solve_policy_iteration(&self.0).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Template({:?})", self.0.label)
    }
}

/// A shipped environment.
#[pyclass(name = "Environment", module = "cfplan", frozen)]
struct PyEnvironment(Environment);

#[pymethods]
impl PyEnvironment {
    /// Builds a shipped environment; keyword arguments are its parameters.
    #[new]
    #[pyo3(signature = (name, **params))]
    fn new(name: &str, params: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut table = toml::Table::new();
        if let Some(p) = params {
            for (k, v) in p.iter() {
                let text: String = v.str()?.extract()?;
                let value = match v.extract::<i64>() {
                    Ok(i) => toml::Value::Integer(i),
                    Err(_) => toml::Value::String(text),
                };
                table.insert(k.extract()?, value);
            }
        }
        Environment::by_name(name, &table).map(PyEnvironment).map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        self.0.name()
    }

    #[getter]
    fn description(&self) -> &str {
        &self.0.meta.description
    }

    #[getter]
    fn components(&self) -> Vec<String> {
        self.0.meta.components.clone()
    }

    fn actions(&self) -> Vec<String> {
        self.0.actions().values().iter().map(Value::to_string).collect()
    }

    fn world(&self) -> PyTemplate {
        PyTemplate(self.0.world.clone())
    }

    /// `(cid, toml)` text of the shipped files.
    fn files(&self) -> PyResult<(String, String)> {
        self.0.to_files().map_err(err)
    }

    /// First action of a pretrained agent at the start state.
    #[pyo3(signature = (kind, gamma=None))]
    fn first_action(&self, kind: &str, gamma: Option<&str>) -> PyResult<String> {
        let kind: AgentKind = serde_json::from_value(serde_json::Value::String(kind.into()))
            .map_err(|_| CfplanError::new_err(format!("unknown agent kind `{kind}`")))?;
        let gamma = match gamma {
            Some(g) => cfplan_core::value::parse_rational(g).ok_or_else(|| CfplanError::new_err("bad gamma"))?,
            None => self.0.gamma().map_err(err)?,
        };
        let spec = AgentSpec {
            pretrain: true,
            ..AgentSpec::new(kind, gamma)
        };
        let rng = cfplan_core::learning::stream(0, 2);
        let st = AgentState::new(&spec, &self.0, rng).map_err(err)?;
        let s = self.0.start_state(&mut cfplan_core::learning::stream(0, 0)).map_err(err)?;
        let (a, _, _) = cfplan_core::agents::agent_step(&spec, &self.0, &st, &s).map_err(err)?;
        Ok(a.to_string())
    }

    fn __repr__(&self) -> String {
        format!("Environment({:?})", self.0.name())
    }
}

/// Names of the shipped environments.
#[pyfunction]
fn shipped() -> PyResult<Vec<String>> {
    Ok(envs::shipped().map_err(err)?.iter().map(|e| e.name().to_string()).collect())
}

/// Runs an episode from TOML config text and returns its records as dicts.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyList>> {
    let cfg = RunConfig::from_toml(config, None).map_err(err)?;
    let recs = sim::run_episode(&cfg).map_err(err)?;
    let out = PyList::empty(py);
    for r in &recs {
        out.append(json(py, &serde_json::to_value(r).map_err(|e| err(e.into()))?)?)?;
    }
    Ok(out)
}

/// Trace text (header plus JSON Lines records) for a TOML config.
#[pyfunction]
fn trace(config: &str) -> PyResult<String> {
    let cfg = RunConfig::from_toml(config, None).map_err(err)?;
    sim::trace_text(&cfg, &sim::run_episode(&cfg).map_err(err)?).map_err(err)
}

/// First divergence between two trace texts, as printed by the CLI.
#[pyfunction]
fn compare(a: &str, b: &str) -> PyResult<String> {
    Ok(sim::compare(a, b).map_err(err)?.to_string())
}

#[pymodule]
fn cfplan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CfplanError", m.py().get_type::<CfplanError>())?;
    m.add_class::<PyDiagram>()?;
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_function(wrap_pyfunction!(shipped, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(trace, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
