//! Python bindings: a thin layer over the core library exposing model
//! loading, the estimation pipeline, the loss integral, and the oracle
//! cross-checks. Results cross the boundary as plain dicts.

use evi_core::model::{parse_model, Decision, DecisionModel};
use evi_core::{
    discrete_tree_evpi, evaluate_expression, nested_mc_evi, parse_expression, quadrature_evpi,
    DiscreteModel, DiscreteVariable, EviPipeline, EviResult, EvidenceSpec, OracleEstimate,
    SampleConfig,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::collections::BTreeMap;

fn invalid<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn failed<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A decision problem: uncertain state variables plus valued alternatives.
#[pyclass(frozen, module = "evi_py")]
struct Model {
    inner: DecisionModel,
}

#[pymethods]
impl Model {
    /// Parses and validates a model from its JSON text.
    #[new]
    fn new(json: &str) -> PyResult<Self> {
        Ok(Model {
            inner: parse_model(json).map_err(invalid)?,
        })
    }

    #[getter]
    fn variables(&self) -> Vec<String> {
        self.inner.variable_names()
    }

    #[getter]
    fn decisions(&self) -> Vec<String> {
        self.inner.decisions.iter().map(|d| d.name.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({} variables, {} decisions)",
            self.inner.variables.len(),
            self.inner.decisions.len()
        )
    }
}

fn result_dict<'py>(py: Python<'py>, result: &EviResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("evidence", result.evidence.label())?;
    d.set_item("evi", result.evi)?;
    d.set_item("preposterior_mean", result.preposterior.mean)?;
    d.set_item("preposterior_variance", result.preposterior.variance)?;
    d.set_item("method", result.method.to_string())?;
    Ok(d)
}

fn estimate_dict<'py>(py: Python<'py>, est: &OracleEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("value", est.value)?;
    d.set_item("standard_error", est.standard_error)?;
    d.set_item("method", est.method.to_string())?;
    d.set_item("cost", est.cost)?;
    d.set_item("convergence_gap", est.convergence_gap)?;
    Ok(d)
}

/// The sample/fit stage computed once over a model; answers evidence
/// queries like "perfect:x1,x2" or "rim:x1=4;perfect:x2".
#[pyclass(frozen, module = "evi_py")]
struct Pipeline {
    inner: EviPipeline,
    model: DecisionModel,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (model, samples = 10_000, seed = 0))]
    fn new(model: &Model, samples: usize, seed: u64) -> PyResult<Self> {
        let config = SampleConfig {
            sample_size: samples,
            seed,
        };
        Ok(Pipeline {
            inner: EviPipeline::new(&model.inner, &config).map_err(failed)?,
            model: model.inner.clone(),
        })
    }

    /// Best decision by prior mean.
    #[getter]
    fn star(&self) -> String {
        self.inner.z.star.clone()
    }

    /// Runner-up decision.
    #[getter]
    fn plus(&self) -> String {
        self.inner.z.plus.clone()
    }

    /// Prior mean of the value gap between best and runner-up.
    #[getter]
    fn mu_prime(&self) -> f64 {
        self.inner.z.mu_prime
    }

    /// Prior variance of the value gap.
    #[getter]
    fn sigma2_prime(&self) -> f64 {
        self.inner.z.sigma2_prime
    }

    /// Per-variable variance contributions to the value gap.
    #[getter]
    fn contributions(&self) -> BTreeMap<String, f64> {
        self.inner
            .z
            .variable_names
            .iter()
            .cloned()
            .zip(self.inner.z.contributions.iter().copied())
            .collect()
    }

    /// Answers one evidence query with the closed-form loss integral.
    fn query<'py>(&self, py: Python<'py>, evidence: &str) -> PyResult<Bound<'py, PyDict>> {
        let spec = EvidenceSpec::parse(evidence).map_err(invalid)?;
        spec.check(&self.model.variable_names()).map_err(invalid)?;
        let result = self.inner.query(&spec).map_err(failed)?;
        result_dict(py, &result)
    }

    /// Answers one evidence query by numerical integration of the loss.
    #[pyo3(signature = (evidence, panels = 512))]
    fn query_quadrature<'py>(
        &self,
        py: Python<'py>,
        evidence: &str,
        panels: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let spec = EvidenceSpec::parse(evidence).map_err(invalid)?;
        spec.check(&self.model.variable_names()).map_err(invalid)?;
        let result = self.inner.query_quadrature(&spec, panels).map_err(failed)?;
        result_dict(py, &result)
    }

    /// Sample-average shortfall: the direct EVPI estimate from the table.
    fn empirical_evpi(&self) -> f64 {
        self.inner.empirical_evpi()
    }

    /// One perfect-information query per variable, answered in order.
    fn perfect_information_profile<'py>(
        &self,
        py: Python<'py>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        evi_core::default_queries(&self.model)
            .iter()
            .map(|q| {
                let result = self.inner.query(q).map_err(failed)?;
                result_dict(py, &result)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Pipeline(star='{}', plus='{}', mu_prime={}, sigma2_prime={})",
            self.inner.z.star, self.inner.z.plus, self.inner.z.mu_prime, self.inner.z.sigma2_prime
        )
    }
}

/// Expected shortfall of a normal gap: E[max(0, -Z)] for Z ~ N(mean, variance).
#[pyfunction]
#[pyo3(name = "normal_loss")]
fn normal_loss_py(mean: f64, variance: f64) -> PyResult<f64> {
    evi_core::normal_loss(mean, variance).map_err(invalid)
}

/// Evaluates a value expression against a variable assignment.
#[pyfunction]
#[pyo3(name = "evaluate")]
fn evaluate_py(text: &str, env: BTreeMap<String, f64>) -> PyResult<f64> {
    let expr = parse_expression(text).map_err(invalid)?;
    let env: std::collections::HashMap<String, f64> = env.into_iter().collect();
    evaluate_expression(&expr, &env).map_err(invalid)
}

/// Dense-grid EVPI for one observed variable of an all-normal model.
#[pyfunction]
#[pyo3(name = "quadrature_evpi", signature = (model, variable, nodes = 1024))]
fn quadrature_evpi_py<'py>(
    py: Python<'py>,
    model: &Model,
    variable: &str,
    nodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let est = quadrature_evpi(&model.inner, variable, nodes).map_err(failed)?;
    estimate_dict(py, &est)
}

/// Two-level Monte Carlo EVI estimate for an evidence query.
#[pyfunction]
#[pyo3(name = "nested_mc_evi", signature = (model, evidence, outer = 200, inner = 200, seed = 0))]
fn nested_mc_evi_py<'py>(
    py: Python<'py>,
    model: &Model,
    evidence: &str,
    outer: usize,
    inner: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = EvidenceSpec::parse(evidence).map_err(invalid)?;
    spec.check(&model.inner.variable_names()).map_err(invalid)?;
    let est = nested_mc_evi(&model.inner, &spec, outer, inner, seed).map_err(failed)?;
    estimate_dict(py, &est)
}

/// Exact EVPI by full tree rollback on a discrete model. Variables arrive
/// as (name, [(value, probability), ...]) pairs, decisions as
/// (name, expression) pairs; `observed` names the variables revealed
/// before deciding.
#[pyfunction]
#[pyo3(name = "discrete_tree_evpi")]
fn discrete_tree_evpi_py<'py>(
    py: Python<'py>,
    variables: Vec<(String, Vec<(f64, f64)>)>,
    decisions: Vec<(String, String)>,
    observed: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let model = DiscreteModel {
        variables: variables
            .into_iter()
            .map(|(name, outcomes)| DiscreteVariable { name, outcomes })
            .collect(),
        decisions: decisions
            .into_iter()
            .map(|(name, text)| {
                Ok(Decision {
                    value: parse_expression(&text).map_err(invalid)?,
                    value_text: text,
                    name,
                })
            })
            .collect::<PyResult<Vec<Decision>>>()?,
    };
    let names: Vec<&str> = observed.iter().map(String::as_str).collect();
    let est = discrete_tree_evpi(&model, &names).map_err(failed)?;
    estimate_dict(py, &est)
}

#[pymodule]
fn evi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Pipeline>()?;
    m.add_function(wrap_pyfunction!(normal_loss_py, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_py, m)?)?;
    m.add_function(wrap_pyfunction!(quadrature_evpi_py, m)?)?;
    m.add_function(wrap_pyfunction!(nested_mc_evi_py, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_tree_evpi_py, m)?)?;
    Ok(())
}
