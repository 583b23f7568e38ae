//! Python bindings for `cgail-core`.
//!
//! Tables cross the boundary as nested lists `[state][action]`; validation
//! failures raise `ValueError`, numerical blow-ups raise `ArithmeticError`.

use cgail_core::flow::{self, FlowState};
use cgail_core::metrics::{self, EmpiricalStateDistribution};
use cgail_core::onestep::{self, Integrator, ScalarState};
use cgail_core::stability;
use cgail_core::train as training;
use cgail_core::{fixtures, mdp, LabError};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Table = Vec<Vec<f64>>;

fn to_py(e: LabError) -> PyErr {
    match e {
        LabError::Io(io) => PyOSError::new_err(io.to_string()),
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Finite MDP with transition tensor `[s][a][s']`.
#[pyclass(name = "TabularMdp", module = "cgail", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMdp {
    inner: mdp::TabularMdp,
}

#[pymethods]
impl PyMdp {
    #[new]
    #[pyo3(signature = (transition, init_dist, gamma, eval_reward))]
    fn new(transition: Vec<Vec<Vec<f64>>>, init_dist: Vec<f64>, gamma: f64, eval_reward: Table) -> PyResult<Self> {
        let inner = mdp::TabularMdp::new(transition, init_dist, gamma, eval_reward).map_err(to_py)?;
        Ok(PyMdp { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyMdp { inner: mdp::TabularMdp::from_json_str(text).map_err(to_py)? })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    fn __repr__(&self) -> String {
        format!("TabularMdp(n_states={}, n_actions={}, gamma={})", self.inner.n_states, self.inner.n_actions, self.inner.gamma)
    }
}

/// Row-stochastic policy table, floored before any logarithm.
#[pyclass(name = "PolicyTable", module = "cgail", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: mdp::PolicyTable,
}

#[pymethods]
impl PyPolicy {
    #[new]
    fn new(probs: Table) -> PyResult<Self> {
        Ok(PyPolicy { inner: mdp::PolicyTable::new(probs).map_err(to_py)? })
    }

    #[staticmethod]
    fn uniform(n_states: usize, n_actions: usize) -> Self {
        PyPolicy { inner: mdp::PolicyTable::uniform(n_states, n_actions) }
    }

    #[staticmethod]
    fn from_logits(logits: Table) -> Self {
        PyPolicy { inner: mdp::PolicyTable::from_logits(&logits) }
    }

    fn probs(&self) -> Table {
        self.inner.probs().clone()
    }

    fn entropy(&self, state: usize) -> f64 {
        self.inner.entropy(state)
    }
}

/// Discriminator values in `[δ, 1 − δ]`.
#[pyclass(name = "DiscriminatorTable", module = "cgail", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDisc {
    inner: mdp::DiscriminatorTable,
}

#[pymethods]
impl PyDisc {
    #[new]
    fn new(values: Table) -> PyResult<Self> {
        Ok(PyDisc { inner: mdp::DiscriminatorTable::new(values).map_err(to_py)? })
    }

    #[staticmethod]
    fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        PyDisc { inner: mdp::DiscriminatorTable::constant(n_states, n_actions, value) }
    }

    fn values(&self) -> Table {
        self.inner.values().clone()
    }
}

/// Constants `(c, λ, E, k, α)` of the one-step system.
#[pyclass(name = "ScalarSystemParams", module = "cgail", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: onestep::ScalarSystemParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (c, lam, e, k = 0.0, alpha = 0.0))]
    fn new(c: f64, lam: f64, e: f64, k: f64, alpha: f64) -> PyResult<Self> {
        Ok(PyParams { inner: onestep::ScalarSystemParams::new(c, lam, e, k, alpha).map_err(to_py)? })
    }

    fn drift(&self, x: f64, y: f64, controlled: bool) -> (f64, f64) {
        onestep::drift(&self.inner, &ScalarState::new(x, y), controlled)
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("ScalarSystemParams(c={}, lam={}, e={}, k={}, alpha={})", p.c, p.lambda, p.expert_prob, p.k, p.alpha)
    }
}

/// Training hyperparameters; unspecified keywords take the library defaults.
#[pyclass(name = "TrainConfig", module = "cgail", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: training::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(training::TrainConfig::default()).expect("config serializes");
        if let Some(kw) = kwargs {
            for (key, v) in kw.iter() {
                let key: String = key.extract()?;
                let json = if let Ok(b) = v.extract::<bool>() {
                    serde_json::Value::from(b)
                } else if let Ok(i) = v.extract::<u64>() {
                    serde_json::Value::from(i)
                } else if let Ok(f) = v.extract::<f64>() {
                    serde_json::Value::from(f)
                } else if let Ok(s) = v.extract::<String>() {
                    serde_json::Value::from(s)
                } else {
                    return Err(PyValueError::new_err(format!("unsupported value for `{key}`")));
                };
                if value.get(&key).is_none() {
                    return Err(PyValueError::new_err(format!("unknown TrainConfig field `{key}`")));
                }
                value[&key] = json;
            }
        }
        let inner: training::TrainConfig =
            serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyTrainConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }
}

/// Per-iteration training records.
#[pyclass(name = "TrainingTrace", module = "cgail", frozen, skip_from_py_object)]
struct PyTrace {
    inner: training::TrainingTrace,
}

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    /// Column by CSV name, e.g. `"normalized_return"`.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let pick: fn(&training::IterRecord) -> f64 = match name {
            "iter" => |r| r.iter as f64,
            "return" => |r| r.ret,
            "normalized_return" => |r| r.normalized_return,
            "disc_mean" => |r| r.disc_mean,
            "disc_dev_half" => |r| r.disc_deviation_from_half,
            "tv_to_expert" => |r| r.tv_to_expert,
            "wasserstein_state" => |r| r.wasserstein_state,
            "regularizer_value" => |r| r.regularizer_value,
            _ => return Err(PyValueError::new_err(format!("unknown column `{name}`"))),
        };
        Ok(self.inner.records.iter().map(pick).collect())
    }

    fn convergence_step(&self) -> Option<usize> {
        training::convergence_step(&self.inner)
    }

    fn oscillation_range(&self, window: usize) -> PyResult<f64> {
        training::oscillation_range(&self.inner, window).map_err(to_py)
    }

    fn to_csv(&self) -> PyResult<String> {
        cgail_core::io::csv_string(&self.inner.records).map_err(to_py)
    }
}

/// `(mdp, expert)` for a built-in fixture name.
#[pyfunction]
fn fixture(name: &str) -> PyResult<(PyMdp, PyPolicy)> {
    let (m, e) = fixtures::builtin(name).ok_or_else(|| PyValueError::new_err(format!("unknown fixture `{name}`")))?;
    Ok((PyMdp { inner: m }, PyPolicy { inner: e }))
}

#[pyfunction]
fn solve_occupancy(m: &PyMdp, policy: &PyPolicy) -> PyResult<Vec<f64>> {
    mdp::solve_occupancy(&m.inner, &policy.inner).map_err(to_py)
}

/// Action values under `reward = log D + λ log π`.
#[pyfunction]
fn solve_q_entropy(m: &PyMdp, policy: &PyPolicy, disc: &PyDisc, lam: f64) -> PyResult<Table> {
    mdp::solve_q_entropy(&m.inner, &policy.inner, &disc.inner, lam).map_err(to_py)
}

#[pyfunction]
fn policy_return(m: &PyMdp, policy: &PyPolicy) -> PyResult<f64> {
    mdp::policy_return(&m.inner, &policy.inner).map_err(to_py)
}

/// `(disc_drift, policy_drift)` tables of the gradient flow.
#[pyfunction]
fn flow_drifts(m: &PyMdp, policy: &PyPolicy, expert: &PyPolicy, disc: &PyDisc, lam: f64) -> PyResult<(Table, Table)> {
    let state = FlowState { policy: policy.inner.clone(), disc: disc.inner.clone(), t: 0.0 };
    let r = flow::drift_report(&m.inner, &expert.inner, &state, lam).map_err(to_py)?;
    Ok((r.d_disc, r.d_policy))
}

/// `(max_abs_disc_drift, max_abs_policy_drift)` at `π = π_E`, `D ≡ 1/2`.
#[pyfunction]
fn desired_state_report(m: &PyMdp, expert: &PyPolicy, lam: f64) -> PyResult<(f64, f64)> {
    let r = flow::desired_state_report(&m.inner, &expert.inner, lam).map_err(to_py)?;
    Ok((r.max_abs_disc_drift, r.max_abs_policy_drift))
}

/// One-step trajectory as a list of `(t, x, y)`.
#[pyfunction]
#[pyo3(signature = (params, x0, y0, controlled = true, dt = onestep::DEFAULT_DT, steps = 1000, integrator = "rk4"))]
fn integrate(
    params: &PyParams,
    x0: f64,
    y0: f64,
    controlled: bool,
    dt: f64,
    steps: usize,
    integrator: &str,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let method: Integrator = integrator.parse().map_err(to_py)?;
    let traj = onestep::integrate(&params.inner, ScalarState::new(x0, y0), controlled, dt, steps, method).map_err(to_py)?;
    Ok(traj.states.iter().map(|s| (s.t, s.x, s.y)).collect())
}

#[pyfunction]
#[pyo3(signature = (params, controlled = true, grid = 20))]
fn find_equilibria(params: &PyParams, controlled: bool, grid: usize) -> PyResult<Vec<(f64, f64)>> {
    onestep::find_equilibria(&params.inner, controlled, grid).map_err(to_py)
}

/// Closed-form Jacobian at `(1/2, E)` with its spectrum and verdicts.
#[pyfunction]
fn jacobian<'py>(py: Python<'py>, params: &PyParams) -> PyResult<Bound<'py, PyDict>> {
    let j = stability::jacobian_closed_form(&params.inner);
    let v = stability::classify(&params.inner);
    let check = stability::assumption_check(&params.inner);
    let d = PyDict::new(py);
    d.set_item("entries", j.entries().map(|r| r.to_vec()).to_vec())?;
    d.set_item("det", j.det)?;
    d.set_item("trace", j.trace)?;
    d.set_item("eig_real", j.eig_real.to_vec())?;
    d.set_item("eig_imag", j.eig_imag.to_vec())?;
    d.set_item("assumption_holds", check.holds)?;
    d.set_item("assumption_terms", check.terms.to_vec())?;
    d.set_item("eig_stable", v.eig_stable)?;
    d.set_item("det_trace_stable", v.det_trace_stable)?;
    Ok(d)
}

/// Exact optimal-transport cost between weight vectors under `cost`.
#[pyfunction]
fn wasserstein(p: Vec<f64>, q: Vec<f64>, cost: Table) -> PyResult<f64> {
    let support: Vec<usize> = (0..p.len()).collect();
    let a = EmpiricalStateDistribution::new(support.clone(), p, cost.clone()).map_err(to_py)?;
    let b = EmpiricalStateDistribution::new(support, q, cost).map_err(to_py)?;
    metrics::wasserstein(&a, &b).map_err(to_py)
}

/// Runs C-GAIL training; releases the GIL while it runs.
#[pyfunction]
fn train(py: Python<'_>, m: &PyMdp, expert: &PyPolicy, config: &PyTrainConfig) -> PyResult<PyTrace> {
    let (mi, ei, ci) = (m.inner.clone(), expert.inner.clone(), config.inner.clone());
    let trace = py.detach(move || training::train(&mi, &ei, &ci)).map_err(to_py)?;
    Ok(PyTrace { inner: trace })
}

#[pymodule]
fn cgail(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyDisc>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    m.add_function(wrap_pyfunction!(solve_occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(solve_q_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(policy_return, m)?)?;
    m.add_function(wrap_pyfunction!(flow_drifts, m)?)?;
    m.add_function(wrap_pyfunction!(desired_state_report, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(find_equilibria, m)?)?;
    m.add_function(wrap_pyfunction!(jacobian, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
