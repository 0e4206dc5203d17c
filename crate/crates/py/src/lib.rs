//! Python module `nscmdp`: sequence generation, exact evaluation, the LP oracle,
//! the learner and regret reports.
//!
//! Tables cross the boundary as flat lists in the core crate's storage order.
//! Structured results (oracle solutions, configs, reports) come back as dicts; a
//! non-finite float such as an infeasible episode's `mu_star` becomes `None`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use nscmdp::env_gen::{self, ConstraintSchedule, Drift, GeneratorConfig, NonStationaryCmdp, SequenceShape};
use nscmdp::learner::{self, Preset, PresetInputs};
use nscmdp::metrics::{EpisodeTrace, RegretReport};
use nscmdp::model::{self, Shape, Signal};
use nscmdp::{format, oracle, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// One episode's CMDP.
#[pyclass(name = "EpisodeModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEpisodeModel {
    inner: model::EpisodeModel,
}

#[pymethods]
impl PyEpisodeModel {
    #[new]
    #[pyo3(signature = (num_states, num_actions, horizon, transition, reward, utility, constraint_offset, initial_state=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        utility: Vec<f64>,
        constraint_offset: f64,
        initial_state: usize,
    ) -> PyResult<Self> {
        let shape = Shape::new(num_states, num_actions, horizon).map_err(py_err)?;
        let inner = model::EpisodeModel::new(shape, transition, reward, utility, constraint_offset, initial_state)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.inner.shape();
        (s.num_states, s.num_actions, s.horizon)
    }

    #[getter]
    fn constraint_offset(&self) -> f64 {
        self.inner.constraint_offset()
    }

    #[getter]
    fn transition(&self) -> Vec<f64> {
        self.inner.transition().to_vec()
    }

    #[getter]
    fn reward(&self) -> Vec<f64> {
        self.inner.reward().to_vec()
    }

    #[getter]
    fn utility(&self) -> Vec<f64> {
        self.inner.utility().to_vec()
    }

    fn to_text(&self) -> String {
        format::write_episode(&self.inner)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: format::parse_episode(text).map_err(py_err)?,
        })
    }
}

/// Per-step action distributions, flat in `(h, x, a)` order.
#[pyclass(name = "Policy", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: model::PolicyTable,
}

#[pymethods]
impl PyPolicy {
    #[new]
    fn new(num_states: usize, num_actions: usize, horizon: usize, probs: Vec<f64>) -> PyResult<Self> {
        let shape = Shape::new(num_states, num_actions, horizon).map_err(py_err)?;
        Ok(Self {
            inner: model::PolicyTable::new(shape, probs).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn uniform(num_states: usize, num_actions: usize, horizon: usize) -> PyResult<Self> {
        let shape = Shape::new(num_states, num_actions, horizon).map_err(py_err)?;
        Ok(Self {
            inner: model::PolicyTable::uniform(shape),
        })
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }
}

/// A generated sequence of episode models.
#[pyclass(name = "Sequence", frozen, skip_from_py_object)]
struct PySequence {
    inner: NonStationaryCmdp,
}

#[pymethods]
impl PySequence {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// 1-based episode access.
    fn episode(&self, m: usize) -> PyResult<PyEpisodeModel> {
        if m == 0 || m > self.inner.len() {
            return Err(PyValueError::new_err(format!("episode {m} outside 1..={}", self.inner.len())));
        }
        Ok(PyEpisodeModel {
            inner: self.inner.episode(m).clone(),
        })
    }

    /// `(B_P, B_r, B_g)`.
    fn model_budgets(&self) -> (f64, f64, f64) {
        env_gen::model_budgets(&self.inner)
    }

    fn to_text(&self) -> String {
        format::write_sequence(&self.inner)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: format::parse_sequence(text).map_err(py_err)?,
        })
    }
}

/// Learner hyperparameters; build with `preset_params` or `LearnerConfig.from_json`.
#[pyclass(name = "LearnerConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLearnerConfig {
    inner: learner::LearnerConfig,
}

#[pymethods]
impl PyLearnerConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: learner::LearnerConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &self.inner)
    }
}

/// Output of `run_learner`.
#[pyclass(name = "Trace", frozen, skip_from_py_object)]
struct PyTrace {
    inner: EpisodeTrace,
}

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn mu_path(&self) -> Vec<f64> {
        self.inner.mu_path()
    }

    /// Policy executed in episode `m` (1-based).
    fn policy(&self, m: usize) -> PyResult<PyPolicy> {
        let rec = m
            .checked_sub(1)
            .and_then(|i| self.inner.records.get(i))
            .ok_or_else(|| PyValueError::new_err(format!("episode {m} out of range")))?;
        Ok(PyPolicy {
            inner: rec.policy.clone(),
        })
    }

    /// Sum of observed rewards in episode `m`.
    fn observed_return(&self, m: usize) -> PyResult<f64> {
        let rec = m
            .checked_sub(1)
            .and_then(|i| self.inner.records.get(i))
            .ok_or_else(|| PyValueError::new_err(format!("episode {m} out of range")))?;
        Ok(rec.trajectory.steps.iter().map(|s| s.reward).sum())
    }
}

/// Exact values of `policy` on `model`: dict of flat `v_r`, `v_g`, `q_r`, `q_g`
/// tables over steps `0..=H`.
#[pyfunction]
fn evaluate_exact<'py>(py: Python<'py>, model: &PyEpisodeModel, policy: &PyPolicy) -> PyResult<Bound<'py, PyDict>> {
    let vals = model::evaluate_exact(&model.inner, &policy.inner).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("v_r", vals.v_table(Signal::Reward).to_vec())?;
    d.set_item("v_g", vals.v_table(Signal::Utility).to_vec())?;
    d.set_item("q_r", vals.q_table(Signal::Reward).to_vec())?;
    d.set_item("q_g", vals.q_table(Signal::Utility).to_vec())?;
    let x1 = model.inner.initial_state();
    d.set_item("v_r1", vals.v(Signal::Reward, 0, x1))?;
    d.set_item("v_g1", vals.v(Signal::Utility, 0, x1))?;
    Ok(d)
}

#[pyfunction]
fn lagrangian(v_r1: f64, v_g1: f64, b: f64, mu: f64, xi: f64) -> PyResult<f64> {
    model::lagrangian(v_r1, v_g1, b, mu, xi).map_err(py_err)
}

#[pyfunction]
fn solve_episode<'py>(py: Python<'py>, model: &PyEpisodeModel) -> PyResult<Bound<'py, PyAny>> {
    let sol = oracle::solve_episode(&model.inner).map_err(py_err)?;
    serialize(py, &sol)
}

/// Generate a sequence. `drift` is `"stationary"`, `"piecewise"` (uses
/// `num_switches`) or `"linear"` (uses `rate`).
#[pyfunction]
#[pyo3(signature = (seed, num_states, num_actions, horizon, episodes, constraint_offset, drift="stationary", num_switches=0, rate=0.0, min_gamma=Some(0.05)))]
#[allow(clippy::too_many_arguments)]
fn make_sequence(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    episodes: usize,
    constraint_offset: f64,
    drift: &str,
    num_switches: usize,
    rate: f64,
    min_gamma: Option<f64>,
) -> PyResult<PySequence> {
    let drift = match drift {
        "stationary" => Drift::Stationary,
        "piecewise" => Drift::PiecewiseConstant { num_switches },
        "linear" => Drift::LinearDrift { rate },
        other => return Err(PyValueError::new_err(format!("unknown drift `{other}`"))),
    };
    let shape = SequenceShape {
        num_states,
        num_actions,
        horizon,
        episodes,
    };
    let cfg = GeneratorConfig {
        min_gamma,
        ..GeneratorConfig::default()
    };
    let inner = env_gen::make_sequence(seed, shape, drift, &ConstraintSchedule::Constant(constraint_offset), &cfg)
        .map_err(py_err)?;
    Ok(PySequence { inner })
}

#[pyfunction]
fn solve_sequence<'py>(py: Python<'py>, seq: &PySequence) -> PyResult<Bound<'py, PyAny>> {
    let sols = oracle::solve_sequence(&seq.inner).map_err(py_err)?;
    serialize(py, &sols)
}

/// Closed-form learner schedule for `preset` in 1..=4.
#[pyfunction]
#[pyo3(signature = (preset, episodes, horizon, num_states, num_actions, b_delta, b_star, gamma=None, rho=0.5, confidence=0.05, dim=None))]
#[allow(clippy::too_many_arguments)]
fn preset_params(
    preset: u8,
    episodes: usize,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    b_delta: f64,
    b_star: f64,
    gamma: Option<f64>,
    rho: f64,
    confidence: f64,
    dim: Option<usize>,
) -> PyResult<PyLearnerConfig> {
    let shape = Shape::new(num_states, num_actions, horizon).map_err(py_err)?;
    let mut inp = PresetInputs::new(Preset::from_number(preset).map_err(py_err)?, shape, episodes, b_delta, b_star);
    inp.gamma = gamma;
    inp.rho = rho;
    inp.confidence = confidence;
    inp.dim = dim;
    Ok(PyLearnerConfig {
        inner: learner::preset_params(&inp).map_err(py_err)?,
    })
}

#[pyfunction]
fn run_learner(py: Python<'_>, seq: &PySequence, config: &PyLearnerConfig, seed: u64) -> PyResult<PyTrace> {
    let inner = py
        .detach(|| learner::run(&seq.inner, &config.inner, seed))
        .map_err(py_err)?;
    Ok(PyTrace { inner })
}

/// Solve the oracle and report `dr`, `cv` and the per-episode rows.
#[pyfunction]
fn regret_report<'py>(py: Python<'py>, trace: &PyTrace, seq: &PySequence) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| {
            let sols = oracle::solve_sequence(&seq.inner)?;
            RegretReport::build(&trace.inner, &sols, &seq.inner, None)
        })
        .map_err(py_err)?;
    serialize(py, &report)
}

#[pymodule]
#[pyo3(name = "nscmdp")]
fn nscmdp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEpisodeModel>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyLearnerConfig>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(evaluate_exact, m)?)?;
    m.add_function(wrap_pyfunction!(lagrangian, m)?)?;
    m.add_function(wrap_pyfunction!(solve_episode, m)?)?;
    m.add_function(wrap_pyfunction!(make_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(solve_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(preset_params, m)?)?;
    m.add_function(wrap_pyfunction!(run_learner, m)?)?;
    m.add_function(wrap_pyfunction!(regret_report, m)?)?;
    Ok(())
}
