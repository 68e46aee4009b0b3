//! Python bindings: configs, training and evaluation, environments, agents
//! and the gradient checks.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use arq_core::cells::{self, DiffScheme, GoodnessKind};
use arq_core::envs::{self, EnvConfig, Environment};
use arq_core::harness::{self, RunConfig};
use arq_core::learner::{build_agent, Agent, EpsilonSchedule, TrainOutcome};
use arq_core::linalg::SeededRng;

fn err(e: arq_core::Error) -> PyErr {
    match e {
        arq_core::Error::Io { .. } | arq_core::Error::NonFiniteGradient { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serialize through JSON into plain Python objects.
fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn scheme(name: &str) -> PyResult<DiffScheme> {
    match name {
        "central" => Ok(DiffScheme::Central),
        "extrapolated" => Ok(DiffScheme::Extrapolated),
        other => Err(PyValueError::new_err(format!("unknown scheme `{other}`"))),
    }
}

/// Resolved run configuration.
#[pyclass(name = "RunConfig", module = "arq", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        RunConfig::load(&path, &overrides).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml(text).map(|inner| Self { inner }).map_err(err)
    }

    /// Copy with `key=value` overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        let mut value: toml::Value = toml::Value::Table(toml::from_str(&self.inner.to_toml()).expect("own output parses"));
        for o in &overrides {
            harness::apply_override(&mut value, o).map_err(err)?;
        }
        RunConfig::from_value(value).map(|inner| Self { inner }).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn digest(&self) -> String {
        self.inner.digest_hex()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn total_steps(&self) -> u64 {
        self.inner.total_steps
    }

    #[getter]
    fn run_dir(&self) -> PathBuf {
        self.inner.run_dir()
    }

    /// Train every seed and return the run summary.
    fn train<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let summary = py.detach(|| harness::train(&self.inner)).map_err(err)?;
        to_py(py, &summary)
    }

    #[pyo3(signature = (checkpoint, episodes = 100, epsilon = 0.0, seed = None, max_steps = 100_000))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        checkpoint: PathBuf,
        episodes: usize,
        epsilon: f64,
        seed: Option<u64>,
        max_steps: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let seed = seed.unwrap_or(self.inner.seeds[0]);
        let report = py
            .detach(|| harness::evaluate(&self.inner, &checkpoint, episodes, epsilon, seed, max_steps))
            .map_err(err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (checkpoint, states = 100, top_k = harness::DEFAULT_TOP_K, epsilon = 0.0, seed = None))]
    fn inspect<'py>(
        &self,
        py: Python<'py>,
        checkpoint: PathBuf,
        states: usize,
        top_k: usize,
        epsilon: f64,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let seed = seed.unwrap_or(self.inner.seeds[0]);
        let table = harness::inspect(&self.inner, &checkpoint, states, top_k, epsilon, seed).map_err(err)?;
        to_py(py, &table)
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(name={:?}, digest={})", self.inner.name, &self.inner.digest_hex()[..12])
    }
}

/// Breakout, SpaceInvaders or the point-mass task.
#[pyclass(name = "Env", module = "arq", unsendable)]
struct PyEnv {
    inner: Box<dyn Environment>,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (name, sticky_action_prob = None))]
    fn new(name: &str, sticky_action_prob: Option<f64>) -> PyResult<Self> {
        let mut cfg = EnvConfig::named(name);
        if let Some(p) = sticky_action_prob {
            cfg.sticky_action_prob = p;
        }
        cfg.build().map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec().name.clone()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.spec().obs_dim
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.spec().n_actions
    }

    #[pyo3(signature = (seed = None))]
    fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        self.inner.reset(seed)
    }

    /// Returns `(obs, reward, done)`.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool)> {
        if action >= self.inner.spec().n_actions {
            return Err(PyValueError::new_err(format!("action {action} out of range")));
        }
        let s = self.inner.step(action).map_err(err)?;
        Ok((s.obs, s.reward, s.done))
    }
}

/// A cell network or DQN agent in 64-bit, built from a run config.
#[pyclass(name = "Agent", module = "arq", unsendable)]
struct PyAgent {
    inner: Box<dyn Agent<f64>>,
    act_rng: SeededRng,
    replay_rng: SeededRng,
}

#[pymethods]
impl PyAgent {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyRunConfig, seed: u64) -> PyResult<Self> {
        let c = &config.inner;
        let spec = c.env.build().map_err(err)?.spec().clone();
        let mut init = SeededRng::with_stream(seed, 0);
        let inner = build_agent::<f64>(c.agent, &c.network, &c.learner, &spec, &mut init).map_err(err)?;
        Ok(Self {
            inner,
            act_rng: SeededRng::with_stream(seed, 1),
            replay_rng: SeededRng::with_stream(seed, 2),
        })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn buffer_len(&self) -> usize {
        self.inner.buffer_len()
    }

    fn begin_episode(&mut self) {
        self.inner.begin_episode();
    }

    fn act(&mut self, obs: Vec<f64>, epsilon: f64) -> PyResult<usize> {
        self.inner.act(&obs, epsilon, &mut self.act_rng).map_err(err)
    }

    fn observe(&mut self, action: usize, reward: f64, next_obs: Vec<f64>, done: bool) -> PyResult<()> {
        self.inner.observe(action, reward, &next_obs, done).map_err(err)
    }

    /// Per-head losses, or `None` while the buffer is too small.
    fn train_step(&mut self) -> PyResult<Option<Vec<f64>>> {
        match self.inner.train_step(&mut self.replay_rng).map_err(err)? {
            TrainOutcome::Trained(stats) => Ok(Some(stats.losses)),
            TrainOutcome::Skipped(_) => Ok(None),
        }
    }

    fn sync_target(&mut self) {
        self.inner.sync_target();
    }
}

#[pyfunction]
fn goodness(values: Vec<f64>, kind: &str) -> PyResult<f64> {
    if values.is_empty() {
        return Err(PyValueError::new_err("goodness of an empty vector"));
    }
    let kind: GoodnessKind = kind.parse().map_err(PyValueError::new_err)?;
    Ok(cells::goodness(&values, kind))
}

#[pyfunction]
fn bang_bang_actions(k: usize) -> PyResult<Vec<Vec<f64>>> {
    envs::bang_bang_actions(k).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (step, total_steps = 4_000_000, start = 1.0, end = 0.01, exploration_fraction = 0.1))]
fn epsilon_at(step: u64, total_steps: u64, start: f64, end: f64, exploration_fraction: f64) -> f64 {
    EpsilonSchedule {
        start,
        end,
        exploration_fraction,
        total_steps,
    }
    .epsilon_at(step)
}

/// Mean and population std of uniformly random episode returns.
#[pyfunction]
fn random_policy_baseline(env: &str, episodes: usize, seed: u64) -> PyResult<(f64, f64)> {
    let mut e = EnvConfig::named(env).build().map_err(err)?;
    let s = envs::random_policy_baseline(e.as_mut(), episodes, seed).map_err(err)?;
    Ok((s.mean, s.std))
}

#[pyfunction]
#[pyo3(signature = (per_family = 20, seed = 0, scheme = "extrapolated"))]
fn gradient_suite<'py>(py: Python<'py>, per_family: usize, seed: u64, scheme: &str) -> PyResult<Bound<'py, PyAny>> {
    let s = self::scheme(scheme)?;
    let report = py.detach(|| harness::gradient_suite(per_family, seed, s)).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (per_family = 5, seed = 0, scheme = "extrapolated"))]
fn locality_suite<'py>(py: Python<'py>, per_family: usize, seed: u64, scheme: &str) -> PyResult<Bound<'py, PyAny>> {
    let s = self::scheme(scheme)?;
    let report = py.detach(|| harness::locality_suite(per_family, seed, s)).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn arq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyAgent>()?;
    m.add_function(wrap_pyfunction!(goodness, m)?)?;
    m.add_function(wrap_pyfunction!(bang_bang_actions, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_at, m)?)?;
    m.add_function(wrap_pyfunction!(random_policy_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_suite, m)?)?;
    m.add_function(wrap_pyfunction!(locality_suite, m)?)?;
    Ok(())
}
