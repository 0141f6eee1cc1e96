//! Python bindings for the retention-flow recommender and simulator.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use flow::config::RunConfig;
use flow::driver::{self, EvalPolicy, SanityConfig};
use flow::env::{Session, World};
use flow::metrics::Metrics;
use flow::policy;
use flow::rng::{stream, SimRng, ACTOR_BASE};
use flow::tabular::TabularTrainConfig;
use flow::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("return_time", m.return_time)?;
    d.set_item("retention", m.retention)?;
    d.set_item("click_rate", m.click_rate)?;
    d.set_item("long_view_rate", m.long_view_rate)?;
    d.set_item("like_rate", m.like_rate)?;
    Ok(d)
}

/// Run configuration built from `key = value` text over the defaults.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        RunConfig::parse_str(text)
            .map(|inner| PyRunConfig { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(Some(&path))
            .map(|inner| PyRunConfig { inner })
            .map_err(py_err)
    }

    /// Returns a copy with `key` set to `value`.
    fn with_value(&self, key: &str, value: &str) -> PyResult<Self> {
        let mut text: String = self
            .inner
            .resolved()
            .lines()
            .filter(|l| l.split('=').next().map(str::trim) != Some(key))
            .map(|l| format!("{l}\n"))
            .collect();
        text.push_str(&format!("{key} = {value}\n"));
        Self::new(&text)
    }

    fn resolved(&self) -> String {
        self.inner.resolved()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.run.seed
    }

    #[getter]
    fn out(&self) -> String {
        self.inner.run.out.clone()
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.inner.run.policy.tag()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.train.steps
    }

    #[getter]
    fn slate_size(&self) -> usize {
        self.inner.env.slate_size
    }

    #[getter]
    fn d_action(&self) -> usize {
        self.inner.model.d_action
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(policy={}, seed={}, steps={})",
            self.inner.run.policy.tag(),
            self.inner.run.seed,
            self.inner.train.steps
        )
    }
}

/// The user simulator with one open session at a time.
#[pyclass(name = "World")]
struct PyWorld {
    world: World,
    session: Option<Session>,
    rng: SimRng,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (config, seed = None))]
    fn new(config: &PyRunConfig, seed: Option<u64>) -> PyResult<Self> {
        let seed = seed.unwrap_or(config.inner.run.seed);
        let world = World::new(config.inner.effective_env(), seed).map_err(py_err)?;
        Ok(PyWorld {
            world,
            session: None,
            rng: stream(seed, ACTOR_BASE),
        })
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.world.num_users()
    }

    #[getter]
    fn slate_size(&self) -> usize {
        self.world.config().slate_size
    }

    fn items(&self) -> Vec<Vec<f64>> {
        self.world.items().to_vec()
    }

    fn user_latent(&self, user: usize) -> PyResult<Vec<f64>> {
        self.world.user_latent(user).map(<[f64]>::to_vec).map_err(py_err)
    }

    /// Opens a session for `user`; returns the user's feature vector.
    fn reset(&mut self, user: usize) -> PyResult<Vec<f64>> {
        let (session, request) = self.world.reset_session(user).map_err(py_err)?;
        self.session = Some(session);
        Ok(request.features.0)
    }

    /// Shows `slate` and returns `(feedback, reward, left_session)`.
    fn step(&mut self, slate: Vec<usize>) -> PyResult<(Vec<f64>, f64, bool)> {
        let session = self
            .session
            .as_mut()
            .ok_or_else(|| PyValueError::new_err("no open session; call reset first"))?;
        let out = self.world.step(session, &slate, &mut self.rng).map_err(py_err)?;
        Ok((out.feedback, out.reward, out.left_session))
    }

    /// Closes the open session; returns `(return_day, retention)`.
    fn end_session(&mut self) -> PyResult<(usize, f64)> {
        let session = self
            .session
            .take()
            .ok_or_else(|| PyValueError::new_err("no open session"))?;
        let out = self.world.end_session(&session, &mut self.rng).map_err(py_err)?;
        Ok((out.day, out.retention))
    }
}

/// A frozen policy loaded from a checkpoint (`random` needs none).
#[pyclass(name = "Policy")]
struct PyPolicy {
    config: RunConfig,
    inner: EvalPolicy,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (config, checkpoint = None))]
    fn new(config: &PyRunConfig, checkpoint: Option<PathBuf>) -> PyResult<Self> {
        let inner = driver::load_policy(&config.inner, checkpoint.as_deref()).map_err(py_err)?;
        Ok(PyPolicy {
            config: config.inner.clone(),
            inner,
        })
    }

    /// Metrics over `episodes` sessions on a fresh simulator.
    fn evaluate<'py>(&self, py: Python<'py>, episodes: usize) -> PyResult<Bound<'py, PyDict>> {
        let (m, _) = driver::evaluate_policy(&self.config, &self.inner, episodes).map_err(py_err)?;
        metrics_dict(py, &m)
    }
}

/// Trains the configured policy; returns episodes, losses and final metrics.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &PyRunConfig) -> PyResult<Bound<'py, PyDict>> {
    let o = driver::run_train(&config.inner).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("out_dir", o.out_dir.display().to_string())?;
    d.set_item("episodes", o.episodes)?;
    d.set_item("losses", o.losses)?;
    d.set_item("metrics", metrics_dict(py, &o.final_metrics)?)?;
    d.set_item("seconds", o.seconds)?;
    Ok(d)
}

/// Evaluates a checkpoint and writes the evaluation files under `run.out`.
#[pyfunction]
#[pyo3(signature = (config, checkpoint, episodes))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    checkpoint: Option<PathBuf>,
    episodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let m = driver::run_eval(&config.inner, checkpoint.as_deref(), episodes).map_err(py_err)?;
    metrics_dict(py, &m)
}

/// Returns `(max_relative_error, worst_tensor, passed)`.
#[pyfunction]
#[pyo3(signature = (config, eps = 1e-3, tol = 1e-4))]
fn gradcheck(config: &PyRunConfig, eps: f64, tol: f64) -> PyResult<(f64, Option<String>, bool)> {
    let r = driver::run_gradcheck(&config.inner, eps, tol).map_err(py_err)?;
    Ok((r.max_rel_error, r.worst, r.passed))
}

/// Returns `(tv, passed)` for a tabular model on a log-uniform reward tree.
#[pyfunction]
#[pyo3(signature = (depth = 3, branching = 3, seed = 7, threshold = 0.05, steps = None))]
fn sanity(depth: usize, branching: usize, seed: u64, threshold: f64, steps: Option<usize>) -> PyResult<(f64, bool)> {
    let mut train = TabularTrainConfig::default();
    if let Some(s) = steps {
        train.steps = s;
    }
    let r = driver::run_sanity(&SanityConfig {
        depth,
        branching,
        seed,
        threshold,
        train,
    })
    .map_err(py_err)?;
    Ok((r.tv, r.passed))
}

/// Fits `(rate, ω, c)` per behavior from `logs` and writes config lines to `out`.
#[pyfunction]
fn calibrate(logs: PathBuf, out: PathBuf) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let fits = driver::run_calibrate(&logs, &out).map_err(py_err)?;
    Ok(fits.into_iter().map(|f| (f.name, f.rate, f.omega, f.bias)).collect())
}

/// `R · exp(α Σ r)`.
#[pyfunction]
fn reward_integrate(retention: f64, rewards: Vec<f64>, alpha: f64) -> f64 {
    policy::reward_integrate(retention, &rewards, alpha)
}

/// Top-`k` item ids by score `⟨action, item⟩`, best first.
#[pyfunction]
fn action_to_slate(action: Vec<f64>, items: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<usize>> {
    policy::action_to_slate(&action, &items, k).map_err(py_err)
}

#[pymodule]
fn retention_flow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(sanity, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(reward_integrate, m)?)?;
    m.add_function(wrap_pyfunction!(action_to_slate, m)?)?;
    Ok(())
}
