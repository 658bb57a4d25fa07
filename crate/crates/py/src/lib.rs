//! Python bindings for the cart-pole batch RL toolkit: the simulator, batch
//! generation, the learned world model, policies and the classical tooling.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cpbrl::classical::{self, CriticalPoint};
use cpbrl::config::{stage_seed, ExperimentConfig, Stage};
use cpbrl::dynamics::{self, Batch, CartPole, State};
use cpbrl::neural::TrainConfig;
use cpbrl::policies::{self, LinearPolicy, Policy};
use cpbrl::surrogate::{self, WorldModel};
use cpbrl::synthesis;

fn err(e: cpbrl::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "State")]
#[derive(Clone)]
struct PyState {
    inner: State,
}

#[pymethods]
impl PyState {
    #[new]
    #[pyo3(signature = (theta, theta_dot, rho, rho_dot, failed = false))]
    fn new(theta: f64, theta_dot: f64, rho: f64, rho_dot: f64, failed: bool) -> Self {
        let mut inner = State::new(theta, theta_dot, rho, rho_dot);
        inner.failed = failed;
        Self { inner }
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    #[getter]
    fn theta_dot(&self) -> f64 {
        self.inner.theta_dot
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }

    #[getter]
    fn rho_dot(&self) -> f64 {
        self.inner.rho_dot
    }

    #[getter]
    fn failed(&self) -> bool {
        self.inner.failed
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64) {
        let x = self.inner.as_array();
        (x[0], x[1], x[2], x[3])
    }

    fn __repr__(&self) -> String {
        format!(
            "State(theta={}, theta_dot={}, rho={}, rho_dot={}, failed={})",
            self.inner.theta,
            self.inner.theta_dot,
            self.inner.rho,
            self.inner.rho_dot,
            if self.inner.failed { "True" } else { "False" }
        )
    }
}

#[pyclass(name = "Policy")]
#[derive(Clone)]
struct PyPolicy {
    inner: Policy,
}

#[pymethods]
impl PyPolicy {
    /// Linear state feedback from four gains.
    #[staticmethod]
    fn linear(gains: [f64; 4]) -> Self {
        Self {
            inner: Policy::Linear(LinearPolicy::new(gains)),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: policies::parse(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        policies::serialize(&self.inner)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }

    /// Stateless single-step evaluation. PID policies keep error history
    /// inside one rollout only; use `CartPole.run_episode` for those.
    fn act(&self, s: &PyState) -> f64 {
        let mut ctrl = self.inner.controller();
        ctrl.act(&s.inner)
    }
}

#[pyclass(name = "CartPole")]
struct PyCartPole {
    inner: CartPole,
}

#[pymethods]
impl PyCartPole {
    #[new]
    fn new() -> Self {
        Self {
            inner: CartPole::default(),
        }
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.params.dt
    }

    fn step(&self, s: &PyState, force: f64) -> PyResult<PyState> {
        let next = dynamics::step(
            &self.inner.params,
            &s.inner,
            dynamics::Action(force),
            self.inner.params.dt,
        )
        .map_err(err)?;
        Ok(PyState { inner: next })
    }

    fn reward(&self, s: &PyState) -> PyResult<f64> {
        dynamics::reward(&self.inner.params, &s.inner).map_err(err)
    }

    /// Roll the policy out for `steps` steps; returns (state, action, reward)
    /// triples where the state is the successor of each step.
    fn run_episode(
        &self,
        policy: &PyPolicy,
        s0: &PyState,
        steps: usize,
    ) -> PyResult<Vec<(PyState, f64, f64)>> {
        let mut ctrl = policy.inner.controller();
        let traj = dynamics::run_episode(&self.inner, &mut *ctrl, s0.inner, steps).map_err(err)?;
        Ok(traj
            .into_iter()
            .map(|t| (PyState { inner: t.s_next }, t.a.0, t.r))
            .collect())
    }

    /// Negated average discounted return over the shared 100-state test set.
    #[pyo3(signature = (policy, horizon = 100, gamma = 0.97))]
    fn penalty(&self, policy: &PyPolicy, horizon: usize, gamma: f64) -> PyResult<f64> {
        let states = surrogate::default_test_states();
        surrogate::penalty(&self.inner, &policy.inner, &states, horizon, gamma).map_err(err)
    }
}

#[pyclass(name = "Batch")]
struct PyBatch {
    inner: Batch,
}

#[pymethods]
impl PyBatch {
    /// Random-exploration transition batch from the true dynamics.
    #[staticmethod]
    fn generate(n: usize, seed: u64) -> PyResult<Self> {
        let cp = CartPole::default();
        Ok(Self {
            inner: dynamics::gen_batch(&cp, n, seed).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.transitions.len()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Transition at index i as ((s), a, (s_next), r).
    fn transition(&self, i: usize) -> PyResult<(PyState, f64, PyState, f64)> {
        let t = self
            .inner
            .transitions
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("index {i} out of range")))?;
        Ok((
            PyState { inner: t.s },
            t.a.0,
            PyState { inner: t.s_next },
            t.r,
        ))
    }
}

#[pyclass(name = "WorldModel")]
struct PyWorldModel {
    inner: WorldModel,
}

#[pymethods]
impl PyWorldModel {
    /// Train the neural surrogate on a batch. Returns the model plus the
    /// holdout statistics (per-variable delta rmse, reward accuracy).
    #[staticmethod]
    #[pyo3(signature = (batch, epochs = 200, seed = 0))]
    fn fit(batch: &PyBatch, epochs: usize, seed: u64) -> PyResult<(Self, Vec<f64>, f64)> {
        let cfg = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let (model, stats) = surrogate::fit(&batch.inner, &cfg).map_err(err)?;
        Ok((
            Self { inner: model },
            stats.delta_rmse.to_vec(),
            stats.reward_accuracy,
        ))
    }

    fn predict(&self, s: &PyState, force: f64) -> PyResult<(PyState, f64)> {
        let (next, r) = self.inner.predict(&s.inner, force).map_err(err)?;
        Ok((PyState { inner: next }, r))
    }

    #[pyo3(signature = (policy, horizon = 100, gamma = 0.97))]
    fn penalty(&self, policy: &PyPolicy, horizon: usize, gamma: f64) -> PyResult<f64> {
        let states = surrogate::default_test_states();
        surrogate::penalty(&self.inner, &policy.inner, &states, horizon, gamma).map_err(err)
    }
}

/// Solve the discrete algebraic Riccati equation by fixed-point iteration.
/// Matrices are nested lists; returns (P, K).
#[pyfunction]
fn solve_dare(
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let to_mat = |m: &Vec<Vec<f64>>, name: &str| -> PyResult<DMatrix<f64>> {
        let rows = m.len();
        let cols = m.first().map(|r| r.len()).unwrap_or(0);
        if rows == 0 || cols == 0 || m.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err(format!("{name} must be a non-empty rectangular matrix")));
        }
        Ok(DMatrix::from_fn(rows, cols, |i, j| m[i][j]))
    };
    let (u, v, q, r) = (
        to_mat(&u, "u")?,
        to_mat(&v, "v")?,
        to_mat(&q, "q")?,
        to_mat(&r, "r")?,
    );
    let (p, k) = classical::solve_dare(&u, &v, &q, &r).map_err(err)?;
    let from_mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    Ok((from_mat(&p), from_mat(&k)))
}

/// Ziegler-Nichols PID gains from the critical point of the closed loop.
#[pyfunction]
fn zn_gains(k_c: f64, p_c: f64) -> (f64, f64, f64) {
    classical::zn_gains(&CriticalPoint { k_c, p_c })
}

/// LQR policy identified from a transition batch; returns the four gains.
#[pyfunction]
fn synthesize_lqr(batch: &PyBatch) -> PyResult<PyPolicy> {
    let cfg = ExperimentConfig::default();
    let report = synthesis::synth_lqr(&batch.inner, &cfg).map_err(err)?;
    Ok(PyPolicy {
        inner: Policy::Linear(report.policy),
    })
}

/// The shared deterministic 100-state evaluation set.
#[pyfunction]
fn default_test_states() -> Vec<PyState> {
    surrogate::default_test_states()
        .into_iter()
        .map(|inner| PyState { inner })
        .collect()
}

/// Derived stream seed of a pipeline stage ("data", "model", or a method
/// name with a run index).
#[pyfunction]
#[pyo3(signature = (master, stage, run = 0))]
fn seed_for(master: u64, stage: &str, run: u64) -> PyResult<u64> {
    let s = match stage {
        "data" => Stage::Data,
        "model" => Stage::Model,
        name => {
            let known = synthesis::Method::from_name(name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown stage {name:?}")))?;
            Stage::Method(known.name(), run)
        }
    };
    Ok(stage_seed(master, s))
}

#[pymodule]
fn cpbrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyState>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyCartPole>()?;
    m.add_class::<PyBatch>()?;
    m.add_class::<PyWorldModel>()?;
    m.add_function(wrap_pyfunction!(solve_dare, m)?)?;
    m.add_function(wrap_pyfunction!(zn_gains, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_lqr, m)?)?;
    m.add_function(wrap_pyfunction!(default_test_states, m)?)?;
    m.add_function(wrap_pyfunction!(seed_for, m)?)?;
    Ok(())
}
