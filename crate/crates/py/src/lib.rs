use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use vqaa_core::evolve::{self, Schedule};
use vqaa_core::hamiltonian::{self, ModelParams};
use vqaa_core::spectroscopy::{gap_profile_estimate, uniform_grid, SpectroscopyConfig, SpectroscopyMethod};
use vqaa_core::statevector::DenseBackend;
use vqaa_core::vqaa::{BlackboxConfig, ObjectiveMode, OptimizationTrace, OptimizerKind, ProfileConfig};
use vqaa_core::{inference, noise, overlap, spectroscopy, vqaa as core_vqaa, Error};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// ZZXZ chain couplings.
#[pyclass(name = "ModelParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (n, J=3.0, h=1.0, g=1.0))]
    #[allow(non_snake_case)]
    fn new(n: usize, J: f64, h: f64, g: f64) -> PyResult<Self> {
        Ok(Self {
            inner: ModelParams::new(n, J, h, g).map_err(py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.num_sites
    }

    #[getter(J)]
    fn coupling(&self) -> f64 {
        self.inner.coupling_j
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.field_h
    }

    #[getter]
    fn g(&self) -> f64 {
        self.inner.field_g
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("ModelParams(n={}, J={}, h={}, g={})", p.num_sites, p.coupling_j, p.field_h, p.field_g)
    }
}

/// Chunked annealing schedule.
#[pyclass(name = "Schedule", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySchedule {
    inner: Schedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    fn new(lengths: Vec<f64>, times: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: Schedule::new(&lengths, &times).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn naive(num_chunks: usize, total_time: f64) -> PyResult<Self> {
        Ok(Self {
            inner: evolve::naive_schedule(num_chunks, total_time).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Schedule::from_json(text).map_err(py_err)?,
        })
    }

    #[getter]
    fn lengths(&self) -> Vec<f64> {
        self.inner.chunk_lengths()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.chunk_times()
    }

    #[getter]
    fn total_time(&self) -> f64 {
        self.inner.total_time()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Schedule(lengths={:?}, times={:?})", self.inner.chunk_lengths(), self.inner.chunk_times())
    }
}

/// Result of a schedule optimization.
#[pyclass(name = "Trace", frozen)]
struct PyTrace {
    inner: OptimizationTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn best(&self) -> PySchedule {
        PySchedule { inner: self.inner.best.clone() }
    }

    #[getter]
    fn best_objective(&self) -> f64 {
        self.inner.best_objective
    }

    #[getter]
    fn baseline_objective(&self) -> f64 {
        self.inner.baseline_objective
    }

    #[getter]
    fn final_fidelity(&self) -> Option<f64> {
        self.inner.final_fidelity
    }

    #[getter]
    fn evaluations(&self) -> usize {
        self.inner.evaluations()
    }

    #[getter]
    fn degraded(&self) -> bool {
        self.inner.degraded()
    }

    /// Per-chunk `(s, theta, time, tests, certified)` of a profile run.
    #[getter]
    fn profile(&self) -> Vec<(f64, f64, f64, usize, bool)> {
        self.inner.profile.iter().map(|c| (c.s, c.theta, c.time, c.tests, c.certified)).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }
}

/// Exact `(s, ground_energy, gap)` along the path for small chains.
#[pyfunction]
fn gap_profile(params: &PyModelParams, grid: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
    let pts = hamiltonian::gap_profile(&params.inner, &grid).map_err(py_err)?;
    Ok(pts.iter().map(|p| (p.s, p.ground_energy, p.gap)).collect())
}

/// Exact overlap of the evolved state with the final ground state.
#[pyfunction]
fn schedule_fidelity(params: &PyModelParams, schedule: &PySchedule) -> PyResult<f64> {
    core_vqaa::schedule_fidelity(&DenseBackend, &params.inner, &schedule.inner).map_err(py_err)
}

/// Required times on a uniform grid and the position of the deepest
/// feature of `-dT/ds`.
#[pyfunction]
#[pyo3(signature = (params, target=0.7, points=25, method="forward_backward"))]
fn run_spectroscopy(params: &PyModelParams, target: f64, points: usize, method: &str) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let method: SpectroscopyMethod = method.parse().map_err(py_err)?;
    let cfg = SpectroscopyConfig::new(params.inner, target, method);
    let curve = spectroscopy::run_spectroscopy(&DenseBackend, &cfg, &uniform_grid(points)).map_err(py_err)?;
    let est = gap_profile_estimate(&curve).map_err(py_err)?;
    Ok((curve.grid, curve.times, est.argmin_s))
}

#[pyfunction]
#[pyo3(signature = (params, num_chunks, total_time, optimizer="nelder_mead", budget=300, shots=None, seed=0))]
fn run_blackbox(
    params: &PyModelParams,
    num_chunks: usize,
    total_time: f64,
    optimizer: &str,
    budget: usize,
    shots: Option<usize>,
    seed: u64,
) -> PyResult<PyTrace> {
    let optimizer: OptimizerKind = optimizer.parse().map_err(py_err)?;
    let mut cfg = BlackboxConfig::new(params.inner, num_chunks, total_time, optimizer, budget);
    if shots.is_some() {
        cfg.mode = ObjectiveMode::Experiment {
            shots,
            tau_count: 32,
            delta_estimate: 1.0,
        };
    }
    cfg.seed = seed;
    Ok(PyTrace {
        inner: core_vqaa::run_blackbox_vqaa(&DenseBackend, &cfg).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (params, num_chunks, theta=0.99, t_cap=20.0, seed=0))]
fn run_profile(params: &PyModelParams, num_chunks: usize, theta: f64, t_cap: f64, seed: u64) -> PyResult<PyTrace> {
    let mut cfg = ProfileConfig::new(params.inner, num_chunks, theta, t_cap);
    cfg.seed = seed;
    Ok(PyTrace {
        inner: core_vqaa::run_profile_vqaa(&DenseBackend, &cfg).map_err(py_err)?,
    })
}

#[pyfunction]
fn ground_population_bound(e2: f64) -> PyResult<f64> {
    overlap::ground_population_bound(e2).map_err(py_err)
}

#[pyfunction]
fn e2_threshold(theta: f64) -> PyResult<f64> {
    overlap::e2_threshold(theta).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (epsilon, eta, range=2.0))]
fn hoeffding_samples(epsilon: f64, eta: f64, range: f64) -> PyResult<usize> {
    inference::hoeffding_samples(epsilon, eta, range).map_err(py_err)
}

#[pyfunction]
fn lz_transition_probability(delta_rate: f64, g: f64, t: f64) -> PyResult<f64> {
    spectroscopy::lz_transition_probability(delta_rate, g, t).map_err(py_err)
}

/// Noise events per trajectory without simulating the state.
#[pyfunction]
#[pyo3(signature = (n, schedule, p, trajectories=1000, seed=0))]
fn dry_run_event_counts(n: usize, schedule: &PySchedule, p: f64, trajectories: usize, seed: u64) -> PyResult<Vec<usize>> {
    noise::dry_run_event_counts(n, &schedule.inner, p, trajectories, seed).map_err(py_err)
}

#[pymodule]
fn vqaa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(gap_profile, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(run_spectroscopy, m)?)?;
    m.add_function(wrap_pyfunction!(run_blackbox, m)?)?;
    m.add_function(wrap_pyfunction!(run_profile, m)?)?;
    m.add_function(wrap_pyfunction!(ground_population_bound, m)?)?;
    m.add_function(wrap_pyfunction!(e2_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(hoeffding_samples, m)?)?;
    m.add_function(wrap_pyfunction!(lz_transition_probability, m)?)?;
    m.add_function(wrap_pyfunction!(dry_run_event_counts, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
