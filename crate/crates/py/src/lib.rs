//! Python module `mcot_py`: marginal laws, discretized problems, the
//! initializer, the Langevin solver, the 1D oracle and config-driven runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mcot::basis::TestBasis;
use mcot::config::ExperimentConfig;
use mcot::experiment::run_experiment;
use mcot::init::{initialize, InitMethod, InitParams};
use mcot::langevin::{run, LangevinParams, NoiseSchedule};
use mcot::model::{ConstrainedObjective, CostFunction, McotProblem, WeightFunction, WeightMode};
use mcot::oracle1d::build_map;
use mcot::{Error, MarginalLaw};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidLaw(_)
        | Error::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A marginal law, built from a preset name.
#[pyclass(name = "Law", frozen)]
struct PyLaw {
    inner: MarginalLaw,
    name: String,
}

#[pymethods]
impl PyLaw {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: MarginalLaw::preset(name).map_err(py_err)?,
            name: name.to_string(),
        })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    /// `n` points, flattened coordinate-major per point.
    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.inner.sample(n, seed)
    }

    fn __repr__(&self) -> String {
        format!("Law('{}')", self.name)
    }
}

/// `K` particles of `M` marginals under moment constraints.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: McotProblem,
    law: MarginalLaw,
}

fn weight_mode(mode: &str) -> PyResult<WeightMode> {
    match mode {
        "fixed" => Ok(WeightMode::Fixed),
        "squared" => Ok(WeightMode::Adaptive(WeightFunction::Squared)),
        "exponential" => Ok(WeightMode::Adaptive(WeightFunction::Exponential)),
        other => Err(PyValueError::new_err(format!(
            "unknown weight mode '{other}'"
        ))),
    }
}

impl PyProblem {
    fn check(&self, y: &[f64]) -> PyResult<()> {
        if y.len() != self.inner.dim() {
            return Err(py_err(Error::DimensionMismatch {
                expected: self.inner.dim(),
                got: y.len(),
            }));
        }
        Ok(())
    }
}

#[pymethods]
impl PyProblem {
    /// `basis` is `legendre`, `hyperbolic` or `meancov`; `n` is ignored for
    /// `meancov`.
    #[new]
    #[pyo3(signature = (law, m, k, n = None, basis = "legendre", epsilon = 0.1, mode = "fixed"))]
    fn new(
        law: &PyLaw,
        m: usize,
        k: usize,
        n: Option<usize>,
        basis: &str,
        epsilon: f64,
        mode: &str,
    ) -> PyResult<Self> {
        let l = &law.inner;
        let need_n = || n.ok_or_else(|| PyValueError::new_err(format!("basis '{basis}' needs n")));
        let b = match basis {
            "legendre" => TestBasis::legendre(l, need_n()?),
            "hyperbolic" => TestBasis::hyperbolic_cross(l, need_n()?, true),
            "meancov" => TestBasis::mean_covariance(l),
            other => return Err(PyValueError::new_err(format!("unknown basis '{other}'"))),
        }
        .map_err(py_err)?;
        let cost = CostFunction::new(epsilon).map_err(py_err)?;
        let inner = McotProblem::new(b, cost, k, m, weight_mode(mode)?).map_err(py_err)?;
        Ok(Self {
            inner,
            law: l.clone(),
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_constraints(&self) -> usize {
        self.inner.n_constraints()
    }

    fn cost(&self, y: Vec<f64>) -> PyResult<f64> {
        self.check(&y)?;
        Ok(self.inner.cost(&y))
    }

    fn gradient(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&y)?;
        let mut g = vec![0.0; y.len()];
        self.inner.cost_gradient(&y, &mut g).map_err(py_err)?;
        Ok(g)
    }

    fn constraints(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&y)?;
        Ok(self.inner.constraint_vec(&y))
    }

    fn weights(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&y)?;
        Ok(self.inner.weights(&y))
    }

    /// A feasible state: samples (optionally compressed by NNLS) flowed onto
    /// the constraint set.
    #[pyo3(signature = (seed, nnls = false))]
    fn initialize(&self, py: Python<'_>, seed: u64, nnls: bool) -> PyResult<Vec<f64>> {
        let params = InitParams {
            method: if nnls {
                InitMethod::NnlsThenRk3
            } else {
                InitMethod::Rk3
            },
            ..Default::default()
        };
        py.detach(|| initialize(&self.inner, &self.law, &params, seed))
            .map(|(y, _)| y)
            .map_err(py_err)
    }

    /// Runs the constrained Langevin iteration from a feasible `y0`.
    /// Returns a dict with `best_cost`, `best_state`, `final_state`,
    /// `accepted`, `rejected` and the accepted `costs`.
    #[pyo3(signature = (y0, n_max, seed, dt0 = 1e-4, beta0 = 0.0, sqrt_decay = false))]
    #[allow(clippy::too_many_arguments)]
    fn langevin<'py>(
        &self,
        py: Python<'py>,
        y0: Vec<f64>,
        n_max: usize,
        seed: u64,
        dt0: f64,
        beta0: f64,
        sqrt_decay: bool,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        self.check(&y0)?;
        let params = LangevinParams {
            dt0,
            beta0,
            n_max,
            seed,
            noise: if sqrt_decay {
                NoiseSchedule::SqrtDecay
            } else {
                NoiseSchedule::Constant
            },
            ..Default::default()
        };
        let log = py
            .detach(|| run(&self.inner, &y0, &params))
            .map_err(py_err)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("best_cost", log.best_cost)?;
        out.set_item("best_iteration", log.best_iteration)?;
        out.set_item("accepted", log.accepted)?;
        out.set_item("rejected", log.rejected)?;
        out.set_item(
            "costs",
            log.accepted_records().map(|r| r.cost).collect::<Vec<_>>(),
        )?;
        out.set_item("best_state", log.best_state)?;
        out.set_item("final_state", log.final_state)?;
        Ok(out)
    }
}

/// Exact optimal cost of the one-dimensional problem.
#[pyfunction]
fn oracle_cost(law: &PyLaw, m: usize, epsilon: f64) -> PyResult<f64> {
    build_map(&law.inner, m)
        .and_then(|t| t.optimal_cost(epsilon))
        .map_err(py_err)
}

/// Runs the experiment described by a config file; returns the summary as
/// a JSON string.
#[pyfunction]
#[pyo3(signature = (config, output_root = None, seed = None))]
fn run_config(
    py: Python<'_>,
    config: PathBuf,
    output_root: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut cfg = ExperimentConfig::load(&config).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    let root = output_root.unwrap_or_else(mcot::config::output_root);
    let summary = py
        .detach(|| run_experiment(&cfg, &root))
        .map_err(|e| PyRuntimeError::new_err(format!("{e} (exit code {})", e.exit_code())))?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn mcot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyLaw>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(oracle_cost, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
