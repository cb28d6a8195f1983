use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mbr_core::harness::config::ExperimentConfig;
use mbr_core::harness::report;
use mbr_core::potential::{self as pot, Loss};
use mbr_core::quadrature::QuadratureGrid;
use mbr_core::replica::{self, SolveOptions};
use mbr_core::simulate::{self as sim, RunSettings, SamplerConfig, SamplerKind, XStarMode};
use mbr_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn grid(nodes: usize) -> PyResult<QuadratureGrid> {
    QuadratureGrid::new(nodes, nodes).map_err(to_py)
}

#[pyclass(name = "Potential", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyPotential(pot::Potential);

#[pymethods]
impl PyPotential {
    /// `u(s) = -s^2 / (2 delta)`.
    #[staticmethod]
    fn quadratic(delta: f64) -> PyResult<Self> {
        pot::Potential::quadratic(delta).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn pseudo_huber(scale: f64) -> PyResult<Self> {
        pot::Potential::pseudo_huber(scale).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn zero() -> Self {
        Self(pot::Potential::Zero)
    }

    /// `(u, u', u'')` at `s`.
    fn eval(&self, s: f64) -> PyResult<(f64, f64, f64)> {
        let v = self.0.eval(s).map_err(to_py)?;
        Ok((v.u, v.du, v.d2u))
    }

    #[pyo3(signature = (half_width = 10.0, points = 2001))]
    fn check_growth<'py>(&self, py: Python<'py>, half_width: f64, points: usize) -> PyResult<Bound<'py, PyDict>> {
        let r = pot::check_growth(&self.0, half_width, points).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("ok", r.ok())?;
        d.set_item("d", r.d)?;
        d.set_item("growth_ratio", r.growth_ratio)?;
        d.set_item("max_abs_d2u", r.max_abs_d2u)?;
        d.set_item("positive_violations", r.positive_violations)?;
        d.set_item("convexity_violations", r.convexity_violations)?;
        Ok(d)
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn is_gaussian(&self) -> bool {
        self.0.is_gaussian()
    }

    fn __repr__(&self) -> String {
        format!("Potential({})", serde_json::to_string(&self.0).unwrap_or_default())
    }
}

#[pyclass(name = "ModelParams", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyModelParams(replica::ModelParams);

#[pymethods]
impl PyModelParams {
    /// Give `gamma` for a regression model (`h = 2 kappa sqrt(gamma)`) or `h`
    /// for a bare field.
    #[new]
    #[pyo3(signature = (alpha, delta_star, kappa, potential, gamma = None, h = None))]
    fn new(alpha: f64, delta_star: f64, kappa: f64, potential: &PyPotential, gamma: Option<f64>, h: Option<f64>) -> PyResult<Self> {
        let p = match (gamma, h) {
            (Some(g), None) => replica::ModelParams::regression(alpha, delta_star, kappa, g, potential.0),
            (None, Some(h)) => replica::ModelParams::with_field(alpha, delta_star, kappa, h, potential.0),
            _ => return Err(PyValueError::new_err("give exactly one of gamma or h")),
        };
        p.map(Self).map_err(to_py)
    }

    /// Inverse-temperature reparametrization of a quadratic model.
    fn with_beta(&self, beta: f64) -> PyResult<Self> {
        replica::beta_reparametrize(&self.0, beta).map(Self).map_err(to_py)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn delta_star(&self) -> f64 {
        self.0.delta_star
    }
    #[getter]
    fn kappa(&self) -> f64 {
        self.0.kappa
    }
    #[getter]
    fn h(&self) -> f64 {
        self.0.h
    }
    #[getter]
    fn gamma(&self) -> Option<f64> {
        self.0.gamma
    }
    #[getter]
    fn potential(&self) -> PyPotential {
        PyPotential(self.0.potential)
    }

    fn __repr__(&self) -> String {
        format!("ModelParams({})", serde_json::to_string(&self.0).unwrap_or_default())
    }
}

#[pyclass(name = "OverlapState", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyOverlapState(replica::OverlapState);

#[pymethods]
impl PyOverlapState {
    #[new]
    fn new(q: f64, rho: f64, r: f64, rbar: f64) -> Self {
        Self(replica::OverlapState { q, rho, r, rbar })
    }
    #[getter]
    fn q(&self) -> f64 {
        self.0.q
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho
    }
    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }
    #[getter]
    fn rbar(&self) -> f64 {
        self.0.rbar
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64) {
        (self.0.q, self.0.rho, self.0.r, self.0.rbar)
    }

    fn __repr__(&self) -> String {
        let s = self.0;
        format!("OverlapState(q={}, rho={}, r={}, rbar={})", s.q, s.rho, s.r, s.rbar)
    }
}

#[pyclass(name = "SolveReport", frozen)]
struct PySolveReport(replica::SolveReport);

#[pymethods]
impl PySolveReport {
    #[getter]
    fn state(&self) -> PyOverlapState {
        PyOverlapState(self.0.state)
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }
    #[getter]
    fn residual(&self) -> f64 {
        self.0.residual
    }
    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }
    #[getter]
    fn multistart_spread(&self) -> f64 {
        self.0.multistart_spread
    }
    #[getter]
    fn clamp_events(&self) -> usize {
        self.0.clamp_events
    }
    #[getter]
    fn uniqueness_warning(&self) -> bool {
        self.0.uniqueness_warning
    }

    fn __repr__(&self) -> String {
        format!("SolveReport({})", serde_json::to_string(&self.0).unwrap_or_default())
    }
}

#[pyfunction]
#[pyo3(signature = (params, damping = 0.5, tol = 1e-10, max_iter = 10_000, n_starts = 4, nodes = 80))]
fn solve_fixed_point(
    py: Python<'_>,
    params: &PyModelParams,
    damping: f64,
    tol: f64,
    max_iter: usize,
    n_starts: usize,
    nodes: usize,
) -> PyResult<PySolveReport> {
    let g = grid(nodes)?;
    let opts = SolveOptions { damping, tol, max_iter, init: None, n_starts };
    let p = params.0;
    py.detach(|| replica::solve_fixed_point(&p, &g, &opts)).map(PySolveReport).map_err(to_py)
}

#[pyfunction]
fn closed_form_quadratic(params: &PyModelParams) -> PyResult<PyOverlapState> {
    replica::closed_form_quadratic(&params.0).map(PyOverlapState).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (params, q, rho, nodes = 80))]
fn free_energy_f(params: &PyModelParams, q: f64, rho: f64, nodes: usize) -> PyResult<f64> {
    replica::free_energy_f(&params.0, q, rho, &grid(nodes)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (params, state, nodes = 80))]
fn free_energy_fbar(params: &PyModelParams, state: &PyOverlapState, nodes: usize) -> PyResult<f64> {
    replica::free_energy_fbar(&params.0, &state.0, &grid(nodes)?).map_err(to_py)
}

/// `(mse_per_n, free_energy, state)` limits of the regression problem.
#[pyfunction]
#[pyo3(signature = (params, nodes = 80))]
fn predict_regression(params: &PyModelParams, nodes: usize) -> PyResult<(f64, f64, PyOverlapState)> {
    let pred = replica::predict_regression(&params.0, &grid(nodes)?, &SolveOptions::default()).map_err(to_py)?;
    Ok((pred.mse_per_n, pred.free_energy, PyOverlapState(pred.state)))
}

/// `(f0, state0)` at the start of the interpolation path.
#[pyfunction]
fn reference_endpoints(params: &PyModelParams) -> (f64, PyOverlapState) {
    let e = replica::reference_endpoints(&params.0);
    (e.f0, PyOverlapState(e.state0))
}

fn x_star_mode(name: &str) -> PyResult<XStarMode> {
    serde_json::from_value(serde_json::Value::String(name.into())).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Exact Gaussian posterior of one simulated instance.
#[pyfunction]
#[pyo3(signature = (params, n, seed, x_star_mode = "deterministic_norm"))]
fn exact_posterior<'py>(py: Python<'py>, params: &PyModelParams, n: usize, seed: u64, x_star_mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let mode = self::x_star_mode(x_star_mode)?;
    let p = params.0;
    let (inst, summary) = py
        .detach(|| -> mbr_core::Result<_> {
            let inst = sim::generate_instance(&p, n, seed, mode)?;
            let summary = sim::exact_posterior(&inst, &p.potential, p.kappa)?;
            Ok((inst, summary))
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("x_hat", summary.x_hat.as_slice().to_vec())?;
    d.set_item("x_star", inst.x_star.as_slice().to_vec())?;
    d.set_item("mse_per_n", summary.mse_per_n)?;
    d.set_item("free_energy", summary.free_energy)?;
    Ok(d)
}

/// Measurements on one seed; `sampler` is `"exact_gaussian"` or `"mala"`.
#[pyfunction]
#[pyo3(signature = (params, n, seed, sampler = "exact_gaussian", x_star_mode = "deterministic_norm", samples = 20_000, burn_in = 5_000, n_replicas = 2))]
#[allow(clippy::too_many_arguments)]
fn run_seed<'py>(
    py: Python<'py>,
    params: &PyModelParams,
    n: usize,
    seed: u64,
    sampler: &str,
    x_star_mode: &str,
    samples: usize,
    burn_in: usize,
    n_replicas: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let kind: SamplerKind = serde_json::from_value(serde_json::Value::String(sampler.into()))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let settings = RunSettings {
        n,
        mode: self::x_star_mode(x_star_mode)?,
        sampler: SamplerConfig { kind, samples, burn_in, ..Default::default() },
        n_replicas,
    };
    let p = params.0;
    let r = py.detach(|| sim::run_seed(&p, &settings, seed)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("seed", r.seed)?;
    d.set_item("mse_per_n", r.mse_per_n)?;
    d.set_item("free_energy", r.free_energy)?;
    d.set_item("acceptance_rate", r.acceptance_rate)?;
    let o = r.overlaps;
    for (name, m) in [("r11", o.r11), ("r12", o.r12), ("q11", o.q11), ("q12", o.q12)] {
        d.set_item(name, (m.mean, m.se))?;
    }
    Ok(d)
}

/// Runs a full comparison from a JSON configuration; returns the report as JSON.
#[pyfunction]
fn compare(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let rep = py.detach(|| report::comparison(&cfg, true)).map_err(to_py)?;
    serde_json::to_string(&rep).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn mbr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPotential>()?;
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyOverlapState>()?;
    m.add_class::<PySolveReport>()?;
    m.add_function(wrap_pyfunction!(solve_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(free_energy_f, m)?)?;
    m.add_function(wrap_pyfunction!(free_energy_fbar, m)?)?;
    m.add_function(wrap_pyfunction!(predict_regression, m)?)?;
    m.add_function(wrap_pyfunction!(reference_endpoints, m)?)?;
    m.add_function(wrap_pyfunction!(exact_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(run_seed, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
