//! Python bindings: profiles, configuration, closed-loop simulation and the
//! leakage estimate.

use mdpc::io::{emit_outputs, generate_synthetic_profile, load_profile_csv, RunConfig};
use mdpc::model::{build_grid, BatterySpec};
use mdpc::sim::{evaluate, run_loadlevel, run_no_battery, run_simulation, SimConfig, SimTrace};
use mdpc::stats::{epsilon_from_rho, mutual_info_of_pairs};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Hourly consumer load (kWh per interval), optionally with generation.
#[pyclass(name = "LoadProfile", module = "mdpc_py", from_py_object)]
#[derive(Clone)]
struct PyLoadProfile {
    inner: mdpc::io::LoadProfile,
}

#[pymethods]
impl PyLoadProfile {
    #[new]
    #[pyo3(signature = (load, generation=None))]
    fn new(load: Vec<f64>, generation: Option<Vec<f64>>) -> PyResult<Self> {
        if load.iter().any(|&v| !(v >= 0.0)) {
            return Err(value_err("loads must be non-negative"));
        }
        if generation.as_ref().is_some_and(|g| g.len() != load.len()) {
            return Err(value_err("generation must match the load length"));
        }
        Ok(Self { inner: mdpc::io::LoadProfile::hourly(load, generation) })
    }

    /// Seeded synthetic household profile.
    #[staticmethod]
    fn synthetic(days: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: generate_synthetic_profile(days, seed).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_profile_csv(&path).map_err(value_err)? })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path).map_err(runtime_err)
    }

    #[getter]
    fn load(&self) -> Vec<f64> {
        self.inner.load.clone()
    }

    fn daily_totals(&self) -> Vec<f64> {
        self.inner.daily_totals()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("LoadProfile({} intervals, peak {:.3} kWh)", self.inner.len(), self.inner.max_load())
    }
}

/// Controller and plant settings. Unset values take the defaults
/// (T=12, M=120, 15×15 bins, ε=0.1, 6.4 kWh / 3.3 kW battery, α=0.96).
#[pyclass(name = "SimConfig", module = "mdpc_py", from_py_object)]
#[derive(Clone)]
struct PySimConfig {
    inner: SimConfig,
}

#[pymethods]
impl PySimConfig {
    #[new]
    #[pyo3(signature = (
        mu=0.0, horizon=12, past_len=120, x_bins=15, y_bins=15, epsilon=0.1, eval_epsilon=None,
        sigma=0.11, gamma=0.0, battery_kwh=6.4, battery_kw=3.3, efficiency=0.96,
        initial_soc=None, x_max=3.6, y_max=None, node_limit=200_000
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mu: f64,
        horizon: usize,
        past_len: usize,
        x_bins: usize,
        y_bins: usize,
        epsilon: f64,
        eval_epsilon: Option<f64>,
        sigma: f64,
        gamma: f64,
        battery_kwh: f64,
        battery_kw: f64,
        efficiency: f64,
        initial_soc: Option<f64>,
        x_max: f64,
        y_max: Option<f64>,
        node_limit: usize,
    ) -> PyResult<Self> {
        if !(mu >= 0.0 && epsilon > 0.0) {
            return Err(value_err("mu must be >= 0 and epsilon > 0"));
        }
        if x_bins < 2 || y_bins < 2 {
            return Err(value_err("at least two bins are needed per grid"));
        }
        let battery = BatterySpec::symmetric(battery_kwh, battery_kw, efficiency).map_err(value_err)?;
        let mut inner = SimConfig {
            mu,
            horizon,
            past_len,
            x_bins,
            y_bins,
            epsilon,
            eval_epsilon: eval_epsilon.unwrap_or(epsilon),
            sigma,
            gamma,
            initial_soc: initial_soc.unwrap_or(0.5 * battery_kwh),
            x_max,
            y_max: y_max.unwrap_or_else(|| mdpc::sim::default_y_max(x_max, &battery)),
            battery,
            ..SimConfig::default()
        };
        inner.solver.node_limit = node_limit;
        Ok(Self { inner })
    }

    /// Builds settings from TOML text, aligned with `profile`'s clock.
    #[staticmethod]
    fn from_toml(text: &str, profile: &PyLoadProfile) -> PyResult<Self> {
        let cfg = RunConfig::parse(text).map_err(value_err)?;
        Ok(Self { inner: cfg.to_sim_config(&profile.inner).map_err(value_err)? })
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[setter]
    fn set_mu(&mut self, mu: f64) -> PyResult<()> {
        if !(mu >= 0.0) {
            return Err(value_err("mu must be >= 0"));
        }
        self.inner.mu = mu;
        Ok(())
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    #[getter]
    fn y_max(&self) -> f64 {
        self.inner.y_max
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "SimConfig(mu={}, horizon={}, past_len={}, bins={}x{}, epsilon={})",
            c.mu, c.horizon, c.past_len, c.x_bins, c.y_bins, c.epsilon
        )
    }
}

/// Result of a closed-loop run.
#[pyclass(name = "Trace", module = "mdpc_py", from_py_object)]
#[derive(Clone)]
struct PyTrace {
    inner: SimTrace,
    config: SimConfig,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme.name()
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid_loads()
    }

    #[getter]
    fn load(&self) -> Vec<f64> {
        self.inner.rows.iter().map(|r| r.load).collect()
    }

    #[getter]
    fn action(&self) -> Vec<f64> {
        self.inner.rows.iter().map(|r| r.action).collect()
    }

    #[getter]
    fn soc(&self) -> Vec<f64> {
        self.inner.rows.iter().map(|r| r.soc).collect()
    }

    #[getter]
    fn solve_seconds(&self) -> Vec<f64> {
        self.inner.solve_times.iter().map(|d| d.as_secs_f64()).collect()
    }

    #[getter]
    fn cost_chf(&self) -> f64 {
        self.inner.total_cost_chf()
    }

    #[getter]
    fn energy_kwh(&self) -> f64 {
        self.inner.total_energy_kwh()
    }

    /// Cumulative and moving-window leakage, cost and energy.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = evaluate(&self.inner, &self.config).map_err(runtime_err)?;
        let d = PyDict::new(py);
        d.set_item("cumulative_mi_bits", report.cumulative_mi_bits)?;
        d.set_item("moving_mi_bits", report.moving_mi_bits)?;
        d.set_item("total_cost_chf", report.total_cost_chf)?;
        d.set_item("total_energy_kwh", report.total_energy_kwh)?;
        Ok(d)
    }

    /// Writes the trace, metrics and moving-window series as CSV.
    #[pyo3(signature = (out_dir, prefix=""))]
    fn write_csv(&self, out_dir: PathBuf, prefix: &str) -> PyResult<Vec<PathBuf>> {
        let report = evaluate(&self.inner, &self.config).map_err(runtime_err)?;
        emit_outputs(&self.inner, &report, &out_dir, prefix).map_err(runtime_err)
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace({}, {} steps, cost {:.4} CHF)",
            self.inner.scheme.name(),
            self.inner.rows.len(),
            self.inner.total_cost_chf()
        )
    }
}

/// Runs `scheme` ("mdpc", "loadlevel" or "nobattery") over the profile.
#[pyfunction]
#[pyo3(signature = (profile, config, scheme="mdpc"))]
fn simulate(py: Python<'_>, profile: &PyLoadProfile, config: &PySimConfig, scheme: &str) -> PyResult<PyTrace> {
    let (p, c) = (profile.inner.clone(), config.inner.clone());
    let trace = match scheme {
        "mdpc" => py.detach(|| run_simulation(&p, &c)).map_err(runtime_err)?,
        "loadlevel" => py.detach(|| run_loadlevel(&p, &c)).map_err(runtime_err)?,
        "nobattery" => run_no_battery(&p, &c.tariff, c.initial_soc),
        other => return Err(value_err(format!("unknown scheme {other:?}"))),
    };
    Ok(PyTrace { inner: trace, config: c })
}

/// Smoothed histogram estimate of I(X;Y) in bits for `(x, y)` pairs.
#[pyfunction]
#[pyo3(signature = (pairs, x_max=3.6, y_max=7.0, x_bins=15, y_bins=15, epsilon=0.1))]
fn mutual_info(pairs: Vec<(f64, f64)>, x_max: f64, y_max: f64, x_bins: usize, y_bins: usize, epsilon: f64) -> PyResult<f64> {
    let xg = build_grid(x_max, x_bins).map_err(value_err)?;
    let yg = build_grid(y_max, y_bins).map_err(value_err)?;
    mutual_info_of_pairs(&pairs, &xg, &yg, epsilon).map_err(value_err)
}

/// Smallest smoothing constant keeping log-derivatives below `rho`.
#[pyfunction]
#[pyo3(name = "epsilon_from_rho")]
fn py_epsilon_from_rho(window: usize, x_bins: usize, y_bins: usize, rho: f64) -> PyResult<f64> {
    epsilon_from_rho(window, x_bins, y_bins, rho).map_err(value_err)
}

/// Solver and estimator self-checks; returns `{name: passed}`.
#[pyfunction]
#[pyo3(signature = (cases=50, seed=1))]
fn verify<'py>(py: Python<'py>, cases: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let solver = py.detach(|| mdpc::verify::check_solver(cases, seed)).map_err(runtime_err)?;
    let estimator = mdpc::verify::check_estimator(cases, seed).map_err(runtime_err)?;
    let d = PyDict::new(py);
    for c in [solver, estimator] {
        d.set_item(c.name, c.passed())?;
    }
    Ok(d)
}

#[pymodule]
fn mdpc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLoadProfile>()?;
    m.add_class::<PySimConfig>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_info, m)?)?;
    m.add_function(wrap_pyfunction!(py_epsilon_from_rho, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
