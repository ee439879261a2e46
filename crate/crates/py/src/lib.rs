//! Python module `svi`.
//!
//! Vectors cross the boundary as flat lists of floats; reports and audits
//! come back as JSON text or plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use svi_core::bench::experiment::{compute_references, validate_config};
use svi_core::bench::{run_experiment, write_report, ExperimentConfig, ExperimentReport, ProblemSpec};
use svi_core::map::exact_mean;
use svi_core::problems::{bandwidth, cournot, quadratic, Instance};
use svi_core::smoothing::{smoothed_map_mc, SmoothingScheme};
use svi_core::stepsize::{self, SchemeParams, Variant};
use svi_core::{project_block, project_cartesian, BlockVector, DykstraConfig, Polyhedron, SetBlock, SviError};

fn err(e: SviError) -> PyErr {
    match e {
        SviError::Config(_) | SviError::InvalidParameter(_) | SviError::InvalidSet(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Experiment configuration, parsed and validated.
#[pyclass(name = "ExperimentConfig", module = "svi")]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml(text).map(PyConfig).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).map(PyConfig).map_err(err)
    }

    #[getter]
    fn runs(&self) -> usize {
        self.0.runs
    }

    #[setter]
    fn set_runs(&mut self, runs: usize) -> PyResult<()> {
        let mut c = self.0.clone();
        c.runs = runs;
        c.validate().map_err(err)?;
        self.0 = c;
        Ok(())
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    #[setter]
    fn set_iterations(&mut self, k: usize) {
        self.0.iterations = k;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn schemes(&self) -> Vec<String> {
        self.0.schemes.iter().map(|s| s.to_string()).collect()
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.0.output_dir.clone()
    }

    fn settings(&self) -> PyResult<Vec<String>> {
        Ok(self
            .0
            .problem
            .rows()
            .map_err(err)?
            .into_iter()
            .map(|r| r.label)
            .collect())
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.0)
    }

    /// Runs every cell; releases the GIL meanwhile.
    fn run(&self, py: Python<'_>) -> PyResult<Report> {
        let cfg = self.0.clone();
        py.detach(move || run_experiment(&cfg)).map(Report).map_err(err)
    }

    /// Constant audits as JSON, one entry per setting.
    fn validate(&self, py: Python<'_>) -> PyResult<String> {
        let cfg = self.0.clone();
        json(&py.detach(move || validate_config(&cfg)).map_err(err)?)
    }

    /// Reference solutions as JSON.
    fn references(&self, py: Python<'_>) -> PyResult<String> {
        let cfg = self.0.clone();
        json(&py.detach(move || compute_references(&cfg)).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        let kind = match self.0.problem {
            ProblemSpec::Bandwidth { .. } => "bandwidth",
            ProblemSpec::Cournot { .. } => "cournot",
            ProblemSpec::Quadratic { .. } => "quadratic",
        };
        format!(
            "ExperimentConfig({kind}, schemes={:?}, runs={}, K={})",
            self.schemes(),
            self.0.runs,
            self.0.iterations
        )
    }
}

/// Result of `ExperimentConfig.run`.
#[pyclass(module = "svi")]
struct Report(ExperimentReport);

#[pymethods]
impl Report {
    fn csv(&self) -> String {
        self.0.to_csv()
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.0)
    }

    /// Writes trajectories.csv and report.json; returns both paths.
    fn write(&self, dir: PathBuf) -> PyResult<(PathBuf, PathBuf)> {
        write_report(&self.0, &dir).map_err(err)
    }

    /// `(scheme, setting)` of every cell, in output order.
    fn cells(&self) -> Vec<(String, String)> {
        self.0
            .cells
            .iter()
            .map(|c| (c.scheme.to_string(), c.setting.clone()))
            .collect()
    }

    /// Recorded iterations and MSE curve of one cell.
    fn curve(&self, scheme: &str, setting: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let c = self
            .0
            .cell(scheme, setting)
            .ok_or_else(|| PyValueError::new_err(format!("no cell {scheme} / {setting}")))?;
        Ok((c.ks.clone(), c.mse.clone()))
    }

    fn final_mse(&self, scheme: &str, setting: &str) -> PyResult<f64> {
        Ok(self.curve(scheme, setting)?.1.last().copied().unwrap_or(f64::NAN))
    }
}

/// A benchmark problem: map, feasible set, start point and constants.
#[pyclass(name = "Instance", module = "svi")]
struct PyInstance(Instance);

impl PyInstance {
    fn vector(&self, x: Vec<f64>) -> PyResult<BlockVector> {
        BlockVector::from_flat(self.0.problem.layout(), x).map_err(err)
    }
}

fn table_row<T: Copy>(table: &[T], setting: usize) -> PyResult<T> {
    setting
        .checked_sub(1)
        .and_then(|i| table.get(i).copied())
        .ok_or_else(|| PyValueError::new_err(format!("setting must lie in 1..={}", table.len())))
}

#[pymethods]
impl PyInstance {
    /// Standard bandwidth setting `S{setting}` (1-based).
    #[staticmethod]
    #[pyo3(signature = (setting, eps=None))]
    fn bandwidth(setting: usize, eps: Option<f64>) -> PyResult<Self> {
        let s = table_row(&bandwidth::STANDARD_SETTINGS, setting)?;
        Ok(PyInstance(
            bandwidth::bandwidth_instance(s, None, eps).map_err(err)?.instance,
        ))
    }

    /// Standard Cournot setting `S{setting}` (1-based).
    #[staticmethod]
    fn cournot(setting: usize) -> PyResult<Self> {
        let s = table_row(&cournot::STANDARD_SETTINGS, setting)?;
        Ok(PyInstance(cournot::cournot_instance(s, None).map_err(err)?.instance))
    }

    #[staticmethod]
    #[pyo3(signature = (dims, half_width=0.0, eps=None, seed=0))]
    fn quadratic(dims: Vec<usize>, half_width: f64, eps: Option<f64>, seed: u64) -> PyResult<Self> {
        Ok(PyInstance(
            quadratic::quadratic_instance(&dims, half_width, eps, seed)
                .map_err(err)?
                .instance,
        ))
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.problem.dim()
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.0.x0.as_slice().to_vec()
    }

    #[getter]
    fn diameter(&self) -> f64 {
        self.0.diameter
    }

    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.0.constants;
        let d = PyDict::new(py);
        d.set_item("eta", c.eta)?;
        d.set_item("lip", c.lip)?;
        d.set_item("nu", c.nu)?;
        d.set_item("diameter", self.0.diameter)?;
        Ok(d)
    }

    /// Euclidean projection onto the feasible set.
    fn project(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let y = project_cartesian(&self.0.problem.set, &self.vector(x)?, &DykstraConfig::default()).map_err(err)?;
        Ok(y.as_slice().to_vec())
    }

    /// Closed-form mean map `F(x)`.
    fn mean_map(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = self.vector(x)?;
        Ok(exact_mean(self.0.problem.map.as_ref(), &x)
            .map_err(err)?
            .as_slice()
            .to_vec())
    }

    /// Monte Carlo estimate of the smoothed map with its standard errors.
    /// `kind` is `"msr"` or `"mcr"`.
    #[pyo3(signature = (x, kind, samples, seed=0))]
    fn smoothed_map(&self, x: Vec<f64>, kind: &str, samples: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let kind = match kind {
            "msr" | "MSR" => svi_core::smoothing::SmoothingKind::Msr,
            "mcr" | "MCR" => svi_core::smoothing::SmoothingKind::Mcr,
            other => return Err(PyValueError::new_err(format!("unknown smoothing {other:?}"))),
        };
        let scheme = self.0.smoothing(kind).map_err(err)?;
        let x = self.vector(x)?;
        let est = smoothed_map_mc(self.0.problem.map.as_ref(), &x, &scheme, samples, seed).map_err(err)?;
        Ok((est.mean.as_slice().to_vec(), est.std_err.as_slice().to_vec()))
    }

    fn __repr__(&self) -> String {
        format!("Instance({}, dim={})", self.0.name, self.0.problem.dim())
    }
}

/// Parameters of the stepsize recursions.
#[pyclass(name = "SchemeParams", module = "svi")]
struct PyParams(SchemeParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (eta, lip, nu, e0, beta=0.0))]
    fn new(eta: f64, lip: f64, nu: f64, e0: f64, beta: f64) -> Self {
        PyParams(SchemeParams::new(eta, lip, nu, e0).with_beta(beta))
    }

    /// Adds the distributed-scheme data: `c`, multipliers `r` and diameter.
    fn with_dasa(&self, c: f64, r: Vec<f64>, diameter: f64) -> Self {
        PyParams(self.0.clone().with_dasa(c, r, diameter))
    }

    /// Optimal centralized stepsizes gamma*_1..gamma*_k.
    fn asa(&self, k: usize) -> PyResult<Vec<f64>> {
        stepsize::asa_schedule(&self.0, k).map_err(err)
    }

    /// Stepsizes of agent `agent` under the distributed scheme.
    fn dasa(&self, agent: usize, k: usize) -> PyResult<Vec<f64>> {
        stepsize::dasa_schedule(&self.0, agent, k).map_err(err)
    }

    /// `(delta, Gamma)` bound sequences.
    fn bounds(&self, k: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        stepsize::bound_schedules(&self.0, k).map_err(err)
    }

    /// Error recursion e_0..e_K driven by `steps`.
    #[pyo3(signature = (steps, distributed=false))]
    fn errors(&self, steps: Vec<f64>, distributed: bool) -> Vec<f64> {
        let v = if distributed {
            Variant::Distributed
        } else {
            Variant::Centralized
        };
        stepsize::error_sequence(&self.0, &steps, v)
    }
}

/// Projection onto `{y : A y <= b}`, optionally intersected with `y >= 0`
/// and `y <= upper`.
#[pyfunction]
#[pyo3(signature = (x, rows, rhs, nonneg=false, upper=None, tol=1e-10, max_iters=100_000))]
fn project_polyhedron(
    x: Vec<f64>,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    nonneg: bool,
    upper: Option<Vec<f64>>,
    tol: f64,
    max_iters: usize,
) -> PyResult<Vec<f64>> {
    let mut p = Polyhedron::new(rows, rhs, x.len(), nonneg).map_err(err)?;
    if let Some(u) = upper {
        p = p.with_upper(u).map_err(err)?;
    }
    project_block(&SetBlock::Polyhedron(p), &x, &DykstraConfig { max_iters, tol }).map_err(err)
}

/// Monte Carlo smoothing of the one-dimensional piecewise-linear example.
#[pyfunction]
#[pyo3(signature = (x, eps, samples, seed=0, kind="mcr"))]
fn piecewise_smoothed(x: f64, eps: f64, samples: usize, seed: u64, kind: &str) -> PyResult<(f64, f64)> {
    let scheme = match kind {
        "msr" => SmoothingScheme::msr(vec![eps]),
        "mcr" => SmoothingScheme::mcr(vec![eps]),
        other => return Err(PyValueError::new_err(format!("unknown smoothing {other:?}"))),
    };
    let f = svi_core::problems::piecewise::PiecewiseLinear::example();
    let x = BlockVector::from_blocks(vec![vec![x]]);
    let est = smoothed_map_mc(&f, &x, &scheme, samples, seed).map_err(err)?;
    Ok((est.mean.as_slice()[0], est.std_err.as_slice()[0]))
}

#[pymodule]
fn svi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<Report>()?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(project_polyhedron, m)?)?;
    m.add_function(wrap_pyfunction!(piecewise_smoothed, m)?)?;
    Ok(())
}
