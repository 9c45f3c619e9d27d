//! Python bindings for the reaction-diffusion laboratory.
//!
//! Exposes the grid, correlation kernels, the heat semigroup, projective
//! geometry, exponent estimators, the nonlinear flow and the experiment
//! runner. Build with `cargo build -p spde-lab-py --release`, rename the
//! produced `libspdelab.so` to `spdelab.so` on the Python path, and see
//! `python/smoke_test.py`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use spde_lab::experiments::config::{ExperimentConfig, ExperimentKind};
use spde_lab::experiments::{run_verified, schema_text};
use spde_lab::grid::{grid_reduce, heat_semigroup_apply, Field, GridDescriptor, Reduction};
use spde_lab::lyapunov::{sample_exponent, ExponentConfig};
use spde_lab::noise::{build_kernel, CorrelationKernel, KernelSpec};
use spde_lab::nonlinear::{evolve_nonlinear, Nonlinearity};
use spde_lab::projective::{hilbert_distance, project};
use spde_lab::rng::NoiseStream;
use spde_lab::LabError;
use std::path::PathBuf;

fn err(e: LabError) -> PyErr {
    match e {
        LabError::InvalidConfig(_) | LabError::UnknownExperiment(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Uniform grid on the unit torus T^d, d in {1, 2}.
#[pyclass(name = "Grid", frozen, from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: GridDescriptor,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (points_per_axis, dim = 1))]
    fn new(points_per_axis: usize, dim: u32) -> PyResult<Self> {
        Ok(PyGrid { inner: GridDescriptor::new(dim, points_per_axis).map_err(err)? })
    }

    #[getter]
    fn dim(&self) -> u32 {
        self.inner.dim
    }

    #[getter]
    fn points_per_axis(&self) -> usize {
        self.inner.points_per_axis
    }

    #[getter]
    fn cell_volume(&self) -> f64 {
        self.inner.cell_volume()
    }

    /// Flat coordinates of every grid point (x values in d = 1).
    fn coordinates(&self) -> Vec<f64> {
        (0..self.inner.total_points()).map(|i| self.inner.coords(i).0).collect()
    }

    fn __repr__(&self) -> String {
        format!("Grid(points_per_axis={}, dim={})", self.inner.points_per_axis, self.inner.dim)
    }
}

/// Spatial correlation kernel of the driving noise.
#[pyclass(name = "Kernel", frozen)]
struct PyKernel {
    inner: CorrelationKernel,
}

#[pymethods]
impl PyKernel {
    /// Space-independent noise of the given variance.
    #[staticmethod]
    fn constant(grid: &PyGrid, variance: f64) -> PyResult<Self> {
        Ok(PyKernel {
            inner: build_kernel(&KernelSpec::Constant { variance }, grid.inner).map_err(err)?,
        })
    }

    /// Wrapped-Gaussian kernel with kappa(x, x) = variance.
    #[staticmethod]
    #[pyo3(signature = (grid, length_scale, variance = 1.0))]
    fn gaussian_periodic(grid: &PyGrid, length_scale: f64, variance: f64) -> PyResult<Self> {
        Ok(PyKernel {
            inner: build_kernel(&KernelSpec::GaussianPeriodic { length_scale, variance }, grid.inner)
                .map_err(err)?,
        })
    }

    #[getter]
    fn sup_norm(&self) -> f64 {
        self.inner.sup_norm
    }

    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.inner.trace.values.clone()
    }

    /// kappa(x_i, x_j) by flat grid indices.
    fn at(&self, i: usize, j: usize) -> f64 {
        self.inner.kappa_at(i, j)
    }

    /// One sampled increment with covariance kappa*dt, reproducible in the
    /// (seed, stream, step) cell.
    fn sample_increment(&self, seed: u64, stream: u64, step: u64, dt: f64) -> PyResult<Vec<f64>> {
        let inc = self
            .inner
            .sample_increment(&NoiseStream::new(seed, stream), step, dt)
            .map_err(err)?;
        Ok(inc.values.values)
    }

    /// Q(pi) = double integral of pi pi kappa for unit-mass values.
    fn q_functional(&self, pi: Vec<f64>) -> f64 {
        self.inner.q_functional_values(&pi)
    }
}

/// Apply the exact spectral heat semigroup e^{t Laplace} to grid values.
#[pyfunction]
fn heat(grid: &PyGrid, values: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let field = Field::new(grid.inner, values).map_err(err)?;
    Ok(heat_semigroup_apply(&field, t).map_err(err)?.values)
}

/// Normalize a strictly positive field to unit L1 mass.
#[pyfunction(name = "project")]
fn project_py(grid: &PyGrid, values: Vec<f64>) -> PyResult<Vec<f64>> {
    let field = Field::new(grid.inner, values).map_err(err)?;
    Ok(project(&field).map_err(err)?.into_field().values)
}

/// Hilbert projective distance between two strictly positive fields.
#[pyfunction]
fn hilbert(grid: &PyGrid, p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let fp = project(&Field::new(grid.inner, p).map_err(err)?).map_err(err)?;
    let fq = project(&Field::new(grid.inner, q).map_err(err)?).map_err(err)?;
    Ok(hilbert_distance(&fp, &fq))
}

/// Min/mean/max/L1/sup reduction of grid values.
#[pyfunction]
fn reduce(grid: &PyGrid, values: Vec<f64>, kind: &str) -> PyResult<f64> {
    let field = Field::new(grid.inner, values).map_err(err)?;
    let kind = match kind {
        "l1" => Reduction::L1,
        "linf" => Reduction::LInf,
        "min" => Reduction::Min,
        "max" => Reduction::Max,
        "mean" => Reduction::Mean,
        other => return Err(PyValueError::new_err(format!("unknown reduction {other}"))),
    };
    Ok(grid_reduce(&field, kind))
}

/// Lyapunov exponent estimators (regression slope and FK route) for the
/// linear flow with drift gamma on the given kernel.
#[pyfunction]
#[pyo3(signature = (kernel, gamma, dt, horizon, burn_in, n_paths, seed, record_dt = 0.05))]
#[allow(clippy::too_many_arguments)]
fn lyapunov_exponent<'py>(
    py: Python<'py>,
    kernel: &PyKernel,
    gamma: f64,
    dt: f64,
    horizon: f64,
    burn_in: f64,
    n_paths: usize,
    seed: u64,
    record_dt: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExponentConfig {
        gamma,
        damping: 0.0,
        dt,
        horizon,
        burn_in,
        record_dt,
        n_paths,
        seed,
        w0: None,
    };
    let (est, _) = sample_exponent(&kernel.inner, &cfg).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("lambda_sample", est.lambda_sample)?;
    out.set_item("se_sample", est.se_sample)?;
    out.set_item("lambda_fk", est.lambda_fk)?;
    out.set_item("se_fk", est.se_fk)?;
    out.set_item("n_excluded", est.n_excluded)?;
    Ok(out)
}

/// Evolve the nonlinear flow and return (times, min_u series, blown_up).
#[pyfunction]
#[pyo3(signature = (kernel, u0, preset, dt, horizon, seed, stream = 0, gamma = 1.0, beta = 1.0, alpha = 1.2, record_every = 100))]
#[allow(clippy::too_many_arguments)]
fn nonlinear_min_u(
    kernel: &PyKernel,
    u0: Vec<f64>,
    preset: &str,
    dt: f64,
    horizon: f64,
    seed: u64,
    stream: u64,
    gamma: f64,
    beta: f64,
    alpha: f64,
    record_every: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, bool)> {
    let nl = match preset {
        "linear" => Nonlinearity::Linear { gamma },
        "logistic" => Nonlinearity::Logistic { gamma, beta },
        "shifted-allen-cahn" => Nonlinearity::ShiftedAllenCahn { alpha },
        other => return Err(PyValueError::new_err(format!("unknown preset {other}"))),
    };
    let grid = kernel.inner.grid;
    let field = Field::new(grid, u0).map_err(err)?;
    let traj = evolve_nonlinear(
        &field,
        nl,
        &kernel.inner,
        NoiseStream::new(seed, stream),
        dt,
        horizon,
        record_every,
    )
    .map_err(err)?;
    let mins = traj.fields.iter().map(|f| f.min()).collect();
    Ok((traj.times, mins, traj.blow_up.blown_up))
}

/// Run an experiment from TOML text; returns a manifest summary dict.
#[pyfunction]
#[pyo3(signature = (config_toml, out_dir, verify = false))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_toml: &str,
    out_dir: &str,
    verify: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(err)?;
    let manifest = run_verified(&cfg, &PathBuf::from(out_dir), verify).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("experiment", &manifest.experiment)?;
    out.set_item("seed", manifest.seed)?;
    out.set_item("config_hash", &manifest.config_hash)?;
    out.set_item("all_pass", manifest.all_pass())?;
    let artifacts: Vec<(String, String)> =
        manifest.artifacts.iter().map(|a| (a.name.clone(), a.sha256.clone())).collect();
    out.set_item("artifacts", artifacts)?;
    let verdicts: Vec<(String, bool, String)> = manifest
        .verdicts
        .iter()
        .map(|v| (v.check.clone(), v.pass, v.detail.clone()))
        .collect();
    out.set_item("verdicts", verdicts)?;
    Ok(out)
}

/// Names and descriptions of the experiment catalog.
#[pyfunction]
fn list_experiments() -> Vec<(String, String)> {
    ExperimentKind::all()
        .iter()
        .map(|k| (k.name().to_string(), k.describe().to_string()))
        .collect()
}

/// CSV schema of one experiment.
#[pyfunction]
fn schema(experiment: &str) -> PyResult<String> {
    Ok(schema_text(ExperimentKind::parse(experiment).map_err(err)?))
}

#[pymodule]
fn spdelab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyKernel>()?;
    m.add_function(wrap_pyfunction!(heat, m)?)?;
    m.add_function(wrap_pyfunction!(project_py, m)?)?;
    m.add_function(wrap_pyfunction!(hilbert, m)?)?;
    m.add_function(wrap_pyfunction!(reduce, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(nonlinear_min_u, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(list_experiments, m)?)?;
    m.add_function(wrap_pyfunction!(schema, m)?)?;
    Ok(())
}
