//! Python bindings. Configs and study results cross the boundary as TOML
//! strings and plain dicts so the schemas match the command-line tool.

use kervar_core::concentration;
use kervar_core::dynamics::{self, TrainingSet, Trajectory, VarModel};
use kervar_core::experiments::{self, ConcentrationStudyConfig, GapStudyConfig, MercerStudyConfig, RateStudyConfig};
use kervar_core::kernels::{self, KernelSpec, MultivariateKernelSpec};
use kervar_core::krr;
use kervar_core::mercer;
use kervar_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Unsupported(_) | Error::Io(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn from_toml<T: DeserializeOwned>(text: &str) -> PyResult<T> {
    toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A scalar kernel on ℝ^input_dim.
#[pyclass(name = "Kernel", frozen, from_py_object)]
#[derive(Clone)]
struct PyKernel(KernelSpec);

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn gaussian(tau2: f64, input_dim: usize) -> PyResult<Self> {
        KernelSpec::gaussian(tau2, input_dim).map(PyKernel).map_err(py_err)
    }

    #[staticmethod]
    fn polynomial(c: f64, m: u32, input_dim: usize) -> PyResult<Self> {
        KernelSpec::polynomial(c, m, input_dim).map(PyKernel).map_err(py_err)
    }

    #[staticmethod]
    fn mercer_sigmoid(b: f64, c: f64, input_dim: usize) -> PyResult<Self> {
        KernelSpec::mercer_sigmoid(b, c, input_dim).map(PyKernel).map_err(py_err)
    }

    #[staticmethod]
    fn periodic_sobolev(sigma2: f64, s: u32) -> PyResult<Self> {
        KernelSpec::periodic_sobolev(sigma2, s).map(PyKernel).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn eval(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.0.eval(&x, &y).map_err(py_err)
    }

    fn gram(&self, windows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let g = kernels::gram_matrix(&self.0, &windows).map_err(py_err)?;
        let m = g.entries();
        Ok((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }

    /// sup of √K(x, x) over ‖x‖ ≤ radius.
    fn kappa(&self, radius: f64) -> PyResult<f64> {
        self.0.kappa_bound(radius).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

fn multivariate(kernels: Vec<PyKernel>) -> PyResult<MultivariateKernelSpec> {
    MultivariateKernelSpec::new(kernels.into_iter().map(|k| k.0).collect()).map_err(py_err)
}

/// Mercer eigen-system of a kernel.
#[pyclass(name = "MercerExpansion", frozen)]
struct PyMercer(mercer::MercerExpansion);

#[pymethods]
impl PyMercer {
    #[new]
    fn new(kernel: PyKernel) -> Self {
        PyMercer(mercer::MercerExpansion::new(kernel.0))
    }

    /// Highest level of a finite-rank kernel, else None.
    #[getter]
    fn max_level(&self) -> Option<u32> {
        self.0.max_level()
    }

    fn eigenvalue(&self, k: u32) -> f64 {
        self.0.eigenvalue(k)
    }

    fn truncated_eval(&self, x: Vec<f64>, y: Vec<f64>, m: u32) -> PyResult<f64> {
        self.0.truncated_eval(&x, &y, m).map_err(py_err)
    }

    fn feature_map(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.feature_map(&x).map_err(py_err)
    }
}

/// A nonlinear VAR(p), built from the same TOML table as the `[model]`
/// section of a config.
#[pyclass(name = "VarModel", frozen)]
struct PyVarModel(VarModel);

#[pymethods]
impl PyVarModel {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let model: VarModel = from_toml(text)?;
        model.validate().map_err(py_err)?;
        Ok(PyVarModel(model))
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p
    }

    /// T recorded states after `burn_in` discarded ones.
    #[pyo3(signature = (t, seed, burn_in = dynamics::DEFAULT_BURN_IN))]
    fn simulate(&self, t: usize, seed: u64, burn_in: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(dynamics::simulate_var(&self.0, t, burn_in, seed).map_err(py_err)?.values().to_vec())
    }

    /// n states of a stationary run, thinned by `gap`.
    #[pyo3(signature = (n, gap, seed, burn_in = dynamics::DEFAULT_BURN_IN))]
    fn stationary_sample(&self, n: usize, gap: usize, seed: u64, burn_in: usize) -> PyResult<Vec<Vec<f64>>> {
        dynamics::stationary_sample(&self.0, n, gap, burn_in, seed).map_err(py_err)
    }

    fn regression(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        if y.len() != self.0.d * self.0.p {
            return Err(py_err(Error::DimensionMismatch { expected: self.0.d * self.0.p, got: y.len() }));
        }
        Ok(self.0.g.eval(&y, self.0.d))
    }
}

/// Lag windows (x_{t−1}, …, x_{t−p}) and targets x_t of a trajectory.
#[pyfunction]
fn lag_embed(trajectory: Vec<Vec<f64>>, p: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let traj = Trajectory::new(trajectory, None).map_err(py_err)?;
    let set = dynamics::lag_embed(&traj, p).map_err(py_err)?;
    Ok((set.windows().to_vec(), set.targets().to_vec()))
}

/// A fitted kernel ridge estimator.
#[pyclass(name = "FittedModel", frozen)]
struct PyFitted(krr::FittedModel);

#[pymethods]
impl PyFitted {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        krr::FittedModel::from_json(text).map(PyFitted).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.0.lambda()
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p()
    }

    #[getter]
    fn alpha(&self) -> Vec<Vec<f64>> {
        self.0.alpha().to_vec()
    }

    fn predict(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.predict(&z).map_err(py_err)
    }

    fn predict_many(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.0.predict_many(&points).map_err(py_err)
    }

    fn rkhs_norm_sq(&self) -> PyResult<f64> {
        self.0.rkhs_norm_sq().map_err(py_err)
    }
}

/// Fits one kernel per output dimension; `lambda_` is scaled by T inside.
#[pyfunction]
#[pyo3(signature = (kernels, windows, targets, p, lambda_))]
fn fit(
    kernels: Vec<PyKernel>,
    windows: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    p: usize,
    lambda_: f64,
) -> PyResult<PyFitted> {
    let kernel = multivariate(kernels)?;
    let set = TrainingSet::new(windows, targets, p).map_err(py_err)?;
    krr::fit(&kernel, &set, lambda_).map(PyFitted).map_err(py_err)
}

/// (1/T²) Σ_i ε_i'K_i ε_i, with eps[i] the noise of output dimension i.
#[pyfunction]
fn quadratic_form(kernels: Vec<PyKernel>, windows: Vec<Vec<f64>>, eps: Vec<Vec<f64>>) -> PyResult<f64> {
    let kernel = multivariate(kernels)?;
    Ok(concentration::quadratic_form(&kernel, &windows, &eps).map_err(py_err)?.value)
}

#[pyfunction]
fn rate_study(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg: RateStudyConfig = from_toml(config)?;
    let res = py.detach(|| experiments::rate_study(&cfg)).map_err(py_err)?;
    to_py(py, &res)
}

#[pyfunction]
fn concentration_study(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg: ConcentrationStudyConfig = from_toml(config)?;
    let res = py.detach(|| experiments::concentration_study(&cfg)).map_err(py_err)?;
    to_py(py, &res)
}

#[pyfunction]
fn glambda_study(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg: GapStudyConfig = from_toml(config)?;
    let res = py.detach(|| experiments::run_gap_study(&cfg)).map_err(py_err)?;
    to_py(py, &res)
}

#[pyfunction]
fn mercer_study(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg: MercerStudyConfig = from_toml(config)?;
    let res = py.detach(|| experiments::mercer_study(&cfg)).map_err(py_err)?;
    to_py(py, &res)
}

#[pymodule]
fn kervar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyMercer>()?;
    m.add_class::<PyVarModel>()?;
    m.add_class::<PyFitted>()?;
    m.add_function(wrap_pyfunction!(lag_embed, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(quadratic_form, m)?)?;
    m.add_function(wrap_pyfunction!(rate_study, m)?)?;
    m.add_function(wrap_pyfunction!(concentration_study, m)?)?;
    m.add_function(wrap_pyfunction!(glambda_study, m)?)?;
    m.add_function(wrap_pyfunction!(mercer_study, m)?)?;
    Ok(())
}
