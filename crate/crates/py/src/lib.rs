use ldp_rr_core as core;
use ldp_rr_core::{
    BCoefficient, Distribution, EmpiricalType, Error, Estimator, FDivergenceSpec, LossMetric,
    Metric,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::ConvergenceFailure(_) | Error::TrialFailed { .. } | Error::RetriesExhausted(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn dist(p: Vec<f64>) -> PyResult<Distribution> {
    Distribution::new(p).py()
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().py()
}

/// Row-stochastic privatization channel.
#[pyclass(name = "Mechanism", module = "ldp_rr", frozen)]
struct PyMechanism {
    inner: core::Mechanism,
}

#[pymethods]
impl PyMechanism {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: core::Mechanism::from_rows(&rows).py()?,
        })
    }

    #[staticmethod]
    fn step(k: usize, eps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core::step_mechanism(k, eps).py()?,
        })
    }

    #[staticmethod]
    fn circulant(first_row: Vec<f64>) -> PyResult<Self> {
        let spec = core::CirculantSpec::new(dist(first_row)?);
        Ok(Self {
            inner: core::circulant_mechanism(&spec).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (k, eps, seed=0))]
    fn random(k: usize, eps: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: core::random_eps_private(k, eps, seed).py()?,
        })
    }

    #[staticmethod]
    fn identity(k: usize) -> PyResult<Self> {
        Ok(Self {
            inner: core::Mechanism::identity(k).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::Mechanism::from_json(text).py()?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// `inf` when some entry is zero.
    #[getter]
    fn epsilon(&self) -> f64 {
        core::epsilon_of(&self.inner)
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        self.inner.rows()
    }

    fn phi(&self) -> f64 {
        core::phi_matrix(&self.inner).phi
    }

    fn is_eps_private(&self, eps: f64) -> bool {
        core::is_eps_private(&self.inner, eps)
    }

    /// Output distribution `pW`.
    fn push(&self, p: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(core::pushforward(&dist(p)?, &self.inner).py()?.into_vec())
    }

    /// `q W^{-1}`; may leave the simplex.
    fn pull(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(core::pullback(&q, &self.inner).py()?.as_slice().to_vec())
    }

    fn then(&self, other: &PyMechanism) -> PyResult<Self> {
        Ok(Self {
            inner: core::compose(&self.inner, &other.inner).py()?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Mechanism(k={}, epsilon={})",
            self.inner.k(),
            core::epsilon_of(&self.inner)
        )
    }
}

/// `sum_k p_k f(q_k / p_k)` for a built-in generator.
#[pyfunction]
#[pyo3(signature = (p, q, name="kl"))]
fn f_divergence(p: Vec<f64>, q: Vec<f64>, name: &str) -> PyResult<f64> {
    let spec = FDivergenceSpec::builtin(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown divergence `{name}`")))?;
    core::f_divergence(&spec, &dist(p)?, &dist(q)?).py()
}

#[pyfunction]
fn tv_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    core::tv_distance(&p, &q).py()
}

#[pyfunction]
fn mse_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    core::mse_distance(&p, &q).py()
}

#[pyfunction]
fn project_simplex(v: Vec<f64>) -> Vec<f64> {
    core::project_simplex_euclidean(&v).into_vec()
}

/// Normalized loss of `w` at source `p`: `"kl"`/`"fdiv"`, `"mse"` or `"tv"`.
#[pyfunction]
fn alpha(metric: &str, p: Vec<f64>, w: &PyMechanism) -> PyResult<f64> {
    core::alpha(parse(metric)?, &dist(p)?, &w.inner).py()
}

/// Leading coefficients of the expected loss. For f-divergences returns a dict
/// with `first_order`, `second_order`, `a`, `b`, `c`; for mse and tv a float.
#[pyfunction]
#[pyo3(signature = (metric, p, w))]
fn expansion<'py>(
    py: Python<'py>,
    metric: &str,
    p: Vec<f64>,
    w: &PyMechanism,
) -> PyResult<Bound<'py, PyAny>> {
    let p = dist(p)?;
    match metric {
        "mse" => Ok(core::expansion_mse(&p, &w.inner)
            .py()?
            .into_pyobject(py)?
            .into_any()),
        "tv" => Ok(core::expansion_tv(&p, &w.inner)
            .py()?
            .into_pyobject(py)?
            .into_any()),
        name => {
            let spec = FDivergenceSpec::builtin(name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown metric `{name}`")))?;
            let r = core::expansion_fdiv(&p, &w.inner, &spec, BCoefficient::FirstMomentDenominator)
                .py()?;
            let d = PyDict::new(py);
            d.set_item("first_order", r.first_order)?;
            d.set_item("second_order", r.second_order)?;
            d.set_item("a", r.a)?;
            d.set_item("b", r.b)?;
            d.set_item("c", r.c)?;
            Ok(d.into_any())
        }
    }
}

#[pyfunction]
fn phi_star(k: usize, eps: f64) -> PyResult<f64> {
    core::phi_star(k, eps).py()
}

#[pyfunction]
fn phi_lower_bound(k: usize, eps: f64) -> PyResult<f64> {
    core::phi_lower_bound(k, eps).py()
}

#[pyfunction]
fn alpha_upper_uniform(k: usize, eps: f64) -> PyResult<f64> {
    core::alpha_upper_uniform(k, eps).py()
}

#[pyfunction]
fn feasibility_lower(metric: &str, p: Vec<f64>, eps: f64) -> PyResult<f64> {
    core::feasibility_lower(parse::<Metric>(metric)?, &dist(p)?, eps).py()
}

#[pyfunction]
fn minmax_lower(metric: &str, k: usize, eps: f64, p0: f64) -> PyResult<f64> {
    core::minmax_lower(parse::<Metric>(metric)?, k, eps, p0).py()
}

/// `t W^{-1}` for output counts `counts`.
#[pyfunction]
fn raw_estimate(counts: Vec<u64>, w: &PyMechanism) -> PyResult<Vec<f64>> {
    let t = EmpiricalType::from_counts(counts).py()?;
    Ok(core::raw_estimate(&t, &w.inner).py()?.as_slice().to_vec())
}

/// Projected estimate: `"ml"`, `"mmse"` or `"raw-clipped"`.
#[pyfunction]
#[pyo3(signature = (counts, w, estimator="ml"))]
fn estimate(counts: Vec<u64>, w: &PyMechanism, estimator: &str) -> PyResult<Vec<f64>> {
    let t = EmpiricalType::from_counts(counts).py()?;
    let est: Estimator = parse(estimator)?;
    Ok(est.apply(&t, &w.inner).py()?.into_vec())
}

#[pyfunction]
fn boundary_exponent(p: Vec<f64>, w: &PyMechanism) -> PyResult<f64> {
    core::boundary_exponent(&dist(p)?, &w.inner).py()
}

/// Mean loss over `trials` seeded trials; returns `(mean, std_error)`.
#[pyfunction]
#[pyo3(signature = (p, w, n, metric="kl", estimator="ml", trials=10_000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo_loss(
    py: Python<'_>,
    p: Vec<f64>,
    w: &PyMechanism,
    n: u64,
    metric: &str,
    estimator: &str,
    trials: u64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let p = dist(p)?;
    let metric: LossMetric = parse(metric)?;
    let est: Estimator = parse(estimator)?;
    let w = w.inner.clone();
    let r = py
        .detach(move || core::monte_carlo_loss(&p, &w, n, metric, est, trials, seed))
        .py()?;
    Ok((r.mean, r.std_error))
}

/// Fraction of trials whose raw estimate leaves the simplex, with its std error.
#[pyfunction]
#[pyo3(signature = (p, w, n, trials=100_000, seed=0))]
fn escape_probability(
    py: Python<'_>,
    p: Vec<f64>,
    w: &PyMechanism,
    n: u64,
    trials: u64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let p = dist(p)?;
    let w = w.inner.clone();
    py.detach(move || core::escape_probability(&p, &w, n, trials, seed))
        .py()
}

#[pymodule]
fn ldp_rr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", core::VERSION)?;
    m.add_class::<PyMechanism>()?;
    m.add_function(wrap_pyfunction!(f_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(mse_distance, m)?)?;
    m.add_function(wrap_pyfunction!(project_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(alpha, m)?)?;
    m.add_function(wrap_pyfunction!(expansion, m)?)?;
    m.add_function(wrap_pyfunction!(phi_star, m)?)?;
    m.add_function(wrap_pyfunction!(phi_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_upper_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(feasibility_lower, m)?)?;
    m.add_function(wrap_pyfunction!(minmax_lower, m)?)?;
    m.add_function(wrap_pyfunction!(raw_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(escape_probability, m)?)?;
    Ok(())
}
