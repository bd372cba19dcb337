//! Python bindings. Reports cross the boundary as plain dicts and lists.

// triggered inside the pyfunction macro expansion
#![allow(clippy::useless_conversion)]

use mlmc_greeks::mlmc::{self, MlmcConfig};
use mlmc_greeks::{
    oracle, Error, GridKind, MarketParams as CoreMarket, Method, MethodSpec as CoreSpec, Output, PayoffKind, SplitRule,
};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(m) => PyOSError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_python(py: Python<'_>, value: &impl Serialize) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import_bound("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "MarketParams", module = "mlmc_greeks")]
#[derive(Clone, Copy)]
struct PyMarket {
    inner: CoreMarket,
}

#[pymethods]
impl PyMarket {
    #[new]
    #[pyo3(signature = (s0=100.0, k=100.0, r=0.05, sigma=0.2, t=1.0, barrier=None))]
    fn new(s0: f64, k: f64, r: f64, sigma: f64, t: f64, barrier: Option<f64>) -> PyResult<Self> {
        let inner = CoreMarket {
            s0,
            k,
            r,
            sigma,
            t,
            barrier,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyMarket { inner })
    }

    #[getter]
    fn s0(&self) -> f64 {
        self.inner.s0
    }

    #[getter]
    fn k(&self) -> f64 {
        self.inner.k
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn t(&self) -> f64 {
        self.inner.t
    }

    #[getter]
    fn barrier(&self) -> Option<f64> {
        self.inner.barrier
    }

    fn discount(&self) -> f64 {
        self.inner.discount()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "MarketParams(s0={}, k={}, r={}, sigma={}, t={}, barrier={:?})",
            p.s0, p.k, p.r, p.sigma, p.t, p.barrier
        )
    }
}

/// Estimator choice. `d` is a split count or "auto"; `grid` is "uniform" or
/// "power" (gamma then defaults to the value derived from the barrier).
#[pyclass(name = "MethodSpec", module = "mlmc_greeks")]
#[derive(Clone, Copy)]
struct PySpec {
    inner: CoreSpec,
}

#[pymethods]
impl PySpec {
    #[new]
    #[pyo3(signature = (method, payoff, d=None, h_star=None, grid="uniform", gamma=None, market=None))]
    fn new(
        method: &str,
        payoff: &str,
        d: Option<&Bound<'_, PyAny>>,
        h_star: Option<f64>,
        grid: &str,
        gamma: Option<f64>,
        market: Option<PyMarket>,
    ) -> PyResult<Self> {
        let method: Method = method.parse().map_err(to_py)?;
        let payoff: PayoffKind = payoff.parse().map_err(to_py)?;
        let mut spec = CoreSpec::new(method, payoff);
        if let Some(d) = d {
            spec = spec.with_split(if let Ok(n) = d.extract::<usize>() {
                SplitRule::Fixed(n)
            } else if d.extract::<String>().is_ok_and(|s| s == "auto") {
                SplitRule::Adaptive { c: 10.0 }
            } else {
                return Err(PyValueError::new_err("d must be a positive integer or 'auto'"));
            });
        }
        if let Some(h) = h_star {
            spec = spec.with_h_star(h);
        }
        spec = match grid {
            "uniform" => spec,
            "power" => {
                let gamma = match (gamma, market.and_then(|m| m.inner.barrier.map(|b| (m.inner, b)))) {
                    (Some(g), _) => g,
                    (None, Some((m, b))) => mlmc_greeks::sde::gamma_for_barrier(m.s0, b, m.sigma).map_err(to_py)?,
                    (None, None) => {
                        return Err(PyValueError::new_err(
                            "power grid needs gamma or a market with a barrier",
                        ))
                    }
                };
                spec.with_grid(GridKind::Power { gamma })
            }
            other => return Err(PyValueError::new_err(format!("unknown grid '{other}'"))),
        };
        Ok(PySpec { inner: spec })
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn payoff(&self) -> String {
        self.inner.payoff.to_string()
    }

    fn __repr__(&self) -> String {
        format!("MethodSpec({:?})", self.inner)
    }
}

fn reference(py: Python<'_>, r: mlmc_greeks::Result<oracle::Reference>) -> PyResult<PyObject> {
    let r = r.map_err(to_py)?;
    let d = PyDict::new_bound(py);
    d.set_item("value", r.value)?;
    d.set_item("delta", r.delta)?;
    d.set_item("vega", r.vega)?;
    Ok(d.into_any().unbind())
}

/// Black–Scholes price, delta and vega of the European call.
#[pyfunction]
fn bs_call(py: Python<'_>, market: PyMarket) -> PyResult<PyObject> {
    reference(py, oracle::bs_call(&market.inner))
}

/// Black–Scholes price, delta and vega of the cash-or-nothing digital call.
#[pyfunction]
fn bs_digital(py: Python<'_>, market: PyMarket) -> PyResult<PyObject> {
    reference(py, oracle::bs_digital(&market.inner))
}

/// Per-level statistics of the correction for levels lo..=hi.
#[pyfunction]
#[pyo3(signature = (spec, market, lo, hi, samples, seed=1))]
fn collect_levels(
    py: Python<'_>,
    spec: PySpec,
    market: PyMarket,
    lo: u32,
    hi: u32,
    samples: u64,
    seed: u64,
) -> PyResult<PyObject> {
    let levels = py
        .allow_threads(|| mlmc::collect_levels(&spec.inner, &market.inner, lo..=hi, samples, seed))
        .map_err(to_py)?;
    to_python(py, &levels)
}

/// Variance decay rates (value, delta, vega) fitted over levels lo..=hi.
#[pyfunction]
#[pyo3(signature = (spec, market, lo, hi, samples, seed=1))]
fn variance_rates(
    py: Python<'_>,
    spec: PySpec,
    market: PyMarket,
    lo: u32,
    hi: u32,
    samples: u64,
    seed: u64,
) -> PyResult<(f64, f64, f64)> {
    let levels = py
        .allow_threads(|| mlmc::collect_levels(&spec.inner, &market.inner, lo..=hi, samples, seed))
        .map_err(to_py)?;
    let fit = |o| {
        mlmc::fit_rate(&levels, o, lo.max(1)..=hi)
            .map(|f| f.beta)
            .map_err(to_py)
    };
    Ok((fit(Output::Value)?, fit(Output::Delta)?, fit(Output::Vega)?))
}

/// Adaptive MLMC to RMS accuracy `eps`; returns the full report.
#[pyfunction]
#[pyo3(signature = (spec, market, eps, seed=1, pilot_samples=10_000, max_level=12))]
fn run_mlmc(
    py: Python<'_>,
    spec: PySpec,
    market: PyMarket,
    eps: f64,
    seed: u64,
    pilot_samples: u64,
    max_level: u32,
) -> PyResult<PyObject> {
    let cfg = MlmcConfig {
        pilot_samples,
        max_level,
        ..MlmcConfig::default()
    };
    let report = py
        .allow_threads(|| mlmc::run_mlmc_with(&spec.inner, &market.inner, eps, seed, &cfg))
        .map_err(to_py)?;
    to_python(py, &report)
}

#[pymodule]
#[pyo3(name = "mlmc_greeks")]
fn mlmc_greeks_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarket>()?;
    m.add_class::<PySpec>()?;
    m.add_function(wrap_pyfunction!(bs_call, m)?)?;
    m.add_function(wrap_pyfunction!(bs_digital, m)?)?;
    m.add_function(wrap_pyfunction!(collect_levels, m)?)?;
    m.add_function(wrap_pyfunction!(variance_rates, m)?)?;
    m.add_function(wrap_pyfunction!(run_mlmc, m)?)?;
    Ok(())
}
