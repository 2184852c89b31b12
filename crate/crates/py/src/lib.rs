//! Python bindings: `import efpmm_py`.

use std::collections::HashMap;
use std::sync::Arc;

use efpmm::filter::calibrate::calibrate_efp;
use efpmm::filter::asymptotic_variance;
use efpmm::policy::{Zone, ZoneSlice};
use efpmm::sim::{run_paths, synthetic_market as synth, SimConfig};
use efpmm::{Information, SolveOptions, Venue};
use pyo3::exceptions::{PyArithmeticError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py(e: efpmm::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn venue(name: &str) -> PyResult<Venue> {
    match name {
        "spot" => Ok(Venue::Spot),
        "futures" => Ok(Venue::Futures),
        _ => Err(PyValueError::new_err(format!("venue must be 'spot' or 'futures', not {name:?}"))),
    }
}

fn state(x: [f64; 4]) -> efpmm::StateVec {
    efpmm::state_vec(x[0], x[1], x[2], x[3])
}

/// Model constants. Field names follow the JSON config: sigma_S, k_E, ...
#[pyclass(name = "ModelParams", module = "efpmm_py")]
#[derive(Clone)]
pub struct PyParams {
    inner: efpmm::ModelParams,
}

#[pymethods]
impl PyParams {
    /// The spot gold benchmark set.
    #[staticmethod]
    fn gold() -> Self {
        PyParams {
            inner: efpmm::ModelParams::gold(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyParams {
            inner: efpmm::ModelParams::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Copy with some fields changed, e.g. `p.replace(gamma=1e-3, K_S=1e-3)`.
    #[pyo3(signature = (**changes))]
    fn replace(&self, changes: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(&self.inner).expect("params serialise");
        let map = value.as_object_mut().expect("params are an object");
        if let Some(changes) = changes {
            for (k, v) in changes.iter() {
                let key: String = k.extract()?;
                if !map.contains_key(&key) {
                    return Err(PyKeyError::new_err(key));
                }
                let new = if let Ok(list) = v.extract::<Vec<f64>>() {
                    serde_json::json!(list)
                } else {
                    serde_json::json!(v.extract::<f64>()?)
                };
                map.insert(key, new);
            }
        }
        let text = value.to_string();
        Self::from_json(&text)
    }

    fn __getitem__(&self, key: &str, py: Python<'_>) -> PyResult<PyObject> {
        let value = serde_json::to_value(&self.inner).expect("params serialise");
        match value.get(key) {
            Some(serde_json::Value::Array(items)) => {
                let v: Vec<f64> = items.iter().filter_map(|x| x.as_f64()).collect();
                Ok(PyList::new(py, v)?.into_any().unbind())
            }
            Some(v) => Ok(v.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind()),
            None => Err(PyKeyError::new_err(key.to_string())),
        }
    }

    fn __repr__(&self) -> String {
        format!("ModelParams({})", serde_json::to_string(&self.inner).expect("params serialise"))
    }
}

/// Solution A(t), B(t) of the Riccati system; θ̌ = −xᵀAx − xᵀB.
#[pyclass(name = "ValueApprox", module = "efpmm_py", frozen)]
pub struct PyValueApprox {
    inner: Arc<efpmm::ValueApprox>,
}

#[pymethods]
impl PyValueApprox {
    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn step(&self) -> f64 {
        self.inner.step()
    }

    fn grid(&self) -> Vec<f64> {
        self.inner.grid().to_vec()
    }

    /// (A as 4 rows, B) at time t, day.
    fn at(&self, t: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let (a, b) = self.inner.at(t);
        let rows = (0..4).map(|i| (0..4).map(|j| a[(i, j)]).collect()).collect();
        (rows, b.iter().copied().collect())
    }

    /// θ̌(t, x) for x = (q_S, q_F, E, D).
    fn theta(&self, t: f64, x: [f64; 4]) -> f64 {
        self.inner.theta(t, &state(x))
    }
}

/// Fit Ȟ, build the Riccati system and integrate it.
#[pyfunction]
#[pyo3(signature = (params, dt_max = 1e-5, futures_enabled = true, filtered = false))]
fn solve(params: &PyParams, dt_max: f64, futures_enabled: bool, filtered: bool) -> PyResult<PyValueApprox> {
    let opts = SolveOptions {
        dt_max,
        futures_enabled,
        information: if filtered { Information::Filtered } else { Information::Oracle },
        ..SolveOptions::default()
    };
    let va = efpmm::solve_model(&params.inner, &opts).map_err(to_py)?;
    Ok(PyValueApprox { inner: Arc::new(va) })
}

/// Quotes and hedging rates derived from a solved value approximation.
#[pyclass(name = "Policy", module = "efpmm_py", frozen)]
pub struct PyPolicy {
    inner: efpmm::Policy,
}

#[pymethods]
impl PyPolicy {
    #[new]
    fn new(params: &PyParams, va: &PyValueApprox) -> Self {
        PyPolicy {
            inner: efpmm::Policy::new(&params.inner, va.inner.clone()),
        }
    }

    /// Dict with bid_offsets, ask_offsets (bp, per ladder size), v_s, v_f (oz/day).
    #[pyo3(signature = (x, t = 0.0))]
    fn decide<'py>(&self, py: Python<'py>, x: [f64; 4], t: f64) -> PyResult<Bound<'py, PyDict>> {
        let d = self.inner.decide(t, &state(x)).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("bid_offsets", d.bid_offsets)?;
        out.set_item("ask_offsets", d.ask_offsets)?;
        out.set_item("v_s", d.v_s)?;
        out.set_item("v_f", d.v_f)?;
        Ok(out)
    }

    #[pyo3(signature = (x, size, t = 0.0))]
    fn skew(&self, x: [f64; 4], size: f64, t: f64) -> PyResult<f64> {
        self.inner.skew(t, &state(x), size).map_err(to_py)
    }

    #[pyo3(signature = (x, size, t = 0.0))]
    fn spread(&self, x: [f64; 4], size: f64, t: f64) -> PyResult<f64> {
        self.inner.spread(t, &state(x), size).map_err(to_py)
    }

    /// Marginal value of inventory on a venue, bp.
    #[pyo3(signature = (x, venue_name, t = 0.0))]
    fn marginal(&self, x: [f64; 4], venue_name: &str, t: f64) -> PyResult<f64> {
        Ok(self.inner.marginal(t, &state(x), venue(venue_name)?))
    }

    /// (lower, upper) q_S edges of the no-execution zone at ε = E/σ_E.
    #[pyo3(signature = (venue_name, eps, q_f = 0.0, d = 0.0, t = 0.0))]
    fn no_execution_band(&self, venue_name: &str, eps: f64, q_f: f64, d: f64, t: f64) -> PyResult<(f64, f64)> {
        let slice = ZoneSlice::inventory_vs_deviation(q_f, d, self.inner.params().sigma_e);
        Ok(match self.inner.no_execution_zone(t, venue(venue_name)?, &slice) {
            Zone::Slab { buy, sell, .. } => {
                let (a, b) = (buy.at(eps), sell.at(eps));
                (a.min(b), a.max(b))
            }
            Zone::Unbounded => (f64::NEG_INFINITY, f64::INFINITY),
        })
    }
}

#[pyfunction]
fn fill_probability(delta: f64, params: &PyParams) -> f64 {
    efpmm::fill_probability(delta, &params.inner)
}

#[pyfunction]
fn quote_hamiltonian(z: f64, p: f64, params: &PyParams) -> PyResult<f64> {
    efpmm::quote_hamiltonian(z, p, &params.inner).map_err(to_py)
}

#[pyfunction]
fn optimal_offset(z: f64, p: f64, params: &PyParams) -> PyResult<f64> {
    efpmm::optimal_offset(z, p, &params.inner).map_err(to_py)
}

#[pyfunction]
fn asymptotic_filter_variance(params: &PyParams) -> f64 {
    asymptotic_variance(&params.inner)
}

/// Monte Carlo ensemble; `config` is a JSON simulation config (days for times).
/// Returns mean and standard error of q_S, q_F, q_S+q_F and MtM per sample time.
#[pyfunction]
#[pyo3(signature = (params, va, config = "{}"))]
fn simulate(params: &PyParams, va: &PyValueApprox, config: &str, py: Python<'_>) -> PyResult<HashMap<String, Vec<f64>>> {
    let cfg: SimConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let p = params.inner.clone();
    let va = va.inner.clone();
    let ens = py.allow_threads(|| run_paths(&cfg, &p, va)).map_err(to_py)?;
    let mut out = HashMap::new();
    out.insert("t".into(), ens.times.clone());
    for (name, m) in [("q_s", &ens.q_s), ("q_f", &ens.q_f), ("net", &ens.net), ("mtm", &ens.mtm)] {
        out.insert(format!("{name}_mean"), m.iter().map(|x| x.mean()).collect());
        out.insert(format!("{name}_se"), m.iter().map(|x| x.std_error()).collect());
    }
    Ok(out)
}

/// Simulated (t, spot, efp, mean_level) series at a fixed spacing.
#[pyfunction]
fn synthetic_market(params: &PyParams, days: f64, spacing_s: f64, seed: u64) -> PyResult<HashMap<String, Vec<f64>>> {
    let m = synth(&params.inner, days, spacing_s, seed).map_err(to_py)?;
    let mut out = HashMap::new();
    out.insert("t".into(), m.t);
    out.insert("spot".into(), m.spot);
    out.insert("efp".into(), m.efp);
    if let Some(d) = m.mean_level {
        out.insert("mean_level".into(), d);
    }
    Ok(out)
}

/// Fit k_E, σ_E, k_D, σ_D, D̄ to an EFP series sampled every `spacing` days.
#[pyfunction]
fn calibrate(series: Vec<f64>, spacing: f64, params: &PyParams, py: Python<'_>) -> PyResult<HashMap<String, f64>> {
    let init = params.inner.clone();
    let report = py.allow_threads(|| calibrate_efp(&series, spacing, &init)).map_err(to_py)?;
    let f = report.fit;
    Ok(HashMap::from([
        ("k_E".to_string(), f.k_e),
        ("sigma_E".to_string(), f.sigma_e),
        ("k_D".to_string(), f.k_d),
        ("sigma_D".to_string(), f.sigma_d),
        ("D_bar".to_string(), f.d_bar),
        ("objective".to_string(), report.objective),
    ]))
}

#[pymodule]
pub fn efpmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", efpmm::VERSION)?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyValueApprox>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(fill_probability, m)?)?;
    m.add_function(wrap_pyfunction!(quote_hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_offset, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_filter_variance, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_market, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    Ok(())
}
