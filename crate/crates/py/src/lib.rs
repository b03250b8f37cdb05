//! Python bindings: parameters, synthesis, sweeps, certification and preset
//! simulations. Rich results also expose their full JSON form.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use platoon_core::certify::{certify_gain, certify_result, CertificationReport, DEFAULT_GRID_POINTS};
use platoon_core::config::Config;
use platoon_core::delay::decompose;
use platoon_core::discretize::Discretization;
use platoon_core::lmi::{self, Mode, SynthesisOptions, Theorem};
use platoon_core::polytope::{coefficient_bounds, decompose_integral};
use platoon_core::sim::{self, derive_seed, run_partial, summarize_partial, PresetSettings, SimSummary};
use platoon_core::{Error, Gain, OutputVariant, PlatoonParams};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::UnknownPreset(_) | Error::Domain(_) | Error::Dimension(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Model parameters; defaults are the reference 8-vehicle configuration.
#[pyclass(name = "Params", from_py_object)]
#[derive(Clone)]
pub struct PyParams {
    inner: PlatoonParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (followers=7, time_gap=1.0, h=0.5, eps=2.0, eps0=0.5, zeta=0.54, v_min=18.8, v_max=21.0, printed_output=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        followers: usize,
        time_gap: f64,
        h: f64,
        eps: f64,
        eps0: f64,
        zeta: f64,
        v_min: f64,
        v_max: f64,
        printed_output: bool,
    ) -> PyResult<Self> {
        let inner = PlatoonParams {
            followers,
            time_gap,
            h,
            eps,
            eps0,
            zeta,
            v_min,
            v_max,
            output: if printed_output {
                OutputVariant::Printed
            } else {
                OutputVariant::Consistent
            },
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn followers(&self) -> usize {
        self.inner.followers
    }
    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }
    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }
    #[getter]
    fn eps0(&self) -> f64 {
        self.inner.eps0
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// LMI program options.
#[pyclass(name = "Options", from_py_object)]
#[derive(Clone)]
pub struct PyOptions {
    inner: SynthesisOptions,
}

#[pymethods]
impl PyOptions {
    #[new]
    #[pyo3(signature = (theorem=2, mode="string_only", mu=None, a=None, b=None, sigma=None, gamma=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        theorem: u8,
        mode: &str,
        mu: Option<f64>,
        a: Option<f64>,
        b: Option<f64>,
        sigma: Option<f64>,
        gamma: Option<f64>,
    ) -> PyResult<Self> {
        let mut o = SynthesisOptions {
            theorem: Theorem::try_from(theorem).map_err(|e| PyValueError::new_err(e.to_string()))?,
            mode: match mode {
                "string_only" => Mode::StringOnly,
                "string_plus_attenuation" => Mode::StringPlusAttenuation,
                other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
            },
            ..Default::default()
        };
        o.mu = mu.unwrap_or(o.mu);
        o.a = a.unwrap_or(o.a);
        o.b = b.unwrap_or(o.b);
        o.sigma = sigma.unwrap_or(o.sigma);
        o.gamma = gamma.unwrap_or(o.gamma);
        Ok(Self { inner: o })
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.inner)
    }
}

#[pyclass(name = "SynthesisResult", from_py_object)]
#[derive(Clone)]
pub struct PySynthesisResult {
    inner: lmi::SynthesisResult,
    params: PlatoonParams,
}

#[pymethods]
impl PySynthesisResult {
    #[getter]
    fn p(&self) -> usize {
        self.inner.p
    }
    #[getter]
    fn feasible(&self) -> bool {
        self.inner.feasible
    }
    #[getter]
    fn margin(&self) -> f64 {
        self.inner.margin
    }
    #[getter]
    fn verdict(&self) -> String {
        format!("{:?}", self.inner.verdict)
    }
    /// `[k1, k2, k3]` or `None` when infeasible.
    #[getter]
    fn gain(&self) -> Option<[f64; 3]> {
        self.inner.gain.map(|g| g.0)
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "SynthesisResult(p={}, feasible={}, gain={})",
            self.inner.p,
            self.inner.feasible,
            self.inner.gain.map_or("None".into(), |g| g.to_string())
        )
    }
}

#[pyclass(name = "Certification", from_py_object)]
#[derive(Clone)]
pub struct PyCertification {
    inner: CertificationReport,
}

#[pymethods]
impl PyCertification {
    #[getter]
    fn verdict(&self) -> bool {
        self.inner.verdict
    }
    #[getter]
    fn max_spectral_radius(&self) -> f64 {
        self.inner.radius.max_radius
    }
    /// Worst sampled Lyapunov decrease margin, if a certificate was checked.
    #[getter]
    fn lyapunov_margin(&self) -> Option<f64> {
        self.inner.lyapunov.as_ref().map(|l| l.worst_margin)
    }
    #[getter]
    fn predecessor_gain(&self) -> Option<f64> {
        self.inner.predecessor_gain.as_ref().map(|g| g.peak)
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.inner)
    }
}

#[pyclass(name = "Simulation", from_py_object)]
#[derive(Clone)]
pub struct PySimulation {
    summary: SimSummary,
    csv: String,
}

#[pymethods]
impl PySimulation {
    #[getter]
    fn gain(&self) -> [f64; 3] {
        self.summary.gain.0
    }
    /// `||y_i|| / ||y_{i-1}||` per vehicle; `None` where undefined.
    #[getter]
    fn ratios(&self) -> Vec<Option<f64>> {
        self.summary.l2.ratios.clone()
    }
    #[getter]
    fn string_stable(&self) -> bool {
        self.summary.string_stable
    }
    #[getter]
    fn converged(&self) -> bool {
        self.summary.converged
    }
    #[getter]
    fn aborted(&self) -> Option<String> {
        self.summary.aborted.clone()
    }
    /// The per-vehicle trace as CSV text.
    fn trace_csv(&self) -> String {
        self.csv.clone()
    }
    fn summary_json(&self) -> PyResult<String> {
        json(&self.summary)
    }
}

fn params_or_default(p: Option<PyParams>) -> PlatoonParams {
    p.map_or_else(PlatoonParams::reference, |p| p.inner)
}

fn options_or_default(o: Option<PyOptions>) -> SynthesisOptions {
    o.map(|o| o.inner).unwrap_or_default()
}

#[pyfunction]
#[pyo3(signature = (p, params=None, options=None))]
fn synthesize(py: Python<'_>, p: usize, params: Option<PyParams>, options: Option<PyOptions>) -> PyResult<PySynthesisResult> {
    let params = params_or_default(params);
    let opts = options_or_default(options);
    let inner = py
        .detach(|| lmi::synthesize(&params, &opts, p))
        .map_err(py_err)?;
    Ok(PySynthesisResult { inner, params })
}

/// One synthesis per `p`, in ascending order.
#[pyfunction]
#[pyo3(signature = (ps, params=None, options=None, jobs=1))]
fn sweep(
    py: Python<'_>,
    ps: Vec<usize>,
    params: Option<PyParams>,
    options: Option<PyOptions>,
    jobs: usize,
) -> PyResult<Vec<PySynthesisResult>> {
    let params = params_or_default(params);
    let opts = options_or_default(options);
    let report = py
        .detach(|| lmi::sweep_p(&params, &opts, &ps, jobs))
        .map_err(py_err)?;
    Ok(report
        .results
        .into_iter()
        .map(|inner| PySynthesisResult { inner, params })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (result, grid=DEFAULT_GRID_POINTS, tolerance=1e-8, seed=1))]
fn certify(py: Python<'_>, result: PySynthesisResult, grid: usize, tolerance: f64, seed: u64) -> PyResult<PyCertification> {
    let inner = py
        .detach(|| certify_result(&result.inner, &result.params, grid, tolerance, seed))
        .map_err(py_err)?;
    Ok(PyCertification { inner })
}

/// Spectral-radius scan and predecessor gain for a gain without a certificate.
#[pyfunction]
#[pyo3(signature = (k, p, params=None, grid=DEFAULT_GRID_POINTS))]
fn check_gain(py: Python<'_>, k: [f64; 3], p: usize, params: Option<PyParams>, grid: usize) -> PyResult<PyCertification> {
    let params = params_or_default(params);
    let inner = py.detach(|| certify_gain(Gain(k), p, &params, grid)).map_err(py_err)?;
    Ok(PyCertification { inner })
}

/// Runs a preset. `gain` overrides the synthesized (or baseline) gain.
#[pyfunction]
#[pyo3(signature = (preset, seed=1, gain=None, params=None, options=None, horizon=None))]
fn simulate(
    py: Python<'_>,
    preset: &str,
    seed: u64,
    gain: Option<[f64; 3]>,
    params: Option<PyParams>,
    options: Option<PyOptions>,
    horizon: Option<f64>,
) -> PyResult<PySimulation> {
    let params = params_or_default(params);
    let opts = options_or_default(options);
    let mut set = PresetSettings::default();
    set.horizon = horizon.unwrap_or(set.horizon);
    let run = || -> platoon_core::Result<PySimulation> {
        let mut sc = sim::scenario(preset, seed, &params, &set)?;
        if let Some(k) = gain {
            sc.gain = sim::GainSpec::Fixed { k: Gain(k) };
            sc.config.gain = Gain(k);
        }
        let cfg = sc.resolve(&opts)?;
        let (trace, err) = run_partial(&cfg)?;
        let summary = summarize_partial(preset, &cfg, &trace, err.as_ref())?;
        let mut csv = Vec::new();
        trace.write_csv(&mut csv)?;
        Ok(PySimulation {
            summary,
            csv: String::from_utf8_lossy(&csv).into_owned(),
        })
    };
    py.detach(run).map_err(py_err)
}

/// `(tau_bar, p)` with `tau = tau_bar + (p - 1) h`.
#[pyfunction]
fn decompose_delay(tau: f64, h: f64) -> PyResult<(f64, usize)> {
    decompose(tau, h).map_err(py_err)
}

/// Lower and upper coefficient bounds of the delay polytope.
#[pyfunction]
#[pyo3(signature = (params=None, rate=None, tau_min=0.0, tau_max=None))]
fn polytope_bounds(
    params: Option<PyParams>,
    rate: Option<f64>,
    tau_min: f64,
    tau_max: Option<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let params = params_or_default(params);
    let disc = Discretization::new(&params).map_err(py_err)?;
    let dec = decompose_integral(&disc, rate).map_err(py_err)?;
    let b = coefficient_bounds(&dec, tau_min, tau_max.unwrap_or(params.h)).map_err(py_err)?;
    Ok((b.lower.to_vec(), b.upper.to_vec()))
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    sim::scenario_library().to_vec()
}

/// Parses a TOML config and returns its JSON form.
#[pyfunction]
fn load_config(path: &str) -> PyResult<String> {
    let cfg = Config::load(std::path::Path::new(path)).map_err(py_err)?;
    json(&cfg)
}

#[pyfunction]
fn derive_stream_seed(seed: u64, stream: u64) -> u64 {
    derive_seed(seed, stream)
}

#[pymodule]
fn platoon(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyOptions>()?;
    m.add_class::<PySynthesisResult>()?;
    m.add_class::<PyCertification>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(check_gain, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_delay, m)?)?;
    m.add_function(wrap_pyfunction!(polytope_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(derive_stream_seed, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
