//! Python module `odl`: frame simulation, classical and CENet channel
//! estimation, detection, sweeps and the selftest.
//!
//! Grids cross the boundary as `K` lists of `N` Python complex numbers
//! (subcarrier-major).

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use odl_core::cenet::CenetModel;
use odl_core::equalize::{detect_bits, rzf_detect, zf_detect};
use odl_core::harness::{
    frame_seed, run_ber_sweep, run_mse_sweep, BerScheme, ExperimentConfig, Link, ModelBank, MseScheme, Scenario,
};
use odl_core::ofdm::{FrameGrid, OfdmConfig, QamConstellation};
use odl_core::pilots::{channel_mse, ls_estimate, GridInterpolator, InterpKind, PilotObservation};

type Grid = Vec<Vec<Complex64>>;

fn err(e: odl_core::Error) -> PyErr {
    match e {
        odl_core::Error::InvalidArgument(_) | odl_core::Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py(g: &FrameGrid) -> Grid {
    (0..g.subcarriers()).map(|k| (0..g.slots()).map(|n| g.get(k, n)).collect()).collect()
}

fn from_py(rows: &Grid) -> PyResult<FrameGrid> {
    let k = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if k == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("grid must be a non-empty rectangular list of lists"));
    }
    FrameGrid::from_vec(k, n, rows.iter().flatten().copied().collect()).map_err(err)
}

fn link(scenario: &str, modulation: usize) -> PyResult<Link> {
    let s: Scenario = scenario.parse().map_err(err)?;
    Link::new(s, OfdmConfig::default().with_modulation(modulation)).map_err(err)
}

fn config(toml_text: Option<&str>) -> PyResult<ExperimentConfig> {
    match toml_text {
        Some(t) => ExperimentConfig::from_toml_str(t).map_err(err),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Crate version.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Runs the oracle suite; returns `(passed, report_text)`.
#[pyfunction]
fn selftest() -> (bool, String) {
    let r = odl_core::selftest::run_selftest();
    (r.passed(), r.to_text())
}

/// Simulates frame `index` of the run seeded with `seed`. Returns a dict
/// with grids `h`, `x`, `y`, the payload `bits` and `noise_var`.
#[pyfunction]
#[pyo3(signature = (snr_db, seed=1, index=0, scenario="vehA", modulation=256))]
fn simulate_frame<'py>(
    py: Python<'py>,
    snr_db: f64,
    seed: u64,
    index: u64,
    scenario: &str,
    modulation: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let l = link(scenario, modulation)?;
    let f = l.frame(frame_seed(seed, index), snr_db);
    let d = PyDict::new(py);
    d.set_item("h", to_py(&f.h))?;
    d.set_item("x", to_py(&f.x))?;
    d.set_item("y", to_py(&f.y))?;
    d.set_item("bits", f.bits)?;
    d.set_item("noise_var", f.noise_var)?;
    Ok(d)
}

/// LS at the pilots interpolated to the full grid; `method` is `"gaussian"`
/// or `"linear"`.
#[pyfunction]
#[pyo3(signature = (y, method="gaussian", scenario="vehA"))]
fn estimate_channel(y: Grid, method: &str, scenario: &str) -> PyResult<Grid> {
    let l = link(scenario, 256)?;
    let kind = match method {
        "gaussian" => InterpKind::Gaussian,
        "linear" => InterpKind::Linear,
        _ => return Err(PyValueError::new_err(format!("unknown method {method:?} (gaussian|linear)"))),
    };
    let y = from_py(&y)?;
    let ls = ls_estimate(&PilotObservation::from_grid(&y, &l.pattern, 0.0), &l.pattern).map_err(err)?;
    let h = GridInterpolator::new(&l.pattern, kind).map_err(err)?.apply(&ls).map_err(err)?;
    Ok(to_py(&h))
}

/// Per-resource-element equalization `Y/H`, or `conj(H)Y/(|H|²+tau)` when
/// `tau` is given.
#[pyfunction]
#[pyo3(signature = (y, h, tau=None))]
fn equalize(y: Grid, h: Grid, tau: Option<f64>) -> PyResult<Grid> {
    let (y, h) = (from_py(&y)?, from_py(&h)?);
    let x = match tau {
        Some(t) => rzf_detect(&y, &h, t),
        None => zf_detect(&y, &h),
    }
    .map_err(err)?;
    Ok(to_py(&x))
}

/// Hard-decision bits from an equalized grid at the data positions.
#[pyfunction]
#[pyo3(signature = (xhat, modulation=256))]
fn demodulate(xhat: Grid, modulation: usize) -> PyResult<Vec<u8>> {
    let l = link("vehA", modulation)?;
    let q = QamConstellation::new(modulation).map_err(err)?;
    Ok(detect_bits(&from_py(&xhat)?, &l.pattern, &q))
}

/// Mean squared error between two grids.
#[pyfunction]
fn mse(estimate: Grid, truth: Grid) -> PyResult<f64> {
    channel_mse(&from_py(&estimate)?, &from_py(&truth)?).map_err(err)
}

/// A trained CENet checkpoint.
#[pyclass]
struct Cenet {
    model: CenetModel,
}

#[pymethods]
impl Cenet {
    #[new]
    fn new(path: &str) -> PyResult<Self> {
        Ok(Self {
            model: CenetModel::load(path).map_err(err)?,
        })
    }

    /// Channel estimate from a received grid.
    #[pyo3(signature = (y, scenario="vehA"))]
    fn estimate(&self, y: Grid, scenario: &str) -> PyResult<Grid> {
        let l = link(scenario, 256)?;
        let y = from_py(&y)?;
        let ls = ls_estimate(&PilotObservation::from_grid(&y, &l.pattern, 0.0), &l.pattern).map_err(err)?;
        Ok(to_py(&self.model.estimate_from_ls(&ls, &l.pattern).map_err(err)?))
    }
}

fn parse<T: std::str::FromStr<Err = odl_core::Error>>(items: &[String]) -> PyResult<Vec<T>> {
    items.iter().map(|s| s.parse().map_err(err)).collect()
}

/// Channel-MSE sweep; returns the results CSV. `config` is TOML text.
#[pyfunction]
#[pyo3(signature = (schemes, config=None))]
fn sweep_mse(py: Python<'_>, schemes: Vec<String>, config: Option<&str>) -> PyResult<String> {
    let cfg = self::config(config)?;
    let schemes: Vec<MseScheme> = parse(&schemes)?;
    let bank = load_bank(&cfg)?;
    let r = py.detach(|| run_mse_sweep(&cfg, &schemes, &bank)).map_err(err)?;
    Ok(r.to_csv_string())
}

/// BER sweep; returns the results CSV. `config` is TOML text.
#[pyfunction]
#[pyo3(signature = (schemes, config=None))]
fn sweep_ber(py: Python<'_>, schemes: Vec<String>, config: Option<&str>) -> PyResult<String> {
    let cfg = self::config(config)?;
    let schemes: Vec<BerScheme> = parse(&schemes)?;
    let bank = load_bank(&cfg)?;
    let r = py.detach(|| run_ber_sweep(&cfg, &schemes, &bank)).map_err(err)?;
    Ok(r.to_csv_string())
}

fn load_bank(cfg: &ExperimentConfig) -> PyResult<ModelBank> {
    let mut bank = ModelBank::default();
    for (name, path) in &cfg.models.cenet {
        bank.cenet.insert(name.clone(), CenetModel::load(path).map_err(err)?);
    }
    if let Some(p) = &cfg.models.ccrnet {
        bank.ccrnet = Some(odl_core::ccrnet::CcrnetModel::load(p).map_err(err)?);
    }
    Ok(bank)
}

#[pymodule]
fn odl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_frame, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_channel, m)?)?;
    m.add_function(wrap_pyfunction!(equalize, m)?)?;
    m.add_function(wrap_pyfunction!(demodulate, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_mse, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_ber, m)?)?;
    m.add_class::<Cenet>()?;
    Ok(())
}
