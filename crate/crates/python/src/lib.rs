//! Python module `corrheston`: model parameters, Fourier pricing, smile
//! calibration, Monte Carlo exotics and risk reversal analytics.

use corrheston::analytics::{self, MarketSeries};
use corrheston::blackscholes::{FxConventions, OptionSide, SmileQuote};
use corrheston::calibration;
use corrheston::charfn;
use corrheston::exotics::{self, BarrierKind, BarrierProduct, VolSwapSpec};
use corrheston::fourier::{QuadratureConfig, VanillaSlice};
use corrheston::montecarlo::McConfig;
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(corrheston, CorrHestonError, PyException);

fn py_err(e: corrheston::Error) -> PyErr {
    match e {
        corrheston::Error::InvalidParameter { .. } | corrheston::Error::CorrelationRange { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => CorrHestonError::new_err(format!("{}: {e}", e.kind())),
    }
}

#[pyclass(name = "ModelParams", frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct PyModelParams(corrheston::ModelParams);

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (beta, alpha, theta_plus, theta_minus, rho_bar, eta, v0_plus, v0_minus, r=0.0, q=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        beta: f64,
        alpha: f64,
        theta_plus: f64,
        theta_minus: f64,
        rho_bar: f64,
        eta: f64,
        v0_plus: f64,
        v0_minus: f64,
        r: f64,
        q: f64,
    ) -> PyResult<Self> {
        let p = corrheston::ModelParams {
            beta,
            alpha,
            theta_plus,
            theta_minus,
            rho_bar,
            eta,
            v0_plus,
            v0_minus,
            r,
            q,
        };
        p.validate().map_err(py_err)?;
        Ok(Self(p))
    }

    /// Parameters with equal sub-variances, so that ρ₀ = ρ_a = ρ̄.
    #[staticmethod]
    #[pyo3(signature = (theta, v0, alpha, beta, rho_bar, eta, r=0.0, q=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn centered(theta: f64, v0: f64, alpha: f64, beta: f64, rho_bar: f64, eta: f64, r: f64, q: f64) -> PyResult<Self> {
        corrheston::ModelParams::centered(theta, v0, alpha, beta, rho_bar, eta, r, q)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn theta_plus(&self) -> f64 {
        self.0.theta_plus
    }
    #[getter]
    fn theta_minus(&self) -> f64 {
        self.0.theta_minus
    }
    #[getter]
    fn rho_bar(&self) -> f64 {
        self.0.rho_bar
    }
    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta
    }
    #[getter]
    fn v0_plus(&self) -> f64 {
        self.0.v0_plus
    }
    #[getter]
    fn v0_minus(&self) -> f64 {
        self.0.v0_minus
    }
    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }
    #[getter]
    fn q(&self) -> f64 {
        self.0.q
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta()
    }
    #[getter]
    fn v0(&self) -> f64 {
        self.0.v0()
    }
    #[getter]
    fn rho_0(&self) -> f64 {
        self.0.rho_0()
    }
    #[getter]
    fn rho_a(&self) -> f64 {
        self.0.rho_a()
    }
    #[getter]
    fn feller_ratio(&self) -> f64 {
        self.0.feller_ratio()
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "ModelParams(beta={}, alpha={}, theta_plus={}, theta_minus={}, rho_bar={}, eta={}, v0_plus={}, v0_minus={}, r={}, q={})",
            p.beta, p.alpha, p.theta_plus, p.theta_minus, p.rho_bar, p.eta, p.v0_plus, p.v0_minus, p.r, p.q
        )
    }
}

#[pyclass(name = "SmileQuote", frozen, from_py_object)]
#[derive(Clone, Copy)]
pub struct PySmileQuote(SmileQuote);

#[pymethods]
impl PySmileQuote {
    /// ATM vol, 25-delta risk reversal and butterfly, all in vol units.
    #[new]
    fn new(tenor: f64, atm_vol: f64, rr25: f64, bf25: f64) -> PyResult<Self> {
        let q = SmileQuote {
            tenor,
            atm_vol,
            rr25,
            bf25,
        };
        q.validate().map_err(py_err)?;
        Ok(Self(q))
    }
    #[getter]
    fn tenor(&self) -> f64 {
        self.0.tenor
    }
    #[getter]
    fn atm_vol(&self) -> f64 {
        self.0.atm_vol
    }
    #[getter]
    fn rr25(&self) -> f64 {
        self.0.rr25
    }
    #[getter]
    fn bf25(&self) -> f64 {
        self.0.bf25
    }
    fn __repr__(&self) -> String {
        let q = &self.0;
        format!("SmileQuote(tenor={}, atm_vol={}, rr25={}, bf25={})", q.tenor, q.atm_vol, q.rr25, q.bf25)
    }
}

#[pyclass(name = "CalibrationResult", frozen, skip_from_py_object)]
pub struct PyCalibrationResult {
    #[pyo3(get)]
    params: PyModelParams,
    #[pyo3(get)]
    residuals: [f64; 3],
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    feller_ratio: f64,
    #[pyo3(get)]
    strikes: [f64; 3],
    #[pyo3(get)]
    warnings: Vec<String>,
}

fn mc_config(paths: usize, seed: u64) -> McConfig {
    McConfig {
        paths,
        seed,
        ..Default::default()
    }
}

fn side(call: bool) -> OptionSide {
    if call {
        OptionSide::Call
    } else {
        OptionSide::Put
    }
}

#[pyfunction]
fn char_fn(xi: Complex64, tau: f64, spot: f64, params: PyModelParams) -> PyResult<Complex64> {
    charfn::char_fn(xi, tau, spot, &params.0).map_err(py_err)
}

/// Discounted vanilla price by Fourier inversion.
#[pyfunction]
#[pyo3(signature = (params, spot, strike, tau, call=true))]
fn vanilla_price(params: PyModelParams, spot: f64, strike: f64, tau: f64, call: bool) -> PyResult<f64> {
    let slice = VanillaSlice::new(&params.0, spot, tau, &QuadratureConfig::default()).map_err(py_err)?;
    slice.price(strike, side(call)).map_err(py_err)
}

/// Black-Scholes implied vols of model prices at each strike.
#[pyfunction]
fn implied_vols(params: PyModelParams, spot: f64, tau: f64, strikes: Vec<f64>) -> PyResult<Vec<f64>> {
    let slice = VanillaSlice::new(&params.0, spot, tau, &QuadratureConfig::default()).map_err(py_err)?;
    strikes.iter().map(|&k| slice.implied_vol(k).map_err(py_err)).collect()
}

/// Fits θ, α and ρ̄ to an ATM/RR/BF quote with β and η held fixed.
#[pyfunction]
#[pyo3(signature = (quote, spot, beta, eta, r=0.0, q=0.0))]
fn calibrate(quote: PySmileQuote, spot: f64, beta: f64, eta: f64, r: f64, q: f64) -> PyResult<PyCalibrationResult> {
    let c = calibration::calibrate(&quote.0, spot, beta, eta, r, q, None).map_err(py_err)?;
    Ok(PyCalibrationResult {
        params: PyModelParams(c.params),
        residuals: c.residuals,
        iterations: c.iterations,
        feller_ratio: c.feller_ratio,
        strikes: c.strikes,
        warnings: c.warnings,
    })
}

/// ATM/RR/BF quote implied by the model at `tau`.
#[pyfunction]
fn quote_from_model(params: PyModelParams, spot: f64, tau: f64) -> PyResult<PySmileQuote> {
    calibration::quote_from_model(&params.0, spot, tau, FxConventions::default(), &QuadratureConfig::default())
        .map(PySmileQuote)
        .map_err(py_err)
}

/// One touch paying 1 at expiry; returns `(price, standard_error)`.
#[pyfunction]
#[pyo3(signature = (params, spot, barrier, expiry, paths=100_000, seed=42))]
fn one_touch_price(params: PyModelParams, spot: f64, barrier: f64, expiry: f64, paths: usize, seed: u64) -> PyResult<(f64, f64)> {
    let product = BarrierProduct::one_touch(barrier, expiry).map_err(py_err)?;
    let p = exotics::price_one_touch(&product, spot, &params.0, &mc_config(paths, seed)).map_err(py_err)?;
    Ok((p.value, p.std_error))
}

/// Out-of-the-money knockout: a down-and-out call when `barrier < spot`,
/// otherwise an up-and-out put. Returns `(price, standard_error)`.
#[pyfunction]
#[pyo3(signature = (params, spot, barrier, strike, expiry, paths=100_000, seed=42))]
fn knockout_price(
    params: PyModelParams,
    spot: f64,
    barrier: f64,
    strike: f64,
    expiry: f64,
    paths: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let kind = if barrier < spot {
        BarrierKind::DownAndOutCall
    } else {
        BarrierKind::UpAndOutPut
    };
    let product = BarrierProduct::knockout(kind, barrier, strike, expiry).map_err(py_err)?;
    let p = exotics::price_knockout(&product, spot, &params.0, &mc_config(paths, seed)).map_err(py_err)?;
    Ok((p.value, p.std_error))
}

/// Fair volatility swap strike with `fixings_per_year` daily fixings;
/// returns `(strike, standard_error)`.
#[pyfunction]
#[pyo3(signature = (params, spot, expiry, fixings_per_year=250.0, paths=100_000, seed=42))]
fn vol_swap_strike(
    params: PyModelParams,
    spot: f64,
    expiry: f64,
    fixings_per_year: f64,
    paths: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let spec = VolSwapSpec::new(expiry, fixings_per_year).map_err(py_err)?;
    let p = exotics::price_vol_swap_strike(&spec, spot, &params.0, &mc_config(paths, seed)).map_err(py_err)?;
    Ok((p.value, p.std_error))
}

/// Constant-vol one touch price.
#[pyfunction]
#[pyo3(signature = (spot, barrier, vol, tau, r=0.0, q=0.0))]
fn bs_one_touch_price(spot: f64, barrier: f64, vol: f64, tau: f64, r: f64, q: f64) -> PyResult<f64> {
    exotics::bs_one_touch_price(spot, barrier, vol, tau, r, q).map_err(py_err)
}

/// Slope of the model 25-delta risk reversal in the initial correlation.
#[pyfunction]
#[pyo3(signature = (params, spot, tau, bump=0.01))]
fn k_tau(params: PyModelParams, spot: f64, tau: f64, bump: f64) -> PyResult<f64> {
    analytics::model_k_tau_params(&params.0, spot, tau, bump, FxConventions::default(), &QuadratureConfig::default())
        .map_err(py_err)
}

#[pyfunction]
fn model_rr_beta(k_tau: f64, alpha: f64, eta: f64, theta: f64) -> PyResult<f64> {
    analytics::model_rr_beta(k_tau, alpha, eta, theta).map_err(py_err)
}

#[pyfunction]
fn estimate_eta(beta_rr: f64, k_tau: f64, alpha: f64, theta: f64) -> PyResult<f64> {
    analytics::estimate_eta(beta_rr, k_tau, alpha, theta).map_err(py_err)
}

/// Regression of daily risk reversal changes on log returns from a
/// `date,spot,rr` CSV (RR in percentage points). Returns a dict.
#[pyfunction]
fn estimate_rr_beta_csv(py: Python<'_>, path: std::path::PathBuf) -> PyResult<Py<pyo3::types::PyDict>> {
    let loaded = MarketSeries::from_csv_path(&path).map_err(py_err)?;
    let e = analytics::estimate_rr_beta(&loaded.series).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("beta_rr", e.beta_rr)?;
    d.set_item("intercept", e.intercept)?;
    d.set_item("r_squared", e.r_squared)?;
    d.set_item("corr", e.corr)?;
    d.set_item("std_error", e.std_error)?;
    d.set_item("n", e.n)?;
    d.set_item("dropped", loaded.dropped)?;
    Ok(d.unbind())
}

#[pymodule]
#[pyo3(name = "corrheston")]
fn corrheston_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CorrHestonError", m.py().get_type::<CorrHestonError>())?;
    m.add_class::<PyModelParams>()?;
    m.add_class::<PySmileQuote>()?;
    m.add_class::<PyCalibrationResult>()?;
    m.add_function(wrap_pyfunction!(char_fn, m)?)?;
    m.add_function(wrap_pyfunction!(vanilla_price, m)?)?;
    m.add_function(wrap_pyfunction!(implied_vols, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(quote_from_model, m)?)?;
    m.add_function(wrap_pyfunction!(one_touch_price, m)?)?;
    m.add_function(wrap_pyfunction!(knockout_price, m)?)?;
    m.add_function(wrap_pyfunction!(vol_swap_strike, m)?)?;
    m.add_function(wrap_pyfunction!(bs_one_touch_price, m)?)?;
    m.add_function(wrap_pyfunction!(k_tau, m)?)?;
    m.add_function(wrap_pyfunction!(model_rr_beta, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_eta, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_rr_beta_csv, m)?)?;
    Ok(())
}
