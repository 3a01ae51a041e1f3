//! Experiment configuration files.
//!
//! TOML with optional sections; unknown keys are rejected. Example:
//!
//! ```toml
//! experiment = "calib-sweep"
//! output = "calib.csv"
//!
//! [market]
//! spot = 100.0
//! r = 0.0
//! q = 0.0
//!
//! [quote]
//! tenor = 0.25
//! atm_vol = 0.08
//! rr25 = 0.01
//! bf25 = 0.005
//!
//! [model]
//! beta = 2.0
//! eta_grid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
//!
//! [mc]
//! paths = 1000000
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use corrheston::blackscholes::{FxConventions, SmileQuote};
use corrheston::fourier::QuadratureConfig;
use corrheston::montecarlo::McConfig;
use corrheston::ModelParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Option<String>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub market: Market,
    pub quote: Option<SmileQuote>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub conventions: FxConventions,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Market {
    pub spot: f64,
    pub r: f64,
    pub q: f64,
}

impl Default for Market {
    fn default() -> Self {
        Self {
            spot: 100.0,
            r: 0.0,
            q: 0.0,
        }
    }
}

/// Fixed model inputs. `theta` and `alpha` are needed only by experiments
/// that take explicit parameters instead of calibrating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub beta: f64,
    pub eta: Option<f64>,
    pub eta_grid: Option<Vec<f64>>,
    pub theta: Option<f64>,
    pub v0: Option<f64>,
    pub alpha: Option<f64>,
    pub rho_bar: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            beta: 2.0,
            eta: None,
            eta_grid: None,
            theta: None,
            v0: None,
            alpha: None,
            rho_bar: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub strikes: Option<Vec<f64>>,
    pub expiry: Option<f64>,
    /// Constant-vol one touch prices defining the barrier grid.
    pub bs_prices: Option<Vec<f64>>,
    /// Barrier sides, any of "up" and "down".
    pub sides: Option<Vec<String>>,
    /// Knockout strike; defaults to the forward.
    pub strike: Option<f64>,
    pub fixings_per_year: Option<f64>,
    pub tenors: Option<Vec<f64>>,
    pub bump: Option<f64>,
    /// Business days simulated by the Monte Carlo risk reversal regression;
    /// zero or absent skips it.
    pub horizon_days: Option<usize>,
    pub data: Option<PathBuf>,
    /// `k(τ)` used to turn an empirical beta into an `η` estimate.
    pub k_tau: Option<f64>,
}

pub fn config_error(message: impl Into<String>) -> CliError {
    CliError::new("config", message)
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Data files are looked up next to the config file.
        if let (Some(data), Some(dir)) = (&cfg.sweep.data, path.parent()) {
            if data.is_relative() {
                cfg.sweep.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_error(e.message().to_string()))
    }

    pub fn quote(&self) -> Result<SmileQuote, CliError> {
        let q = self.quote.ok_or_else(|| config_error("missing [quote] section"))?;
        q.validate().map_err(CliError::from)?;
        Ok(q)
    }

    /// `eta_grid` if given, otherwise the single `eta`.
    pub fn etas(&self) -> Result<Vec<f64>, CliError> {
        let etas = match (&self.model.eta_grid, self.model.eta) {
            (Some(grid), _) => grid.clone(),
            (None, Some(eta)) => vec![eta],
            (None, None) => return Err(config_error("model.eta or model.eta_grid is required")),
        };
        if etas.is_empty() {
            return Err(config_error("model.eta_grid is empty"));
        }
        if let Some(bad) = etas.iter().find(|e| !(e.is_finite() && (0.0..1.0).contains(*e))) {
            return Err(config_error(format!("eta {bad} outside [0, 1)")));
        }
        Ok(etas)
    }

    /// Explicit parameters from the model section for a given `eta`.
    pub fn explicit_params(&self, eta: f64) -> Result<ModelParams, CliError> {
        let m = &self.model;
        let theta = m.theta.ok_or_else(|| config_error("model.theta is required"))?;
        let alpha = m.alpha.ok_or_else(|| config_error("model.alpha is required"))?;
        let v0 = m.v0.unwrap_or(theta);
        ModelParams::centered(theta, v0, alpha, m.beta, m.rho_bar, eta, self.market.r, self.market.q)
            .map_err(CliError::from)
    }

    pub fn has_explicit_params(&self) -> bool {
        self.model.theta.is_some() && self.model.alpha.is_some()
    }

    pub fn validate_common(&self) -> Result<(), CliError> {
        let m = &self.market;
        if !(m.spot.is_finite() && m.spot > 0.0) {
            return Err(config_error(format!("market.spot = {} must be > 0", m.spot)));
        }
        if !(m.r.is_finite() && m.q.is_finite()) {
            return Err(config_error("market.r and market.q must be finite"));
        }
        if !(self.model.beta.is_finite() && self.model.beta > 0.0) {
            return Err(config_error(format!("model.beta = {} must be > 0", self.model.beta)));
        }
        self.mc.validate().map_err(CliError::from)?;
        self.quadrature.validate().map_err(CliError::from)?;
        Ok(())
    }
}

pub fn positive_list(name: &str, values: &[f64]) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(config_error(format!("{name} is empty")));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(config_error(format!("{name} entry {v} must be > 0")));
    }
    Ok(())
}
