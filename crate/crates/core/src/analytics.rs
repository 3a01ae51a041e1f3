//! Risk-reversal beta: the empirical regression of daily risk reversal
//! changes on spot log returns, the model slope `k(τ) = ∂RR/∂ρ₀`, the
//! implied model beta `k α η² / θ`, and its inversion for `η`.

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::blackscholes::{FxConventions, SmileQuote};
use crate::calibration::{calibrate_with, model_pillars, CalibrationConfig};
use crate::error::{check, invalid, Error, Result};
use crate::fourier::{QuadratureConfig, StateFamily, VanillaSlice};
use crate::model::{to_raw, ModelParams};
use crate::montecarlo::{effective_steps, evolve_paths_with_steps, McConfig, PathObserver, PathState, StepView};

/// Minimum number of return observations for a regression.
pub const MIN_OBSERVATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub dates: Vec<NaiveDate>,
    pub spot: Vec<f64>,
    /// 25-delta risk reversal in volatility units (0.0085 = 0.85 vol points).
    pub rr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub series: MarketSeries,
    /// Rows skipped because a field was empty or not a number.
    pub dropped: usize,
}

#[derive(Debug, Deserialize)]
struct Row {
    date: Option<String>,
    spot: Option<String>,
    rr: Option<String>,
}

fn field(v: &Option<String>) -> Option<&str> {
    v.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

impl MarketSeries {
    pub fn new(dates: Vec<NaiveDate>, spot: Vec<f64>, rr: Vec<f64>) -> Result<Self> {
        if dates.len() != spot.len() || dates.len() != rr.len() {
            return Err(Error::Inconsistent(format!(
                "series lengths differ: {} dates, {} spots, {} risk reversals",
                dates.len(),
                spot.len(),
                rr.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Inconsistent(format!("dates not strictly increasing at {}", w[1])));
        }
        for &s in &spot {
            check("spot", s, s > 0.0, "must be > 0")?;
        }
        for &r in &rr {
            check("rr", r, true, "must be finite")?;
        }
        Ok(Self { dates, spot, rr })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Reads `date,spot,rr` CSV with ISO dates and the risk reversal in
    /// percentage points. Rows with a missing or non-numeric field are
    /// dropped and counted; a malformed date is an error.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<LoadedSeries> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
        for name in ["date", "spot", "rr"] {
            if !headers.iter().any(|h| h == name) {
                return Err(Error::Io(format!("missing column `{name}` in header")));
            }
        }
        let (mut dates, mut spot, mut rr) = (Vec::new(), Vec::new(), Vec::new());
        let mut dropped = 0;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let row: Row = rec.deserialize(Some(&headers)).map_err(|e| Error::Io(e.to_string()))?;
            let (Some(d), Some(s), Some(r)) = (field(&row.date), field(&row.spot), field(&row.rr)) else {
                dropped += 1;
                continue;
            };
            let (Ok(s), Ok(r)) = (s.parse::<f64>(), r.parse::<f64>()) else {
                dropped += 1;
                continue;
            };
            if !(s.is_finite() && r.is_finite()) {
                dropped += 1;
                continue;
            }
            let d = NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| Error::Io(format!("row {}: bad date `{d}`: {e}", line + 2)))?;
            dates.push(d);
            spot.push(s);
            rr.push(r / 100.0);
        }
        Ok(LoadedSeries {
            series: Self::new(dates, spot, rr)?,
            dropped,
        })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<LoadedSeries> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrBetaEstimate {
    pub beta_rr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub corr: f64,
    pub n: usize,
    /// Standard error of the slope.
    pub std_error: f64,
}

/// Sufficient statistics for a univariate regression.
#[derive(Debug, Clone, Copy, Default)]
struct RegressionSums {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
    yy: f64,
}

impl RegressionSums {
    fn fit(&self) -> Result<RrBetaEstimate> {
        let n = self.n;
        if n < MIN_OBSERVATIONS as f64 {
            return Err(Error::InsufficientData(format!(
                "{n} observations, at least {MIN_OBSERVATIONS} required"
            )));
        }
        let sxx = self.xx - self.x * self.x / n;
        let sxy = self.xy - self.x * self.y / n;
        let syy = self.yy - self.y * self.y / n;
        regression_from_centered(n, self.x / n, self.y / n, sxx, sxy, syy)
    }
}

fn regression_from_centered(n: f64, mx: f64, my: f64, sxx: f64, sxy: f64, syy: f64) -> Result<RrBetaEstimate> {
    // roundoff-level spread around a constant counts as zero variance
    if !(sxx > f64::EPSILON * n * mx * mx) {
        return Err(Error::InsufficientData("regressor has zero variance".into()));
    }
    let beta = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    let ssr = (syy - beta * sxy).max(0.0);
    Ok(RrBetaEstimate {
        beta_rr: beta,
        intercept: my - beta * mx,
        r_squared: r2,
        corr: r2.sqrt().copysign(beta),
        n: n as usize,
        std_error: (ssr / (n - 2.0) / sxx).sqrt(),
    })
}

/// Ordinary least squares of `y` on `x` with an intercept, two-pass.
pub fn ols(x: &[f64], y: &[f64]) -> Result<RrBetaEstimate> {
    if x.len() != y.len() {
        return Err(Error::Inconsistent(format!("{} regressors vs {} responses", x.len(), y.len())));
    }
    let n = x.len();
    if n < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData(format!(
            "{n} observations, at least {MIN_OBSERVATIONS} required"
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    regression_from_centered(n as f64, mx, my, sxx, sxy, syy)
}

/// Regresses daily risk reversal changes on daily spot log returns.
pub fn estimate_rr_beta(series: &MarketSeries) -> Result<RrBetaEstimate> {
    let x: Vec<f64> = series.spot.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let y: Vec<f64> = series.rr.windows(2).map(|w| w[1] - w[0]).collect();
    ols(&x, &y)
}

/// Model 25-delta risk reversal (call minus put vol) at `tau`.
pub fn model_risk_reversal(slice: &VanillaSlice, conv: FxConventions) -> Result<f64> {
    let (_, vols) = model_pillars(slice, conv)?;
    Ok(vols[2] - vols[0])
}

/// `k(τ) = ∂RR(τ)/∂ρ₀` by central difference, holding total `v₀`, `ρ_a`
/// and every other parameter fixed. The bump is shrunk to stay inside
/// `[ρ̄ - η, ρ̄ + η]`.
pub fn model_k_tau_params(
    params: &ModelParams,
    spot: f64,
    tau: f64,
    bump: f64,
    conv: FxConventions,
    quad: &QuadratureConfig,
) -> Result<f64> {
    params.validate()?;
    check("bump", bump, bump > 0.0, "must be > 0")?;
    let nat = params.to_natural();
    let room = params.eta - (nat.rho_0 - params.rho_bar).abs();
    if !(room > 0.0) {
        return Err(Error::Domain(format!(
            "rho_0 = {} leaves no room inside [rho_bar - eta, rho_bar + eta]",
            nat.rho_0
        )));
    }
    let h = bump.min(0.999 * room);
    let rr_at = |rho_0: f64| -> Result<f64> {
        let p = to_raw(&crate::model::NaturalParams { rho_0, ..nat }, params.rho_bar)?;
        model_risk_reversal(&VanillaSlice::new(&p, spot, tau, quad)?, conv)
    };
    Ok((rr_at(nat.rho_0 + h)? - rr_at(nat.rho_0 - h)?) / (2.0 * h))
}

/// `k(τ)` for parameters calibrated to `quote` with fixed `beta` and `eta`.
#[allow(clippy::too_many_arguments)]
pub fn model_k_tau(
    quote: &SmileQuote,
    spot: f64,
    beta: f64,
    eta: f64,
    tau: f64,
    bump: f64,
    r: f64,
    q: f64,
    cfg: &CalibrationConfig,
) -> Result<f64> {
    let params = calibrate_with(quote, spot, beta, eta, r, q, None, cfg)?.params;
    model_k_tau_params(&params, spot, tau, bump, cfg.conventions, &cfg.quadrature)
}

/// `β_rr = k α η² / θ`.
pub fn model_rr_beta(k_tau: f64, alpha: f64, eta: f64, theta: f64) -> Result<f64> {
    check("theta", theta, theta > 0.0, "must be > 0")?;
    Ok(k_tau * alpha * eta * eta / theta)
}

/// `η = sqrt(θ β_rr / (k α))`, the inverse of [`model_rr_beta`].
pub fn estimate_eta(beta_rr_target: f64, k_tau: f64, alpha: f64, theta: f64) -> Result<f64> {
    check("beta_rr", beta_rr_target, beta_rr_target >= 0.0, "must be >= 0")?;
    check("k_tau", k_tau, k_tau > 0.0, "must be > 0")?;
    check("alpha", alpha, alpha > 0.0, "must be > 0")?;
    check("theta", theta, theta > 0.0, "must be > 0")?;
    Ok((theta * beta_rr_target / (k_tau * alpha)).sqrt())
}

/// Reprices the model risk reversal at the end of every simulated day and
/// accumulates regression sums of its change on the day's log return.
struct RrObserver<'a> {
    family: &'a StateFamily,
    conv: FxConventions,
    substeps: usize,
    rr0: f64,
}

#[derive(Default)]
struct RrState {
    sums: RegressionSums,
    last_rr: f64,
    day_start: f64,
    failed: bool,
}

impl PathObserver for RrObserver<'_> {
    type State = RrState;

    fn outputs(&self) -> usize {
        7
    }

    fn block(&self) -> usize {
        1
    }

    fn start(&self) -> RrState {
        RrState {
            last_rr: self.rr0,
            day_start: f64::NAN,
            ..Default::default()
        }
    }

    fn step(&self, s: &mut RrState, v: &StepView) {
        if v.index.is_multiple_of(self.substeps) {
            s.day_start = v.log_s0;
        }
        if !(v.index + 1).is_multiple_of(self.substeps) || s.failed {
            return;
        }
        let rr = self
            .family
            .slice(v.v1_plus, v.v1_minus)
            .and_then(|slice| model_risk_reversal(&slice, self.conv));
        let Ok(rr) = rr else {
            s.failed = true;
            return;
        };
        let (x, y) = (v.log_s1 - s.day_start, rr - s.last_rr);
        let t = &mut s.sums;
        t.n += 1.0;
        t.x += x;
        t.y += y;
        t.xx += x * x;
        t.xy += x * y;
        t.yy += y * y;
        s.last_rr = rr;
    }

    fn finish(&self, s: RrState, _: &PathState, out: &mut [f64]) {
        let t = s.sums;
        out.copy_from_slice(&[t.n, t.x, t.y, t.xx, t.xy, t.yy, s.failed as u8 as f64]);
    }
}

/// Simulates `horizon_days` business days (1/252 year each), recomputes
/// the `quote.tenor` model risk reversal by full Fourier repricing at every
/// simulated state, and regresses its daily changes on daily log returns.
pub fn mc_rr_beta(
    params: &ModelParams,
    quote: &SmileQuote,
    spot: f64,
    cfg: &McConfig,
    horizon_days: usize,
    conv: FxConventions,
    quad: &QuadratureConfig,
) -> Result<RrBetaEstimate> {
    if horizon_days < 2 {
        return Err(invalid("horizon_days", "must be >= 2"));
    }
    let day = 1.0 / 252.0;
    let horizon = horizon_days as f64 * day;
    let substeps = effective_steps(params, cfg, day).max(1);
    let family = StateFamily::new(params, spot, quote.tenor, quad, 0.05 * params.theta().min(params.v0()))?;
    let rr0 = model_risk_reversal(&family.slice(params.v0_plus, params.v0_minus)?, conv)?;
    let obs = RrObserver {
        family: &family,
        conv,
        substeps,
        rr0,
    };
    let m = evolve_paths_with_steps(params, spot, horizon, horizon_days * substeps, cfg, &obs)?;
    if m.mean(6) > 0.0 {
        return Err(Error::MonteCarlo(format!(
            "risk reversal repricing failed on {:.3}% of paths",
            100.0 * m.mean(6)
        )));
    }
    let paths = m.count() as f64;
    let sums = RegressionSums {
        n: m.mean(0) * paths,
        x: m.mean(1) * paths,
        y: m.mean(2) * paths,
        xx: m.mean(3) * paths,
        xy: m.mean(4) * paths,
        yy: m.mean(5) * paths,
    };
    sums.fit()
}
