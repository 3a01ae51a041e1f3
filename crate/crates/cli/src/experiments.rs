use corrheston::analytics::{estimate_eta, estimate_rr_beta, mc_rr_beta, model_k_tau_params, model_rr_beta, MarketSeries};
use corrheston::blackscholes::{forward, OptionSide, SmileQuote};
use corrheston::calibration::{calibrate_with, CalibrationConfig, CalibrationResult};
use corrheston::exotics::{bs_one_touch_barrier, price_barriers, vol_swap_strikes, BarrierKind, BarrierProduct, VolSwapSpec};
use corrheston::fourier::VanillaSlice;
use corrheston::ModelParams;

use crate::config::{config_error, positive_list, Config};
use crate::output::{Cell, RowSink};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Smile,
    CalibSweep,
    OneTouchSweep,
    KnockoutSweep,
    VolswapSweep,
    RrBetaModel,
    RrBetaEmpirical,
    KTau,
}

pub const ALL: [Experiment; 8] = [
    Experiment::Smile,
    Experiment::CalibSweep,
    Experiment::OneTouchSweep,
    Experiment::KnockoutSweep,
    Experiment::VolswapSweep,
    Experiment::RrBetaModel,
    Experiment::RrBetaEmpirical,
    Experiment::KTau,
];

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Smile => "smile",
            Experiment::CalibSweep => "calib-sweep",
            Experiment::OneTouchSweep => "one-touch-sweep",
            Experiment::KnockoutSweep => "knockout-sweep",
            Experiment::VolswapSweep => "volswap-sweep",
            Experiment::RrBetaModel => "rr-beta-model",
            Experiment::RrBetaEmpirical => "rr-beta-empirical",
            Experiment::KTau => "k-tau",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::Smile => "implied vol smile across strikes for each eta, explicit parameters",
            Experiment::CalibSweep => "calibrated theta, alpha, rho_bar and Feller ratio across an eta grid",
            Experiment::OneTouchSweep => "one touch prices minus Heston prices across constant-vol price barriers",
            Experiment::KnockoutSweep => "OTM knockout prices minus Heston prices across the same barrier grid",
            Experiment::VolswapSweep => "daily-fixing volatility swap fair strike across an eta grid",
            Experiment::RrBetaModel => "model k(tau) and risk reversal beta by tenor, optional MC regression check",
            Experiment::RrBetaEmpirical => "risk reversal beta regression on a date,spot,rr CSV",
            Experiment::KTau => "risk reversal slope in initial correlation by tenor, explicit or calibrated",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        ALL.into_iter().find(|e| e.name() == name)
    }

    pub fn run(self, cfg: &Config, out: &std::path::Path) -> Result<usize, CliError> {
        cfg.validate_common()?;
        match self {
            Experiment::Smile => smile(cfg, out),
            Experiment::CalibSweep => calib_sweep(cfg, out),
            Experiment::OneTouchSweep => barrier_sweep(cfg, out, false),
            Experiment::KnockoutSweep => barrier_sweep(cfg, out, true),
            Experiment::VolswapSweep => volswap_sweep(cfg, out),
            Experiment::RrBetaModel => rr_beta_model(cfg, out),
            Experiment::RrBetaEmpirical => rr_beta_empirical(cfg, out),
            Experiment::KTau => k_tau(cfg, out),
        }
    }
}

/// Runs `body`; on error writes the failure marker and passes the error on.
fn guarded(sink: &mut RowSink, body: impl FnOnce(&mut RowSink) -> Result<(), CliError>) -> Result<usize, CliError> {
    match body(sink) {
        Ok(()) => Ok(sink.rows),
        Err(e) => {
            sink.fail(&e)?;
            Err(e)
        }
    }
}

fn calib_cfg(cfg: &Config) -> CalibrationConfig {
    CalibrationConfig {
        conventions: cfg.conventions,
        quadrature: cfg.quadrature,
        ..Default::default()
    }
}

fn calibrate(cfg: &Config, quote: &SmileQuote, eta: f64) -> Result<CalibrationResult, CliError> {
    let m = &cfg.market;
    calibrate_with(quote, m.spot, cfg.model.beta, eta, m.r, m.q, None, &calib_cfg(cfg)).map_err(CliError::from)
}

fn default_strikes(spot: f64) -> Vec<f64> {
    (0..=16).map(|i| spot * (0.8 + 0.025 * i as f64)).collect()
}

fn smile(cfg: &Config, out: &std::path::Path) -> Result<usize, CliError> {
    let etas = cfg.etas()?;
    let strikes = cfg.sweep.strikes.clone().unwrap_or_else(|| default_strikes(cfg.market.spot));
    positive_list("sweep.strikes", &strikes)?;
    let expiry = cfg.sweep.expiry.or(cfg.quote.map(|q| q.tenor)).unwrap_or(0.25);
    positive_list("sweep.expiry", &[expiry])?;
    let mut sink = RowSink::create(out, &["eta", "strike", "expiry", "implied_vol", "call_price"])?;
    guarded(&mut sink, |sink| {
        for &eta in &etas {
            let p = cfg.explicit_params(eta)?;
            let slice = VanillaSlice::new(&p, cfg.market.spot, expiry, &cfg.quadrature)?;
            for &k in &strikes {
                let vol = slice.implied_vol(k)?;
                let call = slice.price(k, OptionSide::Call)?;
                sink.row(vec![eta.into(), k.into(), expiry.into(), vol.into(), call.into()])?;
            }
        }
        Ok(())
    })
}

fn calib_sweep(cfg: &Config, out: &std::path::Path) -> Result<usize, CliError> {
    let quote = cfg.quote()?;
    let etas = cfg.etas()?;
    let mut sink = RowSink::create(
        out,
        &["eta", "theta", "alpha", "rho_bar", "feller_ratio", "max_residual", "iterations"],
    )?;
    guarded(&mut sink, |sink| {
        for &eta in &etas {
            let r = calibrate(cfg, &quote, eta)?;
            sink.row(vec![
                eta.into(),
                r.params.theta().into(),
                r.params.alpha.into(),
                r.params.rho_bar.into(),
                r.feller_ratio.into(),
                r.max_residual().into(),
                r.iterations.into(),
            ])?;
        }
        Ok(())
    })
}

/// Calibrates the Heston model first, then each eta in order, stopping at
/// the first failure. Returns the models that calibrated and the failure.
type Calibrated = (Vec<(f64, ModelParams)>, Option<CliError>);

fn calibrate_grid(cfg: &Config, quote: &SmileQuote, etas: &[f64]) -> Result<Calibrated, CliError> {
    let heston = calibrate(cfg, quote, 0.0)?.params;
    let mut models = vec![(0.0, heston)];
    for &eta in etas {
        if eta == 0.0 {
            continue;
        }
        match calibrate(cfg, quote, eta) {
            Ok(r) => models.push((eta, r.params)),
            Err(e) => return Ok((models, Some(e))),
        }
    }
    Ok((models, None))
}

fn sides(cfg: &Config) -> Result<Vec<bool>, CliError> {
    let names = cfg.sweep.sides.clone().unwrap_or_else(|| vec!["down".into(), "up".into()]);
    if names.is_empty() {
        return Err(config_error("sweep.sides is empty"));
    }
    names
        .iter()
        .map(|s| match s.as_str() {
            "up" => Ok(true),
            "down" => Ok(false),
            other => Err(config_error(format!("unknown barrier side `{other}`"))),
        })
        .collect()
}

fn barrier_sweep(cfg: &Config, out: &std::path::Path, knockout: bool) -> Result<usize, CliError> {
    let quote = cfg.quote()?;
    let etas = cfg.etas()?;
    let sides = sides(cfg)?;
    let bs_prices = cfg
        .sweep
        .bs_prices
        .clone()
        .unwrap_or_else(|| (1..=9).map(|i| i as f64 / 10.0).collect());
    positive_list("sweep.bs_prices", &bs_prices)?;
    let m = cfg.market;
    let expiry = quote.tenor;
    let strike = cfg.sweep.strike.unwrap_or_else(|| forward(m.spot, expiry, m.r, m.q));
    let mut grid = Vec::new();
    for &up in &sides {
        for &target in &bs_prices {
            let barrier = bs_one_touch_barrier(target, m.spot, quote.atm_vol, expiry, m.r, m.q, up)?;
            let product = if !knockout {
                BarrierProduct::one_touch(barrier, expiry)?
            } else if up {
                BarrierProduct::knockout(BarrierKind::UpAndOutPut, barrier, strike, expiry)?
            } else {
                BarrierProduct::knockout(BarrierKind::DownAndOutCall, barrier, strike, expiry)?
            };
            grid.push((up, target, product));
        }
    }
    let mut header = vec!["eta", "side", "bs_price", "barrier"];
    if knockout {
        header.extend(["kind", "strike"]);
    }
    header.extend(["price", "price_se", "heston_price", "heston_se", "difference", "difference_se"]);
    if knockout {
        header.push("difference_bp");
    }
    let mut sink = RowSink::create(out, &header)?;
    guarded(&mut sink, |sink| {
        let (models, failure) = calibrate_grid(cfg, &quote, &etas)?;
        let params: Vec<ModelParams> = models.iter().map(|m| m.1).collect();
        let products: Vec<BarrierProduct> = grid.iter().map(|g| g.2).collect();
        let batch = price_barriers(&products, &params, m.spot, &cfg.mc, &cfg.quadrature)?;
        for &eta in &etas {
            let Some(i) = models.iter().position(|x| x.0 == eta) else {
                continue;
            };
            for (j, (up, target, product)) in grid.iter().enumerate() {
                let price = batch.price(i, j);
                let heston = batch.price(0, j);
                let diff = batch.difference(i, 0, j);
                let mut row: Vec<Cell> = vec![
                    eta.into(),
                    if *up { "up" } else { "down" }.into(),
                    (*target).into(),
                    product.barrier.into(),
                ];
                if knockout {
                    let kind = if *up { "up-and-out-put" } else { "down-and-out-call" };
                    row.extend([kind.into(), product.strike.into()]);
                }
                row.extend([
                    price.value.into(),
                    price.std_error.into(),
                    heston.value.into(),
                    heston.std_error.into(),
                    diff.value.into(),
                    diff.std_error.into(),
                ]);
                if knockout {
                    row.push((1e4 * diff.value / m.spot).into());
                }
                sink.row(row)?;
            }
        }
        failure.map_or(Ok(()), Err)
    })
}

fn volswap_sweep(cfg: &Config, out: &std::path::Path) -> Result<usize, CliError> {
    let quote = cfg.quote()?;
    let etas = cfg.etas()?;
    let expiry = cfg.sweep.expiry.unwrap_or(quote.tenor);
    let spec = VolSwapSpec::new(expiry, cfg.sweep.fixings_per_year.unwrap_or(250.0))?;
    let mut sink = RowSink::create(
        out,
        &[
            "eta",
            "num_returns",
            "fair_vol",
            "fair_vol_se",
            "fair_variance",
            "fair_variance_se",
            "difference",
            "difference_se",
        ],
    )?;
    guarded(&mut sink, |sink| {
        let (models, failure) = calibrate_grid(cfg, &quote, &etas)?;
        let params: Vec<ModelParams> = models.iter().map(|m| m.1).collect();
        let batch = vol_swap_strikes(&spec, cfg.market.spot, &params, &cfg.mc)?;
        for &eta in &etas {
            let Some(i) = models.iter().position(|x| x.0 == eta) else {
                continue;
            };
            let (vol, var, diff) = (batch.vol(i), batch.variance(i), batch.vol_difference(i, 0));
            sink.row(vec![
                eta.into(),
                spec.num_returns.into(),
                vol.value.into(),
                vol.std_error.into(),
                var.value.into(),
                var.std_error.into(),
                diff.value.into(),
                diff.std_error.into(),
            ])?;
        }
        failure.map_or(Ok(()), Err)
    })
}

fn tenors(cfg: &Config) -> Result<Vec<f64>, CliError> {
    let t = cfg.sweep.tenors.clone().unwrap_or_else(|| vec![1.0 / 12.0, 0.25, 0.5, 1.0]);
    positive_list("sweep.tenors", &t)?;
    Ok(t)
}

fn bump(cfg: &Config) -> Result<f64, CliError> {
    let b = cfg.sweep.bump.unwrap_or(0.01);
    positive_list("sweep.bump", &[b])?;
    Ok(b)
}

fn rr_beta_model(cfg: &Config, out: &std::path::Path) -> Result<usize, CliError> {
    let base = cfg.quote()?;
    let etas = cfg.etas()?;
    let tenors = tenors(cfg)?;
    let bump = bump(cfg)?;
    let horizon = cfg.sweep.horizon_days.unwrap_or(0);
    let mut sink = RowSink::create(
        out,
        &["eta", "tenor", "theta", "alpha", "rho_bar", "k_tau", "beta_rr", "mc_beta_rr", "mc_std_error"],
    )?;
    guarded(&mut sink, |sink| {
        for &eta in &etas {
            for &tenor in &tenors {
                let quote = SmileQuote { tenor, ..base };
                let p = calibrate(cfg, &quote, eta)?.params;
                let (k, beta) = if eta > 0.0 {
                    let k = model_k_tau_params(&p, cfg.market.spot, tenor, bump, cfg.conventions, &cfg.quadrature)?;
                    (Some(k), model_rr_beta(k, p.alpha, eta, p.theta())?)
                } else {
                    (None, 0.0)
                };
                let mc = if horizon > 0 {
                    Some(mc_rr_beta(&p, &quote, cfg.market.spot, &cfg.mc, horizon, cfg.conventions, &cfg.quadrature)?)
                } else {
                    None
                };
                sink.row(vec![
                    eta.into(),
                    tenor.into(),
                    p.theta().into(),
                    p.alpha.into(),
                    p.rho_bar.into(),
                    k.into(),
                    beta.into(),
                    mc.map(|e| e.beta_rr).into(),
                    mc.map(|e| e.std_error).into(),
                ])?;
            }
        }
        Ok(())
    })
}

fn rr_beta_empirical(cfg: &Config, out: &std::path::Path) -> Result<usize, CliError> {
    let path = cfg.sweep.data.as_ref().ok_or_else(|| config_error("sweep.data is required"))?;
    let mut sink = RowSink::create(
        out,
        &["n", "dropped", "beta_rr", "intercept", "r_squared", "corr", "std_error", "eta_estimate"],
    )?;
    guarded(&mut sink, |sink| {
        let loaded = MarketSeries::from_csv_path(path)?;
        let e = estimate_rr_beta(&loaded.series)?;
        let eta = match (cfg.sweep.k_tau, cfg.model.alpha, cfg.model.theta) {
            (Some(k), Some(a), Some(t)) => Some(estimate_eta(e.beta_rr.max(0.0), k, a, t)?),
            _ => None,
        };
        sink.row(vec![
            e.n.into(),
            loaded.dropped.into(),
            e.beta_rr.into(),
            e.intercept.into(),
            e.r_squared.into(),
            e.corr.into(),
            e.std_error.into(),
            eta.into(),
        ])
    })
}

fn k_tau(cfg: &Config, out: &std::path::Path) -> Result<usize, CliError> {
    let etas = cfg.etas()?;
    let tenors = tenors(cfg)?;
    let bump = bump(cfg)?;
    let explicit = cfg.has_explicit_params();
    let base = if explicit { None } else { Some(cfg.quote()?) };
    let mut sink = RowSink::create(
        out,
        &["eta", "tenor", "theta", "alpha", "rho_bar", "k_tau", "k_tau_half_bump", "beta_rr"],
    )?;
    guarded(&mut sink, |sink| {
        for &eta in &etas {
            for &tenor in &tenors {
                let p = match base {
                    None => cfg.explicit_params(eta)?,
                    Some(q) => calibrate(cfg, &SmileQuote { tenor, ..q }, eta)?.params,
                };
                let s = cfg.market.spot;
                let k = model_k_tau_params(&p, s, tenor, bump, cfg.conventions, &cfg.quadrature)?;
                let k_half = model_k_tau_params(&p, s, tenor, 0.5 * bump, cfg.conventions, &cfg.quadrature)?;
                let beta = model_rr_beta(k, p.alpha, eta, p.theta())?;
                sink.row(vec![
                    eta.into(),
                    tenor.into(),
                    p.theta().into(),
                    p.alpha.into(),
                    p.rho_bar.into(),
                    k.into(),
                    k_half.into(),
                    beta.into(),
                ])?;
            }
        }
        Ok(())
    })
}
