//! Monte Carlo prices of one touches, out-of-the-money knockouts and
//! volatility swaps, and their differences to the Heston (`η = 0`) model
//! calibrated to the same quote.
//!
//! Barriers are monitored continuously through the log-space Brownian bridge:
//! each path carries its survival probability `Π(1 - p_i)` rather than a
//! sampled indicator. One touches use the European digital struck at the
//! barrier as a control variate, knockouts use the underlying vanilla. Both
//! control means come from the Fourier pricer and the coefficient is fitted
//! per run by regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blackscholes::{norm_cdf, OptionSide, SmileQuote};
use crate::calibration::{calibrate_with, CalibrationConfig};
use crate::error::{check, invalid, Error, Result};
use crate::fourier::{QuadratureConfig, VanillaSlice};
use crate::model::ModelParams;
use crate::montecarlo::{
    bridge_crossing_prob, effective_steps, evolve_common, McConfig, Moments, PathObserver, PathState, StepView,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierKind {
    OneTouch,
    DownAndOutCall,
    UpAndOutPut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierProduct {
    pub kind: BarrierKind,
    pub barrier: f64,
    /// Ignored for one touches.
    pub strike: f64,
    pub expiry: f64,
}

impl BarrierProduct {
    pub fn one_touch(barrier: f64, expiry: f64) -> Result<Self> {
        let p = Self {
            kind: BarrierKind::OneTouch,
            barrier,
            strike: f64::NAN,
            expiry,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn knockout(kind: BarrierKind, barrier: f64, strike: f64, expiry: f64) -> Result<Self> {
        let p = Self {
            kind,
            barrier,
            strike,
            expiry,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check("barrier", self.barrier, self.barrier > 0.0, "must be > 0")?;
        check("expiry", self.expiry, self.expiry > 0.0, "must be > 0")?;
        match self.kind {
            BarrierKind::OneTouch => Ok(()),
            BarrierKind::DownAndOutCall => check(
                "barrier",
                self.barrier,
                self.strike.is_finite() && self.barrier < self.strike,
                "down-and-out call needs barrier < strike",
            ),
            BarrierKind::UpAndOutPut => check(
                "barrier",
                self.barrier,
                self.strike.is_finite() && self.barrier > self.strike,
                "up-and-out put needs barrier > strike",
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolSwapSpec {
    pub expiry: f64,
    pub fixings_per_year: f64,
    pub num_returns: usize,
}

impl VolSwapSpec {
    /// Daily fixings: `round(fixings_per_year · expiry)` returns.
    pub fn new(expiry: f64, fixings_per_year: f64) -> Result<Self> {
        let spec = Self {
            expiry,
            fixings_per_year,
            num_returns: (fixings_per_year * expiry).round().max(1.0) as usize,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check("expiry", self.expiry, self.expiry > 0.0, "must be > 0")?;
        check(
            "fixings_per_year",
            self.fixings_per_year,
            self.fixings_per_year > 0.0,
            "must be > 0",
        )?;
        if self.num_returns == 0 {
            return Err(invalid("num_returns", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPrice {
    pub value: f64,
    pub std_error: f64,
    pub cv_beta: f64,
}

/// Regression control-variate estimate of `E[target]` where the controls
/// have known means. Targets and controls are linear combinations of
/// outputs from one moment block.
fn cv_estimate(m: &Moments, target: &[(usize, f64)], controls: &[(Vec<(usize, f64)>, f64)]) -> McPrice {
    let mean = |c: &[(usize, f64)]| c.iter().map(|&(i, w)| w * m.mean(i)).sum::<f64>();
    let cov = |a: &[(usize, f64)], b: &[(usize, f64)]| {
        a.iter()
            .flat_map(|&(i, wi)| b.iter().map(move |&(j, wj)| wi * wj * m.covariance(i, j)))
            .sum::<f64>()
    };
    let n = m.count() as f64;
    let var_t = cov(target, target);
    let k = controls.len();
    let scc = DMatrix::from_fn(k, k, |i, j| cov(&controls[i].0, &controls[j].0));
    let sct = DVector::from_fn(k, |i, _| cov(&controls[i].0, target));
    let beta = scc
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&sct))
        .unwrap_or_else(|| DVector::zeros(k));
    let shift: f64 = (0..k).map(|i| beta[i] * (mean(&controls[i].0) - controls[i].1)).sum();
    let explained = beta.dot(&sct);
    McPrice {
        value: mean(target) - shift,
        std_error: ((var_t - explained).max(0.0) / n).sqrt(),
        cv_beta: if k > 0 { beta[0] } else { 0.0 },
    }
}

/// One monitored leg of the barrier observer.
#[derive(Debug, Clone, Copy)]
struct Leg {
    kind: BarrierKind,
    log_barrier: f64,
    up: bool,
    barrier: f64,
    strike: f64,
}

struct BarrierObserver {
    legs: Vec<Leg>,
    bridge: bool,
}

impl PathObserver for BarrierObserver {
    type State = Vec<f64>;

    fn outputs(&self) -> usize {
        2 * self.legs.len()
    }

    fn block(&self) -> usize {
        2
    }

    fn start(&self) -> Vec<f64> {
        vec![1.0; self.legs.len()]
    }

    fn step(&self, surv: &mut Vec<f64>, v: &StepView) {
        for (s, leg) in surv.iter_mut().zip(&self.legs) {
            if *s == 0.0 {
                continue;
            }
            let lb = leg.log_barrier;
            let prod = (lb - v.log_s0) * (lb - v.log_s1);
            if prod <= 0.0 {
                *s = 0.0;
            } else if self.bridge && v.var_dt > 0.0 && 2.0 * prod < 40.0 * v.var_dt {
                *s *= 1.0 - bridge_crossing_prob(v.log_s0, v.log_s1, lb, v.var_dt);
            }
        }
    }

    fn finish(&self, surv: Vec<f64>, t: &PathState, out: &mut [f64]) {
        let s_t = t.log_spot.exp();
        for ((leg, s), o) in self.legs.iter().zip(surv).zip(out.chunks_exact_mut(2)) {
            match leg.kind {
                BarrierKind::OneTouch => {
                    let beyond = if leg.up { s_t >= leg.barrier } else { s_t <= leg.barrier };
                    o[0] = 1.0 - s;
                    o[1] = beyond as u8 as f64;
                }
                BarrierKind::DownAndOutCall => {
                    let payoff = (s_t - leg.strike).max(0.0);
                    o[0] = payoff * s;
                    o[1] = payoff;
                }
                BarrierKind::UpAndOutPut => {
                    let payoff = (leg.strike - s_t).max(0.0);
                    o[0] = payoff * s;
                    o[1] = payoff;
                }
            }
        }
    }
}

/// Many barrier products at one expiry priced on several models with
/// common random numbers.
#[derive(Debug, Clone)]
pub struct BarrierBatch {
    moments: Moments,
    products: Vec<BarrierProduct>,
    /// Undiscounted control means, `[model][product]`.
    control_means: Vec<Vec<f64>>,
    discounts: Vec<f64>,
    steps: usize,
}

impl BarrierBatch {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn products(&self) -> &[BarrierProduct] {
        &self.products
    }

    fn index(&self, model: usize, product: usize, which: usize) -> usize {
        let nm = self.control_means.len();
        product * 2 * nm + model * 2 + which
    }

    /// Control-variate price of `product` under `model`.
    pub fn price(&self, model: usize, product: usize) -> McPrice {
        let y = self.index(model, product, 0);
        let x = self.index(model, product, 1);
        let est = cv_estimate(
            &self.moments,
            &[(y, 1.0)],
            &[(vec![(x, 1.0)], self.control_means[model][product])],
        );
        self.finalize(model, product, est)
    }

    /// Price without the control variate.
    pub fn plain_price(&self, model: usize, product: usize) -> McPrice {
        let y = self.index(model, product, 0);
        let est = cv_estimate(&self.moments, &[(y, 1.0)], &[]);
        self.finalize(model, product, est)
    }

    /// `price(a) - price(b)` on common paths, with both models' controls.
    pub fn difference(&self, a: usize, b: usize, product: usize) -> McPrice {
        let da = self.discounts[a];
        let db = self.discounts[b];
        let target = [(self.index(a, product, 0), da), (self.index(b, product, 0), -db)];
        let controls = [
            (vec![(self.index(a, product, 1), 1.0)], self.control_means[a][product]),
            (vec![(self.index(b, product, 1), 1.0)], self.control_means[b][product]),
        ];
        cv_estimate(&self.moments, &target, &controls)
    }

    fn finalize(&self, model: usize, product: usize, est: McPrice) -> McPrice {
        let d = self.discounts[model];
        let mut value = d * est.value;
        if self.products[product].kind == BarrierKind::OneTouch {
            value = value.clamp(0.0, d);
        } else {
            value = value.max(0.0);
        }
        McPrice {
            value,
            std_error: d * est.std_error,
            cv_beta: est.cv_beta,
        }
    }
}

fn control_mean(slice: &VanillaSlice, product: &BarrierProduct, up: bool) -> Result<f64> {
    let discount = (-slice.params().r * slice.tau()).exp();
    match product.kind {
        BarrierKind::OneTouch => {
            let above = slice.prob_above(product.barrier)?;
            Ok(if up { above } else { 1.0 - above })
        }
        BarrierKind::DownAndOutCall => Ok(slice.price(product.strike, OptionSide::Call)? / discount),
        BarrierKind::UpAndOutPut => Ok(slice.price(product.strike, OptionSide::Put)? / discount),
    }
}

/// Prices every product under every model on one set of paths. All products
/// must share an expiry. The step count is the largest Feller-refined count
/// among the models so that paths stay coupled.
pub fn price_barriers(
    products: &[BarrierProduct],
    models: &[ModelParams],
    spot: f64,
    cfg: &McConfig,
    quad: &QuadratureConfig,
) -> Result<BarrierBatch> {
    let Some(first) = products.first() else {
        return Err(invalid("products", "at least one product required"));
    };
    let expiry = first.expiry;
    for p in products {
        p.validate()?;
        if p.expiry != expiry {
            return Err(invalid("expiry", "all products in a batch must share an expiry"));
        }
    }
    let steps = models
        .iter()
        .map(|m| effective_steps(m, cfg, expiry))
        .max()
        .ok_or_else(|| invalid("models", "at least one model required"))?;
    let legs: Vec<Leg> = products
        .iter()
        .map(|p| Leg {
            kind: p.kind,
            log_barrier: p.barrier.ln(),
            up: match p.kind {
                BarrierKind::OneTouch => p.barrier >= spot,
                BarrierKind::DownAndOutCall => false,
                BarrierKind::UpAndOutPut => true,
            },
            barrier: p.barrier,
            strike: p.strike,
        })
        .collect();
    let mut control_means = Vec::with_capacity(models.len());
    for m in models {
        let slice = VanillaSlice::new(m, spot, expiry, quad)?;
        control_means.push(
            products
                .iter()
                .zip(&legs)
                .map(|(p, l)| control_mean(&slice, p, l.up))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let observer = BarrierObserver {
        legs,
        bridge: cfg.bridge_enabled,
    };
    let moments = evolve_common(models, spot, expiry, steps, cfg, &observer)?;
    Ok(BarrierBatch {
        moments,
        products: products.to_vec(),
        control_means,
        discounts: models.iter().map(|m| (-m.r * expiry).exp()).collect(),
        steps,
    })
}

pub fn price_one_touch(
    product: &BarrierProduct,
    spot: f64,
    params: &ModelParams,
    cfg: &McConfig,
) -> Result<McPrice> {
    if product.kind != BarrierKind::OneTouch {
        return Err(invalid("kind", "expected a one touch"));
    }
    let batch = price_barriers(std::slice::from_ref(product), std::slice::from_ref(params), spot, cfg, &QuadratureConfig::default())?;
    Ok(batch.price(0, 0))
}

pub fn price_knockout(
    product: &BarrierProduct,
    spot: f64,
    params: &ModelParams,
    cfg: &McConfig,
) -> Result<McPrice> {
    if product.kind == BarrierKind::OneTouch {
        return Err(invalid("kind", "expected a knockout"));
    }
    let batch = price_barriers(std::slice::from_ref(product), std::slice::from_ref(params), spot, cfg, &QuadratureConfig::default())?;
    Ok(batch.price(0, 0))
}

struct VolSwapObserver {
    annualizer: f64,
}

impl PathObserver for VolSwapObserver {
    type State = ();
    fn outputs(&self) -> usize {
        2
    }
    fn start(&self) {}
    fn step(&self, _: &mut (), _: &StepView) {}
    fn finish(&self, _: (), t: &PathState, out: &mut [f64]) {
        let var = self.annualizer * t.sum_sq_returns;
        out[0] = var.sqrt();
        out[1] = var;
    }
}

/// Fair volatility and variance strikes under several models on common
/// paths, one MC step per fixing.
#[derive(Debug, Clone)]
pub struct VolSwapBatch {
    moments: Moments,
}

impl VolSwapBatch {
    pub fn vol(&self, model: usize) -> McPrice {
        cv_estimate(&self.moments, &[(2 * model, 1.0)], &[])
    }

    pub fn variance(&self, model: usize) -> McPrice {
        cv_estimate(&self.moments, &[(2 * model + 1, 1.0)], &[])
    }

    /// `vol(a) - vol(b)` with the common-path standard error.
    pub fn vol_difference(&self, a: usize, b: usize) -> McPrice {
        cv_estimate(&self.moments, &[(2 * a, 1.0), (2 * b, -1.0)], &[])
    }
}

pub fn vol_swap_strikes(spec: &VolSwapSpec, spot: f64, models: &[ModelParams], cfg: &McConfig) -> Result<VolSwapBatch> {
    spec.validate()?;
    let obs = VolSwapObserver {
        annualizer: spec.fixings_per_year / spec.num_returns as f64,
    };
    Ok(VolSwapBatch {
        moments: evolve_common(models, spot, spec.expiry, spec.num_returns, cfg, &obs)?,
    })
}

/// Fair strike `K = E[σ_r]` with `σ_r = sqrt(N_d / N · Σ R_i²)`.
pub fn price_vol_swap_strike(spec: &VolSwapSpec, spot: f64, params: &ModelParams, cfg: &McConfig) -> Result<McPrice> {
    Ok(vol_swap_strikes(spec, spot, std::slice::from_ref(params), cfg)?.vol(0))
}

/// Fair variance strike `E[σ_r²]` on the same fixing grid.
pub fn price_var_swap_strike(spec: &VolSwapSpec, spot: f64, params: &ModelParams, cfg: &McConfig) -> Result<McPrice> {
    Ok(vol_swap_strikes(spec, spot, std::slice::from_ref(params), cfg)?.variance(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Contract {
    Barrier(BarrierProduct),
    VolSwap(VolSwapSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonDifference {
    /// `price(η) - price(η = 0)` on common random numbers.
    pub difference: McPrice,
    pub price: McPrice,
    pub heston_price: McPrice,
    pub params: ModelParams,
    pub heston_params: ModelParams,
}

/// Calibrates the model at `eta` and the Heston model to the same quote and
/// prices `contract` under both on common paths.
#[allow(clippy::too_many_arguments)]
pub fn heston_difference(
    contract: &Contract,
    quote: &SmileQuote,
    spot: f64,
    beta: f64,
    eta: f64,
    r: f64,
    q: f64,
    cfg: &McConfig,
    calib: &CalibrationConfig,
) -> Result<HestonDifference> {
    let params = calibrate_with(quote, spot, beta, eta, r, q, None, calib)?.params;
    let heston_params = calibrate_with(quote, spot, beta, 0.0, r, q, None, calib)?.params;
    let models = [params, heston_params];
    match contract {
        Contract::Barrier(product) => {
            let batch = price_barriers(std::slice::from_ref(product), &models, spot, cfg, &calib.quadrature)?;
            Ok(HestonDifference {
                difference: batch.difference(0, 1, 0),
                price: batch.price(0, 0),
                heston_price: batch.price(1, 0),
                params,
                heston_params,
            })
        }
        Contract::VolSwap(spec) => {
            let batch = vol_swap_strikes(spec, spot, &models, cfg)?;
            Ok(HestonDifference {
                difference: batch.vol_difference(0, 1),
                price: batch.vol(0),
                heston_price: batch.vol(1),
                params,
                heston_params,
            })
        }
    }
}

/// Constant-volatility one touch paying 1 at expiry if the barrier is hit.
pub fn bs_one_touch_price(spot: f64, barrier: f64, vol: f64, tau: f64, r: f64, q: f64) -> Result<f64> {
    check("spot", spot, spot > 0.0, "must be > 0")?;
    check("barrier", barrier, barrier > 0.0, "must be > 0")?;
    check("vol", vol, vol > 0.0, "must be > 0")?;
    check("tau", tau, tau > 0.0, "must be > 0")?;
    let b = (barrier / spot).ln();
    let disc = (-r * tau).exp();
    if b == 0.0 {
        return Ok(disc);
    }
    let mu = r - q - 0.5 * vol * vol;
    let sd = vol * tau.sqrt();
    let refl = (2.0 * mu * b / (vol * vol)).exp();
    let prob = if b > 0.0 {
        norm_cdf((-b + mu * tau) / sd) + refl * norm_cdf((-b - mu * tau) / sd)
    } else {
        norm_cdf((b - mu * tau) / sd) + refl * norm_cdf((b + mu * tau) / sd)
    };
    Ok(disc * prob.clamp(0.0, 1.0))
}

/// Barrier on the given side of spot whose constant-vol one touch price is
/// `target`, found by bisection in log distance.
pub fn bs_one_touch_barrier(target: f64, spot: f64, vol: f64, tau: f64, r: f64, q: f64, up: bool) -> Result<f64> {
    let disc = (-r * tau).exp();
    if !(target > 0.0 && target < disc) {
        return Err(Error::NoSolution(format!(
            "one touch price {target} not attainable, must lie in (0, {disc})"
        )));
    }
    let sign = if up { 1.0 } else { -1.0 };
    let price_at = |d: f64| bs_one_touch_price(spot, spot * (sign * d).exp(), vol, tau, r, q);
    let (mut lo, mut hi) = (0.0, vol * tau.sqrt());
    while price_at(hi)? > target {
        hi *= 2.0;
        if hi > 50.0 {
            return Err(Error::NoSolution(format!("no barrier prices the one touch at {target}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if price_at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(spot * (sign * 0.5 * (lo + hi)).exp())
}
