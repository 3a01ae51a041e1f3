//! Single-tenor calibration of `(θ = v₀, α, ρ̄ = ρ_a = ρ_0)` to an
//! ATM / 25-delta risk reversal / 25-delta butterfly quote, with `β` and `η`
//! held fixed.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::blackscholes::{
    self, bs_delta, quote_strikes, smile_vols, DeltaConvention, FxConventions, OptionSide,
    SmileQuote,
};
use crate::error::{check, Error, Result};
use crate::fourier::{QuadratureConfig, VanillaSlice};
use crate::model::ModelParams;

const THETA_BOUNDS: (f64, f64) = (1e-6, 4.0);
const ALPHA_BOUNDS: (f64, f64) = (1e-4, 5.0);
const RHO_MARGIN: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub conventions: FxConventions,
    pub quadrature: QuadratureConfig,
    /// Max-norm of the vol residuals accepted as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            conventions: FxConventions::default(),
            quadrature: QuadratureConfig::default(),
            tolerance: 1e-9,
            max_iterations: 100,
        }
    }
}

/// Initial guess `(θ, α, ρ̄)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGuess {
    pub theta: f64,
    pub alpha: f64,
    pub rho_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: ModelParams,
    /// Model minus market vol at (25Δ put, ATM, 25Δ call).
    pub residuals: [f64; 3],
    pub iterations: usize,
    pub feller_ratio: f64,
    /// Strikes the residuals were measured at.
    pub strikes: [f64; 3],
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

pub fn feller_ratio(params: &ModelParams) -> f64 {
    params.feller_ratio()
}

fn rho_bounds(eta: f64) -> (f64, f64) {
    (-(1.0 - eta) + RHO_MARGIN, (1.0 - eta) - RHO_MARGIN)
}

fn project(x: Vector3<f64>, eta: f64) -> Vector3<f64> {
    let (rlo, rhi) = rho_bounds(eta);
    Vector3::new(
        x[0].clamp(THETA_BOUNDS.0, THETA_BOUNDS.1),
        x[1].clamp(ALPHA_BOUNDS.0, ALPHA_BOUNDS.1),
        x[2].clamp(rlo, rhi),
    )
}

/// Heuristic starting point.
pub fn initial_guess(quote: &SmileQuote, beta: f64, eta: f64) -> CalibrationGuess {
    let (rlo, rhi) = rho_bounds(eta);
    CalibrationGuess {
        theta: quote.atm_vol * quote.atm_vol,
        alpha: (8.0 * quote.bf25 * beta.sqrt() / quote.tenor.sqrt()).clamp(0.05, 2.0),
        rho_bar: (25.0 * quote.rr25).clamp(rlo.max(-0.9), rhi.min(0.9)),
    }
}

struct Problem<'a> {
    spot: f64,
    beta: f64,
    eta: f64,
    r: f64,
    q: f64,
    tau: f64,
    strikes: [f64; 3],
    targets: [f64; 3],
    cfg: &'a CalibrationConfig,
}

impl Problem<'_> {
    fn params(&self, x: &Vector3<f64>) -> Result<ModelParams> {
        ModelParams::centered(x[0], x[0], x[1], self.beta, x[2], self.eta, self.r, self.q)
    }

    fn residuals(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let p = self.params(x)?;
        let slice = VanillaSlice::new(&p, self.spot, self.tau, &self.cfg.quadrature)?;
        let mut out = Vector3::zeros();
        for i in 0..3 {
            out[i] = slice.implied_vol(self.strikes[i])? - self.targets[i];
        }
        Ok(out)
    }

    fn jacobian(&self, x: &Vector3<f64>, r0: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let mut jac = Matrix3::zeros();
        let (rlo, rhi) = rho_bounds(self.eta);
        let upper = [THETA_BOUNDS.1, ALPHA_BOUNDS.1, rhi];
        let lower = [THETA_BOUNDS.0, ALPHA_BOUNDS.0, rlo];
        for j in 0..3 {
            let scale = if j == 2 { 1.0 } else { x[j].abs() };
            let mut h = FD_STEP * scale.max(1e-3);
            // step away from an active bound
            if x[j] + h > upper[j] {
                h = -h;
            }
            let mut xp = *x;
            xp[j] += h;
            xp[j] = xp[j].clamp(lower[j], upper[j]);
            let step = xp[j] - x[j];
            let rp = self.residuals(&xp)?;
            jac.set_column(j, &((rp - r0) / step));
        }
        Ok(jac)
    }

    /// Levenberg-Marquardt with projection onto the parameter box.
    fn solve(&self, start: Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>, usize)> {
        let mut x = project(start, self.eta);
        let mut r = self.residuals(&x)?;
        let mut cost = r.norm_squared();
        let mut lambda = 1e-3;
        for it in 0..self.cfg.max_iterations {
            if r.amax() <= self.cfg.tolerance {
                return Ok((x, r, it));
            }
            let jac = self.jacobian(&x, &r)?;
            let jtj = jac.transpose() * jac;
            let g = jac.transpose() * r;
            let mut accepted = false;
            for _ in 0..30 {
                let mut a = jtj;
                for k in 0..3 {
                    a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
                }
                let Some(delta) = a.lu().solve(&(-g)) else {
                    lambda *= 10.0;
                    continue;
                };
                let trial = project(x + delta, self.eta);
                let rt = match self.residuals(&trial) {
                    Ok(rt) => rt,
                    Err(_) => {
                        lambda *= 10.0;
                        continue;
                    }
                };
                let ct = rt.norm_squared();
                if ct < cost {
                    x = trial;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted {
                break;
            }
        }
        if r.amax() <= self.cfg.tolerance {
            return Ok((x, r, self.cfg.max_iterations));
        }
        Err(Error::CalibrationFailed {
            iterations: self.cfg.max_iterations,
            residuals: [r[0], r[1], r[2]],
        })
    }
}

/// Calibrates with default conventions and quadrature.
#[allow(clippy::too_many_arguments)]
pub fn calibrate(
    quote: &SmileQuote,
    spot: f64,
    beta: f64,
    eta: f64,
    r: f64,
    q: f64,
    init: Option<CalibrationGuess>,
) -> Result<CalibrationResult> {
    calibrate_with(quote, spot, beta, eta, r, q, init, &CalibrationConfig::default())
}

#[allow(clippy::too_many_arguments)]
pub fn calibrate_with(
    quote: &SmileQuote,
    spot: f64,
    beta: f64,
    eta: f64,
    r: f64,
    q: f64,
    init: Option<CalibrationGuess>,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    quote.validate()?;
    check("spot", spot, spot > 0.0, "must be > 0")?;
    check("beta", beta, beta > 0.0, "must be > 0")?;
    check("eta", eta, (0.0..0.9999).contains(&eta), "must be in [0, 1)")?;
    let (vp, va, vc) = smile_vols(quote)?;
    let guess = init.unwrap_or_else(|| initial_guess(quote, beta, eta));
    let mut problem = Problem {
        spot,
        beta,
        eta,
        r,
        q,
        tau: quote.tenor,
        strikes: quote_strikes(quote, spot, r, q, cfg.conventions)?,
        targets: [vp, va, vc],
        cfg,
    };
    let mut x = Vector3::new(guess.theta, guess.alpha, guess.rho_bar);
    let mut total_iterations = 0;
    // Strikes are pinned by the quote's vols; at convergence the model vols
    // equal those vols, so recomputing strikes from model deltas is a fixed
    // point. The outer loop confirms it.
    for _ in 0..3 {
        let (xs, res, its) = problem.solve(x)?;
        total_iterations += its;
        x = xs;
        let params = problem.params(&x)?;
        let slice = VanillaSlice::new(&params, spot, quote.tenor, &cfg.quadrature)?;
        let model_strikes = model_pillar_strikes_at_vols(
            &slice,
            [res[0] + vp, res[1] + va, res[2] + vc],
            cfg.conventions,
        )?;
        let moved = model_strikes
            .iter()
            .zip(problem.strikes.iter())
            .any(|(a, b)| (a - b).abs() > 1e-10 * b);
        if !moved {
            let mut warnings = Vec::new();
            let (rlo, rhi) = rho_bounds(eta);
            if (x[2] - rlo).abs() < 1e-9 || (x[2] - rhi).abs() < 1e-9 {
                warnings.push(format!("rho_bar pinned at its bound {}", x[2]));
            }
            return Ok(CalibrationResult {
                params,
                residuals: [res[0], res[1], res[2]],
                iterations: total_iterations,
                feller_ratio: params.feller_ratio(),
                strikes: problem.strikes,
                warnings,
            });
        }
        problem.strikes = model_strikes;
    }
    let r0 = problem.residuals(&x)?;
    Err(Error::CalibrationFailed {
        iterations: total_iterations,
        residuals: [r0[0], r0[1], r0[2]],
    })
}

/// Strikes whose deltas at the given pillar vols hit the quoting deltas.
fn model_pillar_strikes_at_vols(slice: &VanillaSlice, vols: [f64; 3], conv: FxConventions) -> Result<[f64; 3]> {
    let p = slice.params();
    let (s, t) = (slice.spot(), slice.tau());
    Ok([
        blackscholes::strike_from_delta(-0.25, s, vols[0], t, p.r, p.q, OptionSide::Put, conv.delta)?,
        blackscholes::atm_strike(s, vols[1], t, p.r, p.q, conv.atm),
        blackscholes::strike_from_delta(0.25, s, vols[2], t, p.r, p.q, OptionSide::Call, conv.delta)?,
    ])
}

/// Strike where the model smile's own Black-Scholes delta equals `delta`.
pub fn model_delta_strike(slice: &VanillaSlice, delta: f64, side: OptionSide, conv: DeltaConvention) -> Result<f64> {
    let p = slice.params();
    let (s, t) = (slice.spot(), slice.tau());
    let mut k = slice.forward();
    for _ in 0..100 {
        let vol = slice.implied_vol(k)?;
        let next = blackscholes::strike_from_delta(delta, s, vol, t, p.r, p.q, side, conv)?;
        if (next - k).abs() <= 1e-13 * k {
            debug_assert!((bs_delta(s, next, vol, t, p.r, p.q, side, conv) - delta).abs() < 1e-8);
            return Ok(next);
        }
        k = next;
    }
    Err(Error::NoSolution(format!("model {delta}-delta strike did not converge")))
}

/// Model 25-delta put, ATM and 25-delta call strikes together with the
/// model implied vols there.
pub fn model_pillars(slice: &VanillaSlice, conv: FxConventions) -> Result<([f64; 3], [f64; 3])> {
    let kp = model_delta_strike(slice, -0.25, OptionSide::Put, conv.delta)?;
    let kc = model_delta_strike(slice, 0.25, OptionSide::Call, conv.delta)?;
    let p = slice.params();
    let ka = match conv.atm {
        blackscholes::AtmConvention::Forward => slice.forward(),
        blackscholes::AtmConvention::DeltaNeutral => {
            let mut k = slice.forward();
            for _ in 0..100 {
                let vol = slice.implied_vol(k)?;
                let next = blackscholes::atm_strike(slice.spot(), vol, slice.tau(), p.r, p.q, conv.atm);
                if (next - k).abs() <= 1e-13 * k {
                    break;
                }
                k = next;
            }
            k
        }
    };
    let strikes = [kp, ka, kc];
    let vols = [slice.implied_vol(kp)?, slice.implied_vol(ka)?, slice.implied_vol(kc)?];
    Ok((strikes, vols))
}

/// The (ATM, RR25, BF25) quote the model itself produces at `tau`.
pub fn quote_from_model(
    params: &ModelParams,
    spot: f64,
    tau: f64,
    conv: FxConventions,
    quad: &QuadratureConfig,
) -> Result<SmileQuote> {
    let slice = VanillaSlice::new(params, spot, tau, quad)?;
    let (_, vols) = model_pillars(&slice, conv)?;
    Ok(SmileQuote::from_vols(tau, vols[0], vols[1], vols[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market() -> SmileQuote {
        SmileQuote {
            tenor: 0.25,
            atm_vol: 0.08,
            rr25: 0.01,
            bf25: 0.005,
        }
    }

    fn model_vols(res: &CalibrationResult, spot: f64) -> [f64; 3] {
        let slice = VanillaSlice::new(&res.params, spot, 0.25, &QuadratureConfig::default()).unwrap();
        res.strikes.map(|k| slice.implied_vol(k).unwrap())
    }

    #[test]
    fn feller_examples() {
        let p = ModelParams::centered(0.01, 0.01, 0.2, 2.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!((feller_ratio(&p) - 1.0).abs() < 1e-15);
        let p = ModelParams { alpha: 0.0, ..p };
        assert_eq!(feller_ratio(&p), 0.0);
    }

    #[test]
    fn heston_calibration_reproduces_quote() {
        let res = calibrate(&market(), 100.0, 2.0, 0.0, 0.0, 0.0, None).unwrap();
        let (vp, va, vc) = smile_vols(&market()).unwrap();
        let v = model_vols(&res, 100.0);
        for (m, t) in v.iter().zip([vp, va, vc]) {
            assert!((m - t).abs() < 1e-6);
        }
        assert!(res.max_residual() < 1e-6);
        assert_eq!(res.params.eta, 0.0);
        assert!(res.params.rho_bar > 0.0);
    }

    #[test]
    fn recovers_generating_parameters() {
        let truth = ModelParams::centered(0.01, 0.01, 0.25, 2.0, 0.15, 0.3, 0.0, 0.0).unwrap();
        let quote = quote_from_model(&truth, 100.0, 0.25, FxConventions::default(), &QuadratureConfig::default()).unwrap();
        let res = calibrate(&quote, 100.0, 2.0, 0.3, 0.0, 0.0, None).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(res.params.theta(), 0.01) < 1e-4, "{:?}", res.params);
        assert!(rel(res.params.alpha, 0.25) < 1e-4, "{:?}", res.params);
        assert!(rel(res.params.rho_bar, 0.15) < 1e-4, "{:?}", res.params);
    }

    #[test]
    fn alpha_falls_as_eta_rises() {
        let mut last = f64::INFINITY;
        let mut last_feller = f64::INFINITY;
        for eta in [0.0, 0.25, 0.5] {
            let res = calibrate(&market(), 100.0, 2.0, eta, 0.0, 0.0, None).unwrap();
            assert!(res.params.alpha < last);
            assert!(res.feller_ratio < last_feller);
            last = res.params.alpha;
            last_feller = res.feller_ratio;
        }
    }

    #[test]
    fn different_starts_agree() {
        let a = calibrate(&market(), 100.0, 2.0, 0.3, 0.0, 0.0, None).unwrap();
        let b = calibrate(
            &market(),
            100.0,
            2.0,
            0.3,
            0.0,
            0.0,
            Some(CalibrationGuess { theta: 0.004, alpha: 0.8, rho_bar: -0.2 }),
        )
        .unwrap();
        assert!((a.params.alpha - b.params.alpha).abs() < 1e-5);
        assert!((a.params.theta() - b.params.theta()).abs() < 1e-5);
        assert!((a.params.rho_bar - b.params.rho_bar).abs() < 1e-5);
    }

    #[test]
    fn unattainable_quote_fails() {
        // a huge risk reversal cannot be produced within the correlation box
        let q = SmileQuote { rr25: 0.12, bf25: 0.06, ..market() };
        let cfg = CalibrationConfig { max_iterations: 30, ..Default::default() };
        let err = calibrate_with(&q, 100.0, 2.0, 0.6, 0.0, 0.0, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::CalibrationFailed { .. } | Error::Accuracy(_)), "{err:?}");
    }

    #[test]
    fn model_quote_delta_strikes_hit_quarter_delta() {
        let p = ModelParams::centered(0.0064, 0.0064, 0.4, 2.0, 0.2, 0.3, 0.01, 0.0).unwrap();
        let slice = VanillaSlice::new(&p, 100.0, 0.5, &QuadratureConfig::default()).unwrap();
        let (k, v) = model_pillars(&slice, FxConventions::default()).unwrap();
        let d = bs_delta(100.0, k[2], v[2], 0.5, 0.01, 0.0, OptionSide::Call, DeltaConvention::Spot);
        assert!((d - 0.25).abs() < 1e-10);
        let d = bs_delta(100.0, k[0], v[0], 0.5, 0.01, 0.0, OptionSide::Put, DeltaConvention::Spot);
        assert!((d + 0.25).abs() < 1e-10);
    }
}
