//! Black-Scholes pricing, implied volatility and FX smile conventions.
//!
//! Conventions default to premium-excluded spot delta and an ATM strike at
//! the forward. Both are switchable through [`FxConventions`].

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{check, Error, Result};

/// Implied vol search bracket.
pub const VOL_MIN: f64 = 1e-6;
pub const VOL_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionSide {
    Call,
    Put,
}

impl OptionSide {
    pub fn sign(self) -> f64 {
        match self {
            OptionSide::Call => 1.0,
            OptionSide::Put => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaConvention {
    /// `e^{-qτ} N(d₁)`.
    #[default]
    Spot,
    /// `N(d₁)`.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtmConvention {
    /// ATM strike equals the forward.
    #[default]
    Forward,
    /// Delta-neutral straddle strike `F e^{σ²τ/2}`.
    DeltaNeutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FxConventions {
    #[serde(default)]
    pub delta: DeltaConvention,
    #[serde(default)]
    pub atm: AtmConvention,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanillaOption {
    pub strike: f64,
    pub expiry: f64,
    pub side: OptionSide,
}

impl VanillaOption {
    pub fn new(strike: f64, expiry: f64, side: OptionSide) -> Result<Self> {
        check("strike", strike, strike > 0.0, "must be > 0")?;
        check("expiry", expiry, expiry > 0.0, "must be > 0")?;
        Ok(Self { strike, expiry, side })
    }
}

/// ATM vol with 25-delta risk reversal and butterfly at one tenor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmileQuote {
    pub tenor: f64,
    pub atm_vol: f64,
    pub rr25: f64,
    pub bf25: f64,
}

impl SmileQuote {
    pub fn validate(&self) -> Result<()> {
        check("tenor", self.tenor, self.tenor > 0.0, "must be > 0")?;
        check("atm_vol", self.atm_vol, self.atm_vol > 0.0, "must be > 0")?;
        check("rr25", self.rr25, true, "must be finite")?;
        check("bf25", self.bf25, true, "must be finite")?;
        let wing = self.atm_vol + self.bf25 - 0.5 * self.rr25.abs();
        check("bf25", wing, wing > 0.0, "wing vols must be positive")?;
        Ok(())
    }

    /// Builds a quote from the three pillar vols.
    pub fn from_vols(tenor: f64, vol_25p: f64, vol_atm: f64, vol_25c: f64) -> Self {
        let (rr25, bf25) = rr_bf_from_vols(vol_25p, vol_atm, vol_25c);
        Self {
            tenor,
            atm_vol: vol_atm,
            rr25,
            bf25,
        }
    }
}

pub(crate) fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_inv(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

fn validate_inputs(spot: f64, strike: f64, tau: f64) -> Result<()> {
    check("spot", spot, spot > 0.0, "must be > 0")?;
    check("strike", strike, strike > 0.0, "must be > 0")?;
    check("tau", tau, tau >= 0.0, "must be >= 0")?;
    Ok(())
}

/// Undiscounted price on the forward (Black 76).
fn black(forward: f64, strike: f64, total_vol: f64, side: OptionSide) -> f64 {
    let w = side.sign();
    if total_vol <= 0.0 {
        return (w * (forward - strike)).max(0.0);
    }
    let d1 = (forward / strike).ln() / total_vol + 0.5 * total_vol;
    let d2 = d1 - total_vol;
    w * (forward * norm_cdf(w * d1) - strike * norm_cdf(w * d2))
}

pub fn forward(spot: f64, tau: f64, r: f64, q: f64) -> f64 {
    spot * ((r - q) * tau).exp()
}

pub fn bs_price(spot: f64, strike: f64, vol: f64, tau: f64, r: f64, q: f64, side: OptionSide) -> Result<f64> {
    validate_inputs(spot, strike, tau)?;
    check("vol", vol, vol >= 0.0, "must be >= 0")?;
    let f = forward(spot, tau, r, q);
    Ok((-r * tau).exp() * black(f, strike, vol * tau.sqrt(), side))
}

/// Vega `∂price/∂σ`.
pub fn bs_vega(spot: f64, strike: f64, vol: f64, tau: f64, r: f64, q: f64) -> f64 {
    let sd = vol * tau.sqrt();
    if sd <= 0.0 {
        return 0.0;
    }
    let f = forward(spot, tau, r, q);
    let d1 = (f / strike).ln() / sd + 0.5 * sd;
    (-r * tau).exp() * f * norm_pdf(d1) * tau.sqrt()
}

#[allow(clippy::too_many_arguments)]
pub fn bs_delta(
    spot: f64,
    strike: f64,
    vol: f64,
    tau: f64,
    r: f64,
    q: f64,
    side: OptionSide,
    convention: DeltaConvention,
) -> f64 {
    let w = side.sign();
    let sd = vol * tau.sqrt();
    let f = forward(spot, tau, r, q);
    let n = if sd <= 0.0 {
        if w * (f - strike) > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let d1 = (f / strike).ln() / sd + 0.5 * sd;
        norm_cdf(w * d1)
    };
    let scale = match convention {
        DeltaConvention::Spot => (-q * tau).exp(),
        DeltaConvention::Forward => 1.0,
    };
    w * scale * n
}

/// Black-Scholes vol reproducing `price`.
///
/// Safeguarded Newton on `[VOL_MIN, VOL_MAX]`; a price at the lower
/// no-arbitrage bound returns zero.
pub fn implied_vol(price: f64, spot: f64, strike: f64, tau: f64, r: f64, q: f64, side: OptionSide) -> Result<f64> {
    validate_inputs(spot, strike, tau)?;
    check("tau", tau, tau > 0.0, "must be > 0")?;
    check("price", price, true, "must be finite")?;
    let df = (-r * tau).exp();
    let f = forward(spot, tau, r, q);
    let target = price / df;
    let w = side.sign();
    let lower = (w * (f - strike)).max(0.0);
    let upper = match side {
        OptionSide::Call => f,
        OptionSide::Put => strike,
    };
    let scale = f.max(strike);
    let tol = 1e-14 * scale;
    if target < lower - tol || target >= upper {
        return Err(Error::NoSolution(format!(
            "price {price} outside no-arbitrage band [{}, {})",
            lower * df,
            upper * df
        )));
    }
    if target <= lower + tol {
        return Ok(0.0);
    }
    let sqrt_t = tau.sqrt();
    let value = |v: f64| black(f, strike, v * sqrt_t, side) - target;
    let (mut lo, mut hi) = (VOL_MIN, VOL_MAX);
    if value(lo) >= 0.0 {
        return Ok(lo);
    }
    if value(hi) < 0.0 {
        return Err(Error::NoSolution(format!("implied vol above {VOL_MAX}")));
    }
    // Start from the Brenner-Subrahmanyam style guess, clamped.
    let mut vol = ((2.0 * std::f64::consts::PI / tau).sqrt() * (target - lower) / f).clamp(0.01, 1.0);
    for _ in 0..200 {
        let err = value(vol);
        if err.abs() <= 1e-15 * scale {
            return Ok(vol);
        }
        if err > 0.0 {
            hi = vol;
        } else {
            lo = vol;
        }
        let sd = vol * sqrt_t;
        let d1 = (f / strike).ln() / sd + 0.5 * sd;
        let vega = f * norm_pdf(d1) * sqrt_t;
        let newton = vol - err / vega;
        vol = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * hi {
            return Ok(vol);
        }
    }
    Ok(vol)
}

/// Strike whose Black-Scholes delta under `convention` equals `delta_target`.
#[allow(clippy::too_many_arguments)]
pub fn strike_from_delta(
    delta_target: f64,
    spot: f64,
    vol: f64,
    tau: f64,
    r: f64,
    q: f64,
    side: OptionSide,
    convention: DeltaConvention,
) -> Result<f64> {
    check("spot", spot, spot > 0.0, "must be > 0")?;
    check("vol", vol, vol > 0.0, "must be > 0")?;
    check("tau", tau, tau > 0.0, "must be > 0")?;
    let w = side.sign();
    let n_target = w * delta_target
        * match convention {
            DeltaConvention::Spot => (q * tau).exp(),
            DeltaConvention::Forward => 1.0,
        };
    if !(n_target > 0.0 && n_target < 1.0) {
        return Err(Error::NoSolution(format!(
            "delta {delta_target} unattainable for a {side:?}"
        )));
    }
    // N(w d₁) = n_target
    let d1 = w * norm_inv(n_target);
    let sd = vol * tau.sqrt();
    let f = forward(spot, tau, r, q);
    Ok(f * (-d1 * sd + 0.5 * sd * sd).exp())
}

pub fn atm_strike(spot: f64, vol: f64, tau: f64, r: f64, q: f64, convention: AtmConvention) -> f64 {
    let f = forward(spot, tau, r, q);
    match convention {
        AtmConvention::Forward => f,
        AtmConvention::DeltaNeutral => f * (0.5 * vol * vol * tau).exp(),
    }
}

/// `(vol_25p, vol_atm, vol_25c)` implied by the quote.
pub fn smile_vols(quote: &SmileQuote) -> Result<(f64, f64, f64)> {
    quote.validate()?;
    let call = quote.atm_vol + quote.bf25 + 0.5 * quote.rr25;
    let put = quote.atm_vol + quote.bf25 - 0.5 * quote.rr25;
    Ok((put, quote.atm_vol, call))
}

/// Inverse of [`smile_vols`]: `(rr25, bf25)`.
pub fn rr_bf_from_vols(vol_25p: f64, vol_atm: f64, vol_25c: f64) -> (f64, f64) {
    (vol_25c - vol_25p, 0.5 * (vol_25c + vol_25p) - vol_atm)
}

/// Strikes of the 25-delta put, ATM and 25-delta call under the quote's own vols.
pub fn quote_strikes(quote: &SmileQuote, spot: f64, r: f64, q: f64, conv: FxConventions) -> Result<[f64; 3]> {
    let (vp, va, vc) = smile_vols(quote)?;
    let t = quote.tenor;
    Ok([
        strike_from_delta(-0.25, spot, vp, t, r, q, OptionSide::Put, conv.delta)?,
        atm_strike(spot, va, t, r, q, conv.atm),
        strike_from_delta(0.25, spot, vc, t, r, q, OptionSide::Call, conv.delta)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_vol_is_discounted_intrinsic() {
        let c = bs_price(100.0, 95.0, 0.0, 0.5, 0.03, 0.01, OptionSide::Call).unwrap();
        let f = 100.0 * (0.02f64 * 0.5).exp();
        assert_relative_eq!(c, (-0.015f64).exp() * (f - 95.0), max_relative = 1e-14);
        assert_eq!(bs_price(100.0, 120.0, 0.0, 0.5, 0.0, 0.0, OptionSide::Call).unwrap(), 0.0);
    }

    #[test]
    fn atm_forward_identity() {
        let (s, v, t) = (100.0, 0.08, 0.25);
        let c = bs_price(s, s, v, t, 0.0, 0.0, OptionSide::Call).unwrap();
        let p = bs_price(s, s, v, t, 0.0, 0.0, OptionSide::Put).unwrap();
        assert_relative_eq!(c, p, max_relative = 1e-13);
        assert_relative_eq!(c, s * (2.0 * norm_cdf(0.5 * v * t.sqrt()) - 1.0), max_relative = 1e-12);
    }

    /// Simpson quadrature of the lognormal payoff.
    #[test]
    fn matches_payoff_quadrature() {
        let (s, k, v, t): (f64, f64, f64, f64) = (100.0, 105.0, 0.08, 0.25);
        let sd = v * f64::sqrt(t);
        let mu = s.ln() - 0.5 * sd * sd;
        let (lo, hi) = (k.ln(), mu + 12.0 * sd);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let g = |x: f64| (x.exp() - k) * (-(x - mu).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let mut sum = g(lo) + g(hi);
        for i in 1..n {
            sum += g(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = sum * h / 3.0;
        let c = bs_price(s, k, v, t, 0.0, 0.0, OptionSide::Call).unwrap();
        assert!((c - quad).abs() < 1e-8, "{c} vs {quad}");
    }

    #[test]
    fn implied_vol_round_trip_and_edges() {
        let p = bs_price(100.0, 103.0, 0.08, 0.25, 0.0, 0.0, OptionSide::Call).unwrap();
        let v = implied_vol(p, 100.0, 103.0, 0.25, 0.0, 0.0, OptionSide::Call).unwrap();
        assert!((v - 0.08).abs() < 1e-10);
        assert_eq!(implied_vol(0.0, 100.0, 103.0, 0.25, 0.0, 0.0, OptionSide::Call).unwrap(), 0.0);
        assert!(implied_vol(-0.1, 100.0, 103.0, 0.25, 0.0, 0.0, OptionSide::Call).is_err());
        assert!(implied_vol(100.0, 100.0, 103.0, 0.25, 0.0, 0.0, OptionSide::Call).is_err());
    }

    #[test]
    fn fifty_delta_call_strike() {
        let (s, v, t): (f64, f64, f64) = (100.0, 0.1, 0.5);
        let k = strike_from_delta(0.5, s, v, t, 0.0, 0.0, OptionSide::Call, DeltaConvention::Spot).unwrap();
        assert_relative_eq!(k, s * (0.5 * v * v * t).exp(), max_relative = 1e-13);
    }

    #[test]
    fn twenty_five_delta_round_trip() {
        let (s, v, t): (f64, f64, f64) = (100.0, 0.085, 0.25);
        let k = strike_from_delta(0.25, s, v, t, 0.0, 0.0, OptionSide::Call, DeltaConvention::Spot).unwrap();
        let d = bs_delta(s, k, v, t, 0.0, 0.0, OptionSide::Call, DeltaConvention::Spot);
        assert!((d - 0.25).abs() < 1e-10);
        let kp = strike_from_delta(-0.25, s, v, t, 0.0, 0.0, OptionSide::Put, DeltaConvention::Spot).unwrap();
        // Mirror around the forward in d₁: ln(K_c/F) + ln(K_p/F) = σ²τ.
        assert_relative_eq!((k / s).ln() + (kp / s).ln(), v * v * t, max_relative = 1e-10);
        assert!(strike_from_delta(1.2, s, v, t, 0.0, 0.0, OptionSide::Call, DeltaConvention::Spot).is_err());
        assert!(strike_from_delta(0.25, s, v, t, 0.0, 0.0, OptionSide::Put, DeltaConvention::Spot).is_err());
    }

    #[test]
    fn smile_vols_examples() {
        let q = SmileQuote { tenor: 0.25, atm_vol: 0.08, rr25: 0.01, bf25: 0.005 };
        let (p, a, c) = smile_vols(&q).unwrap();
        assert_relative_eq!(p, 0.08, max_relative = 1e-15);
        assert_eq!(a, 0.08);
        assert_relative_eq!(c, 0.09, max_relative = 1e-15);
        assert_relative_eq!(c - p, 0.01, max_relative = 1e-13);

        let flat = SmileQuote { rr25: 0.0, bf25: 0.0, ..q };
        assert_eq!(smile_vols(&flat).unwrap(), (0.08, 0.08, 0.08));

        let neg = SmileQuote { rr25: -0.01, ..q };
        let (p, _, c) = smile_vols(&neg).unwrap();
        assert_relative_eq!(c, 0.08, max_relative = 1e-15);
        assert_relative_eq!(p, 0.09, max_relative = 1e-15);

        let bad = SmileQuote { rr25: 0.2, ..q };
        assert!(smile_vols(&bad).is_err());
    }

    proptest! {
        #[test]
        fn put_call_parity(s in 50.0f64..150.0, k in 50.0f64..150.0, v in 0.01f64..0.8,
                           t in 0.01f64..3.0, r in -0.02f64..0.08, q in -0.02f64..0.08) {
            let c = bs_price(s, k, v, t, r, q, OptionSide::Call).unwrap();
            let p = bs_price(s, k, v, t, r, q, OptionSide::Put).unwrap();
            let parity = s * (-q * t).exp() - k * (-r * t).exp();
            prop_assert!((c - p - parity).abs() < 1e-12 * s.max(k));
        }

        #[test]
        fn implied_vol_round_trips(m in 0.8f64..1.25, t in 0.02f64..2.0, v in 0.03f64..0.6,
                                   call in proptest::bool::ANY) {
            let side = if call { OptionSide::Call } else { OptionSide::Put };
            let (s, k) = (100.0, 100.0 * m);
            let p = bs_price(s, k, v, t, 0.01, 0.0, side).unwrap();
            let iv = implied_vol(p, s, k, t, 0.01, 0.0, side).unwrap();
            let back = bs_price(s, k, iv, t, 0.01, 0.0, side).unwrap();
            prop_assert!((back - p).abs() < 1e-10, "{} vs {}", back, p);
        }

        #[test]
        fn delta_strike_round_trip(delta in 0.05f64..0.95, v in 0.03f64..0.5, t in 0.02f64..2.0,
                                   r in -0.02f64..0.05, q in -0.02f64..0.05, fwd in proptest::bool::ANY) {
            let conv = if fwd { DeltaConvention::Forward } else { DeltaConvention::Spot };
            for (side, d) in [(OptionSide::Call, delta * (-q * t).exp()), (OptionSide::Put, -delta * (-q * t).exp())] {
                let k = strike_from_delta(d, 100.0, v, t, r, q, side, conv).unwrap();
                let back = bs_delta(100.0, k, v, t, r, q, side, conv);
                prop_assert!((back - d).abs() < 1e-10);
            }
        }

        #[test]
        fn rr_bf_inversion(p in 0.02f64..0.3, a in 0.02f64..0.3, c in 0.02f64..0.3) {
            let q = SmileQuote::from_vols(0.25, p, a, c);
            prop_assume!(q.validate().is_ok());
            let (p2, a2, c2) = smile_vols(&q).unwrap();
            prop_assert!((p2 - p).abs() < 1e-15 && a2 == a && (c2 - c).abs() < 1e-15);
        }
    }
}
