//! Model parameters, the natural (θ, ρ_a, ρ_0) parameterization and the
//! instantaneous correlation formulas.
//!
//! The variance is the sum of two CIR sub-variances sharing mean reversion
//! `beta` and vol-of-vol `alpha`. Spot loads on the `v_plus` driver with
//! correlation `rho_bar + eta` and on the `v_minus` driver with
//! `rho_bar - eta`, so the effective spot/vol correlation
//! `rho_bar + eta * (v⁺ - v⁻) / (v⁺ + v⁻)` moves inside `[rho_bar - eta, rho_bar + eta]`.

use serde::{Deserialize, Serialize};

use crate::error::{check, invalid, Error, Result};

/// Slack allowed on correlation range checks.
pub const CORR_TOL: f64 = 1e-12;

/// Total variance below which the instantaneous correlation is undefined.
pub const MIN_TOTAL_VARIANCE: f64 = 1e-12;

/// Full SDE parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub alpha: f64,
    pub theta_plus: f64,
    pub theta_minus: f64,
    pub rho_bar: f64,
    pub eta: f64,
    pub v0_plus: f64,
    pub v0_minus: f64,
    pub r: f64,
    pub q: f64,
}

/// The (θ, ρ_a, ρ_0, v₀) parameterization used for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams {
    pub theta: f64,
    pub rho_a: f64,
    pub rho_0: f64,
    pub v0: f64,
    pub beta: f64,
    pub alpha: f64,
    pub eta: f64,
    pub r: f64,
    pub q: f64,
}

impl ModelParams {
    /// Parameters with `rho_bar = rho_a = rho_0`, i.e. `θ₊ = θ₋ = θ/2` and
    /// `v₀⁺ = v₀⁻ = v₀/2`.
    #[allow(clippy::too_many_arguments)]
    pub fn centered(
        theta: f64,
        v0: f64,
        alpha: f64,
        beta: f64,
        rho_bar: f64,
        eta: f64,
        r: f64,
        q: f64,
    ) -> Result<Self> {
        let p = Self {
            beta,
            alpha,
            theta_plus: 0.5 * theta,
            theta_minus: 0.5 * theta,
            rho_bar,
            eta,
            v0_plus: 0.5 * v0,
            v0_minus: 0.5 * v0,
            r,
            q,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check("beta", self.beta, self.beta > 0.0, "must be > 0")?;
        check("alpha", self.alpha, self.alpha >= 0.0, "must be >= 0")?;
        check("theta_plus", self.theta_plus, self.theta_plus >= 0.0, "must be >= 0")?;
        check("theta_minus", self.theta_minus, self.theta_minus >= 0.0, "must be >= 0")?;
        check("v0_plus", self.v0_plus, self.v0_plus >= 0.0, "must be >= 0")?;
        check("v0_minus", self.v0_minus, self.v0_minus >= 0.0, "must be >= 0")?;
        check("eta", self.eta, self.eta >= 0.0, "must be >= 0")?;
        check("rho_bar", self.rho_bar, true, "must be finite")?;
        check("r", self.r, true, "must be finite")?;
        check("q", self.q, true, "must be finite")?;
        if self.rho_minus() <= -1.0 || self.rho_plus() >= 1.0 {
            return Err(invalid(
                "rho_bar",
                format!(
                    "correlations rho_bar -/+ eta = ({}, {}) must lie in (-1, 1)",
                    self.rho_minus(),
                    self.rho_plus()
                ),
            ));
        }
        Ok(())
    }

    /// Correlation of spot with the `v_plus` driver.
    pub fn rho_plus(&self) -> f64 {
        self.rho_bar + self.eta
    }

    /// Correlation of spot with the `v_minus` driver.
    pub fn rho_minus(&self) -> f64 {
        self.rho_bar - self.eta
    }

    pub fn theta(&self) -> f64 {
        self.theta_plus + self.theta_minus
    }

    pub fn v0(&self) -> f64 {
        self.v0_plus + self.v0_minus
    }

    /// Long-run correlation level.
    pub fn rho_a(&self) -> f64 {
        if self.theta() > 0.0 {
            self.rho_bar + self.eta * (self.theta_plus - self.theta_minus) / self.theta()
        } else {
            self.rho_bar
        }
    }

    /// Initial correlation level.
    pub fn rho_0(&self) -> f64 {
        if self.v0() > 0.0 {
            self.rho_bar + self.eta * (self.v0_plus - self.v0_minus) / self.v0()
        } else {
            self.rho_bar
        }
    }

    pub fn feller_ratio(&self) -> f64 {
        self.alpha * self.alpha / (2.0 * self.beta * self.theta())
    }

    pub fn to_natural(&self) -> NaturalParams {
        NaturalParams {
            theta: self.theta(),
            rho_a: self.rho_a(),
            rho_0: self.rho_0(),
            v0: self.v0(),
            beta: self.beta,
            alpha: self.alpha,
            eta: self.eta,
            r: self.r,
            q: self.q,
        }
    }

    /// Same parameters with the initial sub-variances replaced.
    pub fn with_state(&self, v_plus: f64, v_minus: f64) -> Self {
        Self {
            v0_plus: v_plus,
            v0_minus: v_minus,
            ..*self
        }
    }
}

impl NaturalParams {
    pub fn validate(&self, rho_bar: f64) -> Result<()> {
        check("theta", self.theta, self.theta > 0.0, "must be > 0")?;
        check("v0", self.v0, self.v0 > 0.0, "must be > 0")?;
        check("eta", self.eta, self.eta >= 0.0, "must be >= 0")?;
        check("rho_a", self.rho_a, true, "must be finite")?;
        check("rho_0", self.rho_0, true, "must be finite")?;
        if self.eta == 0.0 {
            for (name, v) in [("rho_a", self.rho_a), ("rho_0", self.rho_0)] {
                if (v - rho_bar).abs() > CORR_TOL {
                    return Err(Error::Inconsistent(format!(
                        "eta = 0 requires {name} = rho_bar ({v} != {rho_bar})"
                    )));
                }
            }
        } else {
            range_check(self.rho_a, rho_bar, self.eta)?;
            range_check(self.rho_0, rho_bar, self.eta)?;
        }
        Ok(())
    }
}

fn range_check(value: f64, rho_bar: f64, eta: f64) -> Result<()> {
    if (value - rho_bar).abs() > eta + CORR_TOL {
        return Err(Error::CorrelationRange {
            value,
            lo: rho_bar - eta,
            hi: rho_bar + eta,
        });
    }
    Ok(())
}

/// Splits a total level into (plus, minus) parts whose weighted
/// correlation `rho_bar + eta * (plus - minus) / total` equals `rho`.
fn split(total: f64, rho: f64, rho_bar: f64, eta: f64) -> (f64, f64) {
    if eta == 0.0 {
        return (0.5 * total, 0.5 * total);
    }
    let w = ((rho - rho_bar) / eta).clamp(-1.0, 1.0);
    (0.5 * total * (1.0 + w), 0.5 * total * (1.0 - w))
}

/// Maps natural parameters to the raw sub-variance parameterization.
pub fn to_raw(natural: &NaturalParams, rho_bar: f64) -> Result<ModelParams> {
    natural.validate(rho_bar)?;
    let (theta_plus, theta_minus) = split(natural.theta, natural.rho_a, rho_bar, natural.eta);
    let (v0_plus, v0_minus) = split(natural.v0, natural.rho_0, rho_bar, natural.eta);
    let p = ModelParams {
        beta: natural.beta,
        alpha: natural.alpha,
        theta_plus,
        theta_minus,
        rho_bar,
        eta: natural.eta,
        v0_plus,
        v0_minus,
        r: natural.r,
        q: natural.q,
    };
    p.validate()?;
    Ok(p)
}

/// Instantaneous spot/volatility correlation.
pub fn rho_t(v_plus: f64, v_minus: f64, rho_bar: f64, eta: f64) -> Result<f64> {
    if !(v_plus >= 0.0 && v_minus >= 0.0) {
        return Err(Error::Domain(format!(
            "sub-variances must be non-negative (got {v_plus}, {v_minus})"
        )));
    }
    let v = v_plus + v_minus;
    if v < MIN_TOTAL_VARIANCE {
        return Err(Error::UndefinedCorrelation(v));
    }
    Ok(rho_bar + eta * (v_plus - v_minus) / v)
}

/// `sqrt(eta² - (rho_bar - rho_t)²)`, valid for `rho_t` in `[rho_bar - eta, rho_bar + eta]`.
fn range_width(rho_t: f64, rho_bar: f64, eta: f64) -> Result<f64> {
    range_check(rho_t, rho_bar, eta)?;
    let dev = rho_t - rho_bar;
    Ok((eta * eta - dev * dev).max(0.0).sqrt())
}

/// Correlation between log-spot moves and correlation moves.
pub fn rho_cs(rho_t: f64, rho_bar: f64, eta: f64) -> Result<f64> {
    range_width(rho_t, rho_bar, eta)
}

/// Drift (per year) and diffusion (per √year) of the correlation process at
/// total variance `v`.
pub fn rho_sde_coefficients(v: f64, rho_t: f64, params: &ModelParams) -> Result<(f64, f64)> {
    if !(v > 0.0) {
        return Err(Error::Domain(format!("total variance must be > 0 (got {v})")));
    }
    let width = range_width(rho_t, params.rho_bar, params.eta)?;
    let drift = params.beta * params.theta() / v * (params.rho_a() - rho_t);
    let diffusion = params.alpha / v.sqrt() * width;
    Ok((drift, diffusion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn natural(theta: f64, rho_a: f64, rho_0: f64, eta: f64) -> NaturalParams {
        NaturalParams {
            theta,
            rho_a,
            rho_0,
            v0: theta,
            beta: 2.0,
            alpha: 0.3,
            eta,
            r: 0.0,
            q: 0.0,
        }
    }

    #[test]
    fn centered_split_is_even() {
        let p = to_raw(&natural(0.01, 0.0, 0.0, 0.4), 0.0).unwrap();
        for x in [p.theta_plus, p.theta_minus, p.v0_plus, p.v0_minus] {
            assert_relative_eq!(x, 0.005, max_relative = 1e-15);
        }
    }

    #[test]
    fn heston_limit_splits_evenly() {
        let p = to_raw(&natural(0.02, -0.3, -0.3, 0.0), -0.3).unwrap();
        assert_eq!(p.theta_plus, 0.01);
        assert_eq!(p.theta_minus, 0.01);
    }

    #[test]
    fn off_center_long_run_correlation() {
        let p = to_raw(&natural(0.01, 0.2, 0.0, 0.4), 0.0).unwrap();
        assert_relative_eq!(p.theta_plus, 0.0075, max_relative = 1e-14);
        assert_relative_eq!(p.theta_minus, 0.0025, max_relative = 1e-14);
        assert_relative_eq!(p.theta_plus - p.theta_minus, 0.005, max_relative = 1e-13);
    }

    #[test]
    fn to_raw_errors() {
        assert!(matches!(
            to_raw(&natural(0.01, 0.5, 0.0, 0.4), 0.0),
            Err(Error::CorrelationRange { .. })
        ));
        assert!(matches!(
            to_raw(&natural(0.01, 0.1, 0.0, 0.0), 0.0),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn rho_t_examples() {
        assert_eq!(rho_t(0.02, 0.02, 0.1, 0.3).unwrap(), 0.1);
        assert_relative_eq!(rho_t(0.01, 0.0, 0.1, 0.3).unwrap(), 0.4);
        assert_relative_eq!(rho_t(1e-4, 3e-4, 0.0, 0.4).unwrap(), -0.2, max_relative = 1e-14);
        assert!(matches!(
            rho_t(0.0, 0.0, 0.0, 0.4),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn rho_cs_examples() {
        assert_eq!(rho_cs(0.1, 0.1, 0.3).unwrap(), 0.3);
        assert_eq!(rho_cs(0.4, 0.1, 0.3).unwrap(), 0.0);
        assert_eq!(rho_cs(0.1 - 0.3, 0.1, 0.3).unwrap(), 0.0);
        assert_relative_eq!(rho_cs(0.3, 0.0, 0.5).unwrap(), 0.4, max_relative = 1e-15);
        assert!(rho_cs(0.6, 0.0, 0.5).is_err());
    }

    #[test]
    fn rho_cs_grid_maximum_at_center() {
        let (rho_bar, eta) = (-0.1, 0.35);
        let n = 2001;
        let (mut best, mut arg) = (f64::MIN, 0.0);
        for i in 0..n {
            let r = rho_bar - eta + 2.0 * eta * i as f64 / (n - 1) as f64;
            let c = rho_cs(r, rho_bar, eta).unwrap();
            if c > best {
                best = c;
                arg = r;
            }
        }
        assert_relative_eq!(arg, rho_bar, epsilon = 1e-12);
        assert_relative_eq!(best, eta, epsilon = 1e-15);
    }

    #[test]
    fn rho_sde_examples() {
        let p = ModelParams::centered(0.01, 0.01, 0.3, 2.0, 0.0, 0.4, 0.0, 0.0).unwrap();
        let (drift, _) = rho_sde_coefficients(0.02, p.rho_a(), &p).unwrap();
        assert_eq!(drift, 0.0);
        let (_, diffusion) = rho_sde_coefficients(0.01, 0.0, &p).unwrap();
        assert_relative_eq!(diffusion, 0.3 * 0.4 / 0.1, max_relative = 1e-14);
        let (_, edge) = rho_sde_coefficients(0.01, 0.4, &p).unwrap();
        assert_eq!(edge, 0.0);

        let (drift, _) = rho_sde_coefficients(0.02, 0.1, &p).unwrap();
        assert_relative_eq!(drift, -0.1, max_relative = 1e-14);
        assert!(matches!(rho_sde_coefficients(0.0, 0.0, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_model_params() {
        assert!(ModelParams::centered(0.01, 0.01, 0.3, 2.0, 0.7, 0.3, 0.0, 0.0).is_err());
        assert!(ModelParams::centered(0.01, 0.01, 0.3, 0.0, 0.0, 0.3, 0.0, 0.0).is_err());
        assert!(ModelParams::centered(0.01, 0.01, 0.3, 2.0, 0.0, 0.0, 0.0, 0.0).is_ok());
    }

    proptest! {
        #[test]
        fn natural_round_trip(
            theta in 1e-4f64..0.5,
            v0 in 1e-4f64..0.5,
            rho_bar in -0.5f64..0.5,
            eta in 0.01f64..0.45,
            wa in -1.0f64..1.0,
            w0 in -1.0f64..1.0,
        ) {
            let n = NaturalParams {
                theta, v0, rho_a: rho_bar + wa * eta, rho_0: rho_bar + w0 * eta,
                beta: 1.5, alpha: 0.4, eta, r: 0.01, q: 0.02,
            };
            let p = to_raw(&n, rho_bar).unwrap();
            let back = p.to_natural();
            prop_assert!((back.theta - theta).abs() <= 1e-14 * theta);
            prop_assert!((back.v0 - v0).abs() <= 1e-14 * v0);
            prop_assert!((back.rho_a - n.rho_a).abs() <= 1e-14 * n.rho_a.abs().max(1.0));
            prop_assert!((back.rho_0 - n.rho_0).abs() <= 1e-14 * n.rho_0.abs().max(1.0));
        }

        #[test]
        fn rho_t_stays_in_range(
            vp in 0.0f64..1.0, vm in 0.0f64..1.0,
            rho_bar in -0.5f64..0.5, eta in 0.0f64..0.45,
        ) {
            prop_assume!(vp + vm > 1e-9);
            let r = rho_t(vp, vm, rho_bar, eta).unwrap();
            prop_assert!(r >= rho_bar - eta - 1e-15 && r <= rho_bar + eta + 1e-15);
        }
    }
}
