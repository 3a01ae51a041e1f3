//! Characteristic function of `ln S_T`.
//!
//! `Φ(ξ) = exp(A(τ;ξ) + B₊(τ;ξ) v⁺ + B₋(τ;ξ) v⁻ + iξ ln S)` where `B±` solve
//! the decoupled Riccati equations
//!
//! ```text
//! B±' = -½(ξ² + iξ) - (β - iξαρ±) B± + ½α² B±²,   B±(0) = 0
//! A'  = iξ(r - q) + β(θ₊ B₊ + θ₋ B₋),             A(0) = 0
//! ```
//!
//! with `ρ± = ρ̄ ± η`. The closed form uses the `e^{-dτ}` representation with
//! `Re(d) ≥ 0`, which keeps `|g e^{-dτ}| < 1` along real `ξ` and avoids the
//! logarithm branch jump of the original Heston formulation.

use num_complex::Complex64;

use crate::error::{check, Error, Result};
use crate::model::ModelParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Values of `A`, `B₊`, `B₋` at one `(ξ, τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiSolution {
    pub a: Complex64,
    pub b_plus: Complex64,
    pub b_minus: Complex64,
}

impl RiccatiSolution {
    pub const ZERO: Self = Self {
        a: Complex64::new(0.0, 0.0),
        b_plus: Complex64::new(0.0, 0.0),
        b_minus: Complex64::new(0.0, 0.0),
    };

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.a - other.a)
            .norm()
            .max((self.b_plus - other.b_plus).norm())
            .max((self.b_minus - other.b_minus).norm())
    }
}

/// `ξ`-dependent constants of the closed form, `(+, -)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfIntermediates {
    pub b_pm: (Complex64, Complex64),
    pub d_pm: (Complex64, Complex64),
    pub g_pm: (Complex64, Complex64),
}

#[derive(Debug, Clone, Copy)]
struct Factor {
    b: Complex64,
    d: Complex64,
    g: Complex64,
}

impl Factor {
    fn new(xi: Complex64, rho: f64, p: &ModelParams) -> Self {
        let b = p.beta - I * xi * (p.alpha * rho);
        let mut d = (b * b + p.alpha * p.alpha * (xi * xi + I * xi)).sqrt();
        if d.re < 0.0 {
            d = -d;
        }
        let g = (b - d) / (b + d);
        Self { b, d, g }
    }

    /// Returns `(B(τ), ∫₀^τ B(s) ds)`.
    fn solve(&self, tau: f64, alpha2: f64) -> (Complex64, Complex64) {
        let e = (-self.d * tau).exp();
        let one_minus_ge = 1.0 - self.g * e;
        let bmd = self.b - self.d;
        let b = bmd / alpha2 * (1.0 - e) / one_minus_ge;
        // Difference of principal logs: each argument stays in the right
        // half-plane while |g| < 1, so this is continuous in ξ.
        let log_term = one_minus_ge.ln() - (1.0 - self.g).ln();
        let integral = (bmd * tau - 2.0 * log_term) / alpha2;
        (b, integral)
    }
}

fn validate(tau: f64, params: &ModelParams) -> Result<()> {
    check("tau", tau, tau >= 0.0, "must be >= 0")?;
    params.validate()?;
    if params.alpha == 0.0 {
        return Err(Error::Unsupported(
            "closed-form characteristic function requires alpha > 0; use Black-Scholes for alpha = 0"
                .into(),
        ));
    }
    Ok(())
}

pub fn intermediates(xi: Complex64, params: &ModelParams) -> CfIntermediates {
    let fp = Factor::new(xi, params.rho_plus(), params);
    let fm = Factor::new(xi, params.rho_minus(), params);
    CfIntermediates {
        b_pm: (fp.b, fm.b),
        d_pm: (fp.d, fm.d),
        g_pm: (fp.g, fm.g),
    }
}

/// Closed-form `A`, `B₊`, `B₋`.
pub fn riccati_closed_form(xi: Complex64, tau: f64, params: &ModelParams) -> Result<RiccatiSolution> {
    validate(tau, params)?;
    Ok(riccati_unchecked(xi, tau, params))
}

pub(crate) fn riccati_unchecked(xi: Complex64, tau: f64, p: &ModelParams) -> RiccatiSolution {
    if tau == 0.0 || xi == Complex64::new(0.0, 0.0) {
        return RiccatiSolution::ZERO;
    }
    let alpha2 = p.alpha * p.alpha;
    let (b_plus, int_plus) = Factor::new(xi, p.rho_plus(), p).solve(tau, alpha2);
    let (b_minus, int_minus) = Factor::new(xi, p.rho_minus(), p).solve(tau, alpha2);
    let a = I * xi * ((p.r - p.q) * tau) + p.beta * (p.theta_plus * int_plus + p.theta_minus * int_minus);
    RiccatiSolution { a, b_plus, b_minus }
}

/// Right-hand side of the Riccati system at state `y`.
fn riccati_rhs(xi: Complex64, p: &ModelParams, y: &RiccatiSolution) -> RiccatiSolution {
    let forcing = -0.5 * (xi * xi + I * xi);
    let half_a2 = 0.5 * p.alpha * p.alpha;
    let rhs_b = |b: Complex64, rho: f64| {
        forcing - p.beta * b + half_a2 * b * b + I * xi * (p.alpha * rho) * b
    };
    RiccatiSolution {
        a: I * xi * (p.r - p.q) + p.beta * (p.theta_plus * y.b_plus + p.theta_minus * y.b_minus),
        b_plus: rhs_b(y.b_plus, p.rho_plus()),
        b_minus: rhs_b(y.b_minus, p.rho_minus()),
    }
}

fn axpy(y: &RiccatiSolution, h: f64, k: &RiccatiSolution) -> RiccatiSolution {
    RiccatiSolution {
        a: y.a + h * k.a,
        b_plus: y.b_plus + h * k.b_plus,
        b_minus: y.b_minus + h * k.b_minus,
    }
}

/// Fixed-step classical RK4 integration of the Riccati system from `τ = 0`.
///
/// Test oracle for [`riccati_closed_form`]; it does not divide by `α²` and
/// so also covers `alpha = 0`.
pub fn riccati_ode_oracle(
    xi: Complex64,
    tau: f64,
    params: &ModelParams,
    steps: usize,
) -> Result<RiccatiSolution> {
    check("tau", tau, tau >= 0.0, "must be >= 0")?;
    params.validate()?;
    if steps < 100 {
        return Err(crate::error::invalid("steps", format!("must be >= 100 (got {steps})")));
    }
    let h = tau / steps as f64;
    let mut y = RiccatiSolution::ZERO;
    // Kahan compensation; |A| reaches 1e3 at long tenors and large |ξ|
    let mut carry = RiccatiSolution::ZERO;
    let add = |sum: &mut Complex64, carry: &mut Complex64, x: Complex64| {
        let y = x - *carry;
        let t = *sum + y;
        *carry = (t - *sum) - y;
        *sum = t;
    };
    for _ in 0..steps {
        let k1 = riccati_rhs(xi, params, &y);
        let k2 = riccati_rhs(xi, params, &axpy(&y, 0.5 * h, &k1));
        let k3 = riccati_rhs(xi, params, &axpy(&y, 0.5 * h, &k2));
        let k4 = riccati_rhs(xi, params, &axpy(&y, h, &k3));
        let w = h / 6.0;
        add(&mut y.a, &mut carry.a, w * (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a));
        add(&mut y.b_plus, &mut carry.b_plus, w * (k1.b_plus + 2.0 * k2.b_plus + 2.0 * k3.b_plus + k4.b_plus));
        add(&mut y.b_minus, &mut carry.b_minus, w * (k1.b_minus + 2.0 * k2.b_minus + 2.0 * k3.b_minus + k4.b_minus));
    }
    Ok(y)
}

/// `E[exp(iξ ln S_T)]` given spot and the initial sub-variances in `params`.
pub fn char_fn(xi: Complex64, tau: f64, spot: f64, params: &ModelParams) -> Result<Complex64> {
    check("spot", spot, spot > 0.0, "must be > 0")?;
    validate(tau, params)?;
    Ok(char_fn_unchecked(xi, tau, spot.ln(), params))
}

pub(crate) fn char_fn_unchecked(xi: Complex64, tau: f64, log_spot: f64, p: &ModelParams) -> Complex64 {
    let s = riccati_unchecked(xi, tau, p);
    (s.a + s.b_plus * p.v0_plus + s.b_minus * p.v0_minus + I * xi * log_spot).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1(eta: f64) -> ModelParams {
        ModelParams::centered(0.01, 0.01, 0.3, 2.0, 0.0, eta, 0.0, 0.0).unwrap()
    }

    #[test]
    fn zero_argument_and_zero_tenor() {
        let p = fig1(0.25);
        let s = riccati_closed_form(Complex64::new(0.0, 0.0), 1.0, &p).unwrap();
        assert_eq!(s, RiccatiSolution::ZERO);
        let s = riccati_closed_form(Complex64::new(3.0, -0.5), 0.0, &p).unwrap();
        assert_eq!(s, RiccatiSolution::ZERO);
        assert_eq!(char_fn(Complex64::new(0.0, 0.0), 0.5, 100.0, &p).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn forward_martingale() {
        let mut p = fig1(0.3);
        p.r = 0.03;
        p.q = 0.01;
        p.rho_bar = -0.2;
        let phi = char_fn(-I, 0.75, 100.0, &p).unwrap();
        let fwd = 100.0 * (0.02f64 * 0.75).exp();
        assert!((phi - fwd).norm() < 1e-10 * fwd, "{phi} vs {fwd}");
    }

    #[test]
    fn closed_form_matches_oracle_fig1_point() {
        let p = fig1(0.25);
        let xi = Complex64::new(1.0, -0.5);
        let cf = riccati_closed_form(xi, 0.25, &p).unwrap();
        let ode = riccati_ode_oracle(xi, 0.25, &p, 2000).unwrap();
        assert!(cf.max_abs_diff(&ode) < 1e-10, "{:?} vs {:?}", cf, ode);
    }

    #[test]
    fn oracle_symmetric_when_eta_zero() {
        let p = fig1(0.0);
        let y = riccati_ode_oracle(Complex64::new(7.0, 0.0), 1.0, &p, 1000).unwrap();
        assert_eq!(y.b_plus, y.b_minus);
        let y = riccati_ode_oracle(Complex64::new(0.0, 0.0), 1.0, &p, 1000).unwrap();
        assert_eq!(y, RiccatiSolution::ZERO);
    }

    #[test]
    fn oracle_converges_at_fourth_order() {
        let p = fig1(0.25);
        let xi = Complex64::new(20.0, 0.0);
        let cf = riccati_closed_form(xi, 1.0, &p).unwrap();
        let e1 = riccati_ode_oracle(xi, 1.0, &p, 200).unwrap().max_abs_diff(&cf);
        let e2 = riccati_ode_oracle(xi, 1.0, &p, 400).unwrap().max_abs_diff(&cf);
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio} ({e1}, {e2})");
    }

    #[test]
    fn rejects_zero_vol_of_vol() {
        let mut p = fig1(0.0);
        p.alpha = 0.0;
        assert!(matches!(
            riccati_closed_form(Complex64::new(1.0, 0.0), 1.0, &p),
            Err(Error::Unsupported(_))
        ));
        assert!(riccati_ode_oracle(Complex64::new(1.0, 0.0), 1.0, &p, 100).is_ok());
        assert!(riccati_ode_oracle(Complex64::new(1.0, 0.0), 1.0, &fig1(0.1), 99).is_err());
    }

    #[test]
    fn hermitian_and_decay() {
        let p = fig1(0.25);
        for u in [0.3, 2.0, 17.0, 150.0] {
            let a = char_fn(Complex64::new(u, 0.0), 0.25, 100.0, &p).unwrap();
            let b = char_fn(Complex64::new(-u, 0.0), 0.25, 100.0, &p).unwrap();
            assert!((a - b.conj()).norm() < 1e-12);
            assert!(a.norm() <= 1.0 + 1e-14);
        }
        assert!(char_fn(Complex64::new(500.0, 0.0), 0.25, 100.0, &p).unwrap().norm() < 1e-6);
    }

    #[test]
    fn real_axis_branch_quantities() {
        let p = fig1(0.4);
        for k in -100..=100 {
            let xi = Complex64::new(2.0 * k as f64, 0.0);
            let m = intermediates(xi, &p);
            assert!(m.d_pm.0.re >= 0.0 && m.d_pm.1.re >= 0.0);
            assert!(m.g_pm.0.norm() <= 1.0 && m.g_pm.1.norm() <= 1.0);
        }
    }
}
