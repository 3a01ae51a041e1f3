use corrheston::analytics::{mc_rr_beta, model_k_tau_params, model_rr_beta};
use corrheston::blackscholes::{FxConventions, SmileQuote};
use corrheston::exotics::{bs_one_touch_price, price_one_touch, BarrierProduct};
use corrheston::fourier::QuadratureConfig;
use corrheston::model::{rho_cs, rho_sde_coefficients, rho_t};
use corrheston::montecarlo::{evolve_paths, evolve_paths_with_steps, McConfig, PathObserver, PathState, StepView};
use corrheston::ModelParams;

/// One short step from the initial state: Δρ, Δρ², ΔlnS and their products.
struct RhoIncrement {
    rho0: f64,
    rho_bar: f64,
    eta: f64,
}

impl PathObserver for RhoIncrement {
    type State = ();
    fn outputs(&self) -> usize {
        2
    }
    fn start(&self) {}
    fn step(&self, _: &mut (), _: &StepView) {}
    fn finish(&self, _: (), t: &PathState, out: &mut [f64]) {
        out[0] = rho_t(t.v_plus, t.v_minus, self.rho_bar, self.eta).unwrap() - self.rho0;
        out[1] = t.log_spot;
    }
}

fn skewed() -> ModelParams {
    ModelParams {
        beta: 2.0,
        alpha: 0.2,
        theta_plus: 0.015,
        theta_minus: 0.005,
        rho_bar: -0.1,
        eta: 0.4,
        v0_plus: 0.012,
        v0_minus: 0.018,
        r: 0.0,
        q: 0.0,
    }
}

#[test]
fn correlation_increments_follow_their_sde() {
    let p = skewed();
    let dt = 1e-3;
    let rho0 = p.rho_0();
    let v = p.v0();
    let obs = RhoIncrement {
        rho0,
        rho_bar: p.rho_bar,
        eta: p.eta,
    };
    let cfg = McConfig {
        paths: 400_000,
        seed: 17,
        ..Default::default()
    };
    let m = evolve_paths_with_steps(&p, 1.0, dt, 1, &cfg, &obs).unwrap();
    let (drift, diffusion) = rho_sde_coefficients(v, rho0, &p).unwrap();

    let z = (m.mean(0) - drift * dt) / m.std_error(0);
    assert!(z.abs() < 3.0, "drift z = {z}");

    // quadratic variation: relative error of the sample variance
    let qv = m.variance(0) / dt;
    let target = diffusion * diffusion;
    assert!((qv / target - 1.0).abs() < 0.01, "{qv} vs {target}");

    let corr = m.covariance(0, 1) / (m.variance(0) * m.variance(1)).sqrt();
    let expected = rho_cs(rho0, p.rho_bar, p.eta).unwrap();
    let se = (1.0 - expected * expected) / (cfg.paths as f64).sqrt();
    assert!((corr - expected).abs() < 4.0 * se, "corr {corr} vs {expected}");
}

struct Terminal;

impl PathObserver for Terminal {
    type State = ();
    fn outputs(&self) -> usize {
        1
    }
    fn start(&self) {}
    fn step(&self, _: &mut (), _: &StepView) {}
    fn finish(&self, _: (), t: &PathState, out: &mut [f64]) {
        out[0] = t.log_spot.exp();
    }
}

#[test]
fn corrected_scheme_is_a_martingale_under_high_vol_of_vol() {
    let mut p = skewed();
    p.alpha = 0.9;
    p.r = 0.02;
    p.q = 0.05;
    let cfg = McConfig {
        paths: 200_000,
        seed: 3,
        steps_per_year: 52,
        martingale_correction: true,
        ..Default::default()
    };
    let m = evolve_paths(&p, 1.3, 2.0, &cfg, &Terminal).unwrap();
    let fwd = 1.3 * ((p.r - p.q) * 2.0).exp();
    let z = (m.mean(0) - fwd) / m.std_error(0);
    assert!(z.abs() < 3.0, "z = {z}");
}

#[test]
fn bridge_one_touch_matches_constant_vol_formula() {
    let vol: f64 = 0.12;
    let p = ModelParams::centered(vol * vol, vol * vol, 0.0, 1.0, 0.0, 0.0, 0.01, 0.03).unwrap();
    let cfg = McConfig {
        paths: 200_000,
        steps_per_year: 52,
        seed: 8,
        ..Default::default()
    };
    for barrier in [0.93, 1.06] {
        let product = BarrierProduct::one_touch(barrier, 0.5).unwrap();
        let mc = price_one_touch(&product, 1.0, &p, &cfg).unwrap();
        let exact = bs_one_touch_price(1.0, barrier, vol, 0.5, 0.01, 0.03).unwrap();
        let z = (mc.value - exact) / mc.std_error;
        assert!(z.abs() < 3.0, "barrier {barrier}: {} vs {exact} (z {z})", mc.value);

        // discrete monitoring without the bridge misses crossings
        let plain = price_one_touch(&product, 1.0, &p, &McConfig { bridge_enabled: false, ..cfg }).unwrap();
        assert!(plain.value < exact - 5.0 * plain.std_error);
    }
}

#[test]
fn simulated_risk_reversal_beta_matches_slope_formula_at_small_vol_of_vol() {
    let conv = FxConventions::default();
    let quad = QuadratureConfig::default();
    let quote = SmileQuote {
        tenor: 0.25,
        atm_vol: 0.1,
        rr25: 0.0,
        bf25: 0.001,
    };
    let cfg = McConfig {
        paths: 1000,
        seed: 12,
        ..Default::default()
    };
    let mut betas = Vec::new();
    for eta in [0.25, 0.5] {
        let p = ModelParams::centered(0.01, 0.01, 0.05, 2.0, 0.0, eta, 0.0, 0.0).unwrap();
        let k = model_k_tau_params(&p, 1.0, 0.25, 0.01, conv, &quad).unwrap();
        let predicted = model_rr_beta(k, p.alpha, eta, p.theta()).unwrap();
        let est = mc_rr_beta(&p, &quote, 1.0, &cfg, 20, conv, &quad).unwrap();
        let z = (est.beta_rr - predicted) / est.std_error;
        assert!(z.abs() < 3.0, "eta {eta}: {} vs {predicted} (z {z})", est.beta_rr);
        betas.push(est);
    }
    let ratio = betas[1].beta_rr / betas[0].beta_rr;
    let se = ratio * ((betas[0].std_error / betas[0].beta_rr).powi(2) + (betas[1].std_error / betas[1].beta_rr).powi(2)).sqrt();
    assert!((ratio - 4.0).abs() < 3.0 * se, "ratio {ratio} ± {se}");
}
