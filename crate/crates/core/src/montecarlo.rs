//! Path simulation of `(ln S, v⁺, v⁻)`.
//!
//! Each sub-variance is advanced with Andersen's quadratic-exponential (QE)
//! scheme from one uniform per step. The log-spot increment uses the
//! three-factor decomposition
//!
//! ```text
//! Δ ln S = (r - q)Δ - ½ v̄Δ
//!        + Σ± ρ± (v±' - v± - βθ±Δ + β v̄± Δ) / α
//!        + sqrt(Σ± (1 - ρ±²) v̄± Δ) · Z₀
//! ```
//!
//! where `v̄` is the trapezoidal average over the step and `ρ± = ρ̄ ± η`.
//! With `α = 0` the variances are deterministic and the stochastic integrals
//! are sampled directly as `sqrt(v̄±Δ) · Φ⁻¹(U±)`.
//!
//! Path `i` draws from a ChaCha8 stream keyed by `(seed, i)`, four numbers per
//! step in a fixed order, so results never depend on thread count and two
//! models run with the same seed and step count see common random numbers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackscholes::norm_inv;
use crate::error::{check, Error, Result};
use crate::model::ModelParams;

/// Paths per accumulation chunk. Chunks are merged in index order.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub bridge_enabled: bool,
    pub feller_refine_threshold: f64,
    pub psi_threshold: f64,
    /// Per-factor drift correction making the discrete spot an exact martingale.
    pub martingale_correction: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 100_000,
            steps_per_year: 252,
            seed: 42,
            bridge_enabled: true,
            feller_refine_threshold: 1.0,
            psi_threshold: 1.5,
            martingale_correction: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 1000 {
            return Err(crate::error::invalid("paths", format!("{} < 1000", self.paths)));
        }
        if self.steps_per_year < 50 {
            return Err(crate::error::invalid(
                "steps_per_year",
                format!("{} < 50", self.steps_per_year),
            ));
        }
        check(
            "psi_threshold",
            self.psi_threshold,
            (1.0..=2.0).contains(&self.psi_threshold),
            "must be in [1, 2]",
        )?;
        check(
            "feller_refine_threshold",
            self.feller_refine_threshold,
            self.feller_refine_threshold > 0.0,
            "must be > 0",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub log_spot: f64,
    pub v_plus: f64,
    pub v_minus: f64,
    /// False once the path has hit the absorbing barrier, if one was given.
    pub alive: bool,
    pub sum_sq_returns: f64,
}

/// Exact conditional mean and variance of a CIR process after `dt`.
pub fn cir_moments(v: f64, theta: f64, beta: f64, alpha: f64, dt: f64) -> (f64, f64) {
    let e = (-beta * dt).exp();
    let a2 = alpha * alpha;
    let mean = theta + (v - theta) * e;
    let var = v * a2 * e / beta * (1.0 - e) + theta * a2 / (2.0 * beta) * (1.0 - e) * (1.0 - e);
    (mean, var)
}

/// Branch taken by a QE step, carrying what the martingale correction needs.
#[derive(Debug, Clone, Copy)]
enum QeBranch {
    Deterministic,
    Quadratic { a: f64, b2: f64 },
    Exponential { p: f64, rate: f64 },
}

impl QeBranch {
    /// `ln E[exp(c · v')]` under the sampled distribution, if finite.
    fn log_mgf(self, c: f64, mean: f64) -> Option<f64> {
        match self {
            QeBranch::Deterministic => Some(c * mean),
            QeBranch::Quadratic { a, b2 } => {
                let den = 1.0 - 2.0 * c * a;
                (den > 0.0).then(|| c * b2 * a / den - 0.5 * den.ln())
            }
            QeBranch::Exponential { p, rate } => {
                (c < rate).then(|| (p + rate * (1.0 - p) / (rate - c)).ln())
            }
        }
    }
}

#[inline]
fn qe_step(v: f64, theta: f64, e: f64, beta: f64, alpha: f64, psi_c: f64, u: f64) -> (f64, QeBranch, f64) {
    let a2 = alpha * alpha;
    let m = theta + (v - theta) * e;
    let s2 = v * a2 * e / beta * (1.0 - e) + theta * a2 / (2.0 * beta) * (1.0 - e) * (1.0 - e);
    if s2 <= 0.0 || m <= 0.0 {
        return (m.max(0.0), QeBranch::Deterministic, m.max(0.0));
    }
    let psi = s2 / (m * m);
    if psi <= psi_c {
        let inv = 2.0 / psi;
        let b2 = inv - 1.0 + (inv * (inv - 1.0)).sqrt();
        let a = m / (1.0 + b2);
        let b = b2.sqrt();
        let z = norm_inv(u);
        (a * (b + z) * (b + z), QeBranch::Quadratic { a, b2 }, m)
    } else {
        let p = (psi - 1.0) / (psi + 1.0);
        let rate = (1.0 - p) / m;
        let next = if u <= p { 0.0 } else { ((1.0 - p) / (1.0 - u)).ln() / rate };
        (next, QeBranch::Exponential { p, rate }, m)
    }
}

/// One QE step of a CIR variance with long-run level `theta_star`, using
/// the default switching value 1.5.
pub fn qe_variance_step(v: f64, theta_star: f64, beta: f64, alpha: f64, dt: f64, uniform_draw: f64) -> f64 {
    qe_variance_step_with(v, theta_star, beta, alpha, dt, uniform_draw, 1.5)
}

pub fn qe_variance_step_with(
    v: f64,
    theta_star: f64,
    beta: f64,
    alpha: f64,
    dt: f64,
    uniform_draw: f64,
    psi_threshold: f64,
) -> f64 {
    let e = (-beta * dt).exp();
    let u = uniform_draw.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    qe_step(v.max(0.0), theta_star, e, beta, alpha, psi_threshold, u).0
}

/// Probability that a Brownian bridge in log space between `log_s0` and
/// `log_s1` with total variance `effective_variance` touches `log_barrier`.
pub fn bridge_crossing_prob(log_s0: f64, log_s1: f64, log_barrier: f64, effective_variance: f64) -> f64 {
    let prod = (log_barrier - log_s0) * (log_barrier - log_s1);
    if prod <= 0.0 {
        return 1.0;
    }
    if effective_variance <= 0.0 {
        return 0.0;
    }
    (-2.0 * prod / effective_variance).exp()
}

/// Base steps for `horizon`, multiplied up when the Feller ratio is large.
pub fn effective_steps(params: &ModelParams, cfg: &McConfig, horizon: f64) -> usize {
    let base = ((cfg.steps_per_year as f64 * horizon) - 1e-9).ceil().max(1.0) as usize;
    let mult = (params.feller_ratio() / cfg.feller_refine_threshold - 1e-9).ceil().max(1.0) as usize;
    base * mult
}

/// One simulated step as seen by an observer.
#[derive(Debug, Clone, Copy)]
pub struct StepView {
    pub index: usize,
    pub t0: f64,
    pub dt: f64,
    pub log_s0: f64,
    pub log_s1: f64,
    pub v0_plus: f64,
    pub v0_minus: f64,
    pub v1_plus: f64,
    pub v1_minus: f64,
    /// Trapezoidal total variance times `dt`, the bridge input.
    pub var_dt: f64,
    /// Spare uniform reserved for sampling barrier crossings.
    pub bridge_uniform: f64,
}

/// Per-path statistic collector. Each path produces `outputs()` numbers whose
/// means and within-block covariances are accumulated.
pub trait PathObserver: Sync {
    type State;
    fn outputs(&self) -> usize;
    /// Covariances are kept only inside consecutive blocks of this size.
    fn block(&self) -> usize {
        self.outputs()
    }
    fn start(&self) -> Self::State;
    fn step(&self, state: &mut Self::State, view: &StepView);
    fn finish(&self, state: Self::State, terminal: &PathState, out: &mut [f64]);
}

/// Means and block covariances of per-path outputs, merged with Chan's
/// pairwise update.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    count: u64,
    dim: usize,
    block: usize,
    mean: Vec<f64>,
    /// Centered co-moments, one `block × block` matrix per block.
    comoment: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize, block: usize) -> Self {
        assert!(block > 0 && dim.is_multiple_of(block), "block must divide dim");
        Self {
            count: 0,
            dim,
            block,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * block],
        }
    }

    fn from_rows(rows: &[f64], dim: usize, block: usize) -> Self {
        let mut m = Self::new(dim, block);
        let n = rows.len() / dim;
        if n == 0 {
            return m;
        }
        m.count = n as u64;
        for row in rows.chunks_exact(dim) {
            for (acc, x) in m.mean.iter_mut().zip(row) {
                *acc += x;
            }
        }
        for acc in &mut m.mean {
            *acc /= n as f64;
        }
        let mut centered = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((c, x), mu) in centered.iter_mut().zip(row).zip(&m.mean) {
                *c = x - mu;
            }
            for (b, cb) in centered.chunks_exact(block).enumerate() {
                let base = b * block * block;
                for i in 0..block {
                    for j in 0..block {
                        m.comoment[base + i * block + j] += cb[i] * cb[j];
                    }
                }
            }
        }
        m
    }

    pub fn merge(&mut self, other: &Moments) {
        assert_eq!((self.dim, self.block), (other.dim, other.block));
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let bs = self.block;
        for b in 0..self.dim / bs {
            let base = b * bs * bs;
            for i in 0..bs {
                for j in 0..bs {
                    let k = base + i * bs + j;
                    self.comoment[k] += other.comoment[k] + delta[b * bs + i] * delta[b * bs + j] * na * nb / n;
                }
            }
        }
        for (a, d) in self.mean.iter_mut().zip(&delta) {
            *a += d * nb / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Sample covariance of outputs `i` and `j`, which must share a block.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        let (bi, bj) = (i / self.block, j / self.block);
        assert_eq!(bi, bj, "outputs {i} and {j} are in different blocks");
        let (ri, rj) = (i % self.block, j % self.block);
        self.comoment[bi * self.block * self.block + ri * self.block + rj] / (self.count as f64 - 1.0)
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance(i, i)
    }

    /// Standard error of the mean of output `i`.
    pub fn std_error(&self, i: usize) -> f64 {
        (self.variance(i).max(0.0) / self.count as f64).sqrt()
    }
}

/// Model constants hoisted out of the step loop.
#[derive(Debug, Clone, Copy)]
struct Stepper {
    dt: f64,
    e: f64,
    beta: f64,
    alpha: f64,
    theta: [f64; 2],
    rho: [f64; 2],
    drift: f64,
    psi_c: f64,
    correction: bool,
}

impl Stepper {
    fn new(p: &ModelParams, dt: f64, cfg: &McConfig) -> Self {
        Self {
            dt,
            e: (-p.beta * dt).exp(),
            beta: p.beta,
            alpha: p.alpha,
            theta: [p.theta_plus, p.theta_minus],
            rho: [p.rho_plus(), p.rho_minus()],
            drift: (p.r - p.q) * dt,
            psi_c: cfg.psi_threshold,
            correction: cfg.martingale_correction,
        }
    }

    /// Advances `(ln S, v⁺, v⁻)` one step. Returns the new state and `v̄Δ`.
    #[inline]
    fn advance(&self, log_s: f64, v: [f64; 2], u: [f64; 2], z0: f64) -> (f64, [f64; 2], f64) {
        let dt = self.dt;
        let mut next = [0.0; 2];
        let mut incr = self.drift;
        let mut resid_var = 0.0;
        let mut total_avg = 0.0;
        for f in 0..2 {
            let rho = self.rho[f];
            if self.alpha == 0.0 {
                let m = self.theta[f] + (v[f] - self.theta[f]) * self.e;
                next[f] = m;
                let avg = 0.5 * (v[f] + m);
                incr += -0.5 * avg * dt + rho * (avg * dt).sqrt() * norm_inv(u[f]);
                resid_var += (1.0 - rho * rho) * avg * dt;
                total_avg += avg;
                continue;
            }
            let (vn, branch, mean) = qe_step(v[f], self.theta[f], self.e, self.beta, self.alpha, self.psi_c, u[f]);
            next[f] = vn;
            let avg = 0.5 * (v[f] + vn);
            let k0 = -rho * self.beta * self.theta[f] * dt / self.alpha;
            let k1 = rho * (0.5 * self.beta * dt - 1.0) / self.alpha - 0.25 * dt;
            let k2 = rho * (0.5 * self.beta * dt + 1.0) / self.alpha - 0.25 * dt;
            let half_res = 0.25 * (1.0 - rho * rho) * dt;
            let mut offset = k0;
            if self.correction {
                if let Some(lm) = branch.log_mgf(k2 + half_res, mean) {
                    offset = -lm - (k1 + half_res) * v[f];
                }
            }
            incr += offset + k1 * v[f] + k2 * vn;
            resid_var += (1.0 - rho * rho) * avg * dt;
            total_avg += avg;
        }
        incr += resid_var.max(0.0).sqrt() * z0;
        (log_s + incr, next, total_avg * dt)
    }
}

#[inline]
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulates one path and returns its terminal state.
#[allow(clippy::too_many_arguments)]
fn run_path<O: PathObserver>(
    stepper: &Stepper,
    p: &ModelParams,
    log_spot: f64,
    steps: usize,
    seed: u64,
    path: usize,
    barrier: Option<(f64, bool)>,
    obs: &O,
    state: &mut O::State,
) -> Result<PathState> {
    let mut rng = path_rng(seed, path);
    let mut ls = log_spot;
    let mut v = [p.v0_plus, p.v0_minus];
    let mut alive = true;
    let mut ssq = 0.0;
    for i in 0..steps {
        let u = [open_uniform(&mut rng), open_uniform(&mut rng)];
        let z0: f64 = rng.sample(StandardNormal);
        let ub = open_uniform(&mut rng);
        let (ls1, v1, var_dt) = stepper.advance(ls, v, u, z0);
        if !ls1.is_finite() {
            return Err(Error::MonteCarlo(format!("non-finite log spot on path {path} at step {i}")));
        }
        if let Some((lb, use_bridge)) = barrier {
            if alive {
                let p_hit = if use_bridge {
                    bridge_crossing_prob(ls, ls1, lb, var_dt)
                } else if (lb - ls) * (lb - ls1) <= 0.0 {
                    1.0
                } else {
                    0.0
                };
                alive = ub >= p_hit;
            }
        }
        let view = StepView {
            index: i,
            t0: i as f64 * stepper.dt,
            dt: stepper.dt,
            log_s0: ls,
            log_s1: ls1,
            v0_plus: v[0],
            v0_minus: v[1],
            v1_plus: v1[0],
            v1_minus: v1[1],
            var_dt,
            bridge_uniform: ub,
        };
        obs.step(state, &view);
        ssq += (ls1 - ls) * (ls1 - ls);
        ls = ls1;
        v = v1;
    }
    Ok(PathState {
        log_spot: ls,
        v_plus: v[0],
        v_minus: v[1],
        alive,
        sum_sq_returns: ssq,
    })
}

fn check_inputs(params: &ModelParams, spot: f64, horizon: f64, steps: usize, cfg: &McConfig) -> Result<()> {
    params.validate()?;
    cfg.validate()?;
    check("spot", spot, spot > 0.0, "must be > 0")?;
    check("horizon", horizon, horizon > 0.0, "must be > 0")?;
    if steps == 0 {
        return Err(crate::error::invalid("steps", "must be >= 1"));
    }
    Ok(())
}

/// Runs `cfg.paths` paths with the Feller-refined step count.
pub fn evolve_paths<O: PathObserver>(
    params: &ModelParams,
    spot: f64,
    horizon: f64,
    cfg: &McConfig,
    observer: &O,
) -> Result<Moments> {
    let steps = effective_steps(params, cfg, horizon);
    evolve_paths_with_steps(params, spot, horizon, steps, cfg, observer)
}

/// Runs `cfg.paths` paths on a uniform grid of exactly `steps` steps.
pub fn evolve_paths_with_steps<O: PathObserver>(
    params: &ModelParams,
    spot: f64,
    horizon: f64,
    steps: usize,
    cfg: &McConfig,
    observer: &O,
) -> Result<Moments> {
    evolve_common(std::slice::from_ref(params), spot, horizon, steps, cfg, observer)
}

/// Runs several models on common random numbers: path `i` of every model
/// uses the same stream. Outputs are interleaved block by block, so block
/// `j` of the result holds block `j` of model 0, then of model 1, and so on.
pub fn evolve_common<O: PathObserver>(
    models: &[ModelParams],
    spot: f64,
    horizon: f64,
    steps: usize,
    cfg: &McConfig,
    observer: &O,
) -> Result<Moments> {
    if models.is_empty() {
        return Err(crate::error::invalid("models", "at least one model required"));
    }
    for p in models {
        check_inputs(p, spot, horizon, steps, cfg)?;
    }
    let k = observer.outputs();
    let b = observer.block();
    if b == 0 || !k.is_multiple_of(b) {
        return Err(crate::error::invalid("observer", "block size must divide output count"));
    }
    let nm = models.len();
    let dim = k * nm;
    let dt = horizon / steps as f64;
    let steppers: Vec<Stepper> = models.iter().map(|p| Stepper::new(p, dt, cfg)).collect();
    let log_spot = spot.ln();
    let chunks = cfg.paths.div_ceil(CHUNK);
    let parts: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(cfg.paths);
            let mut rows = vec![0.0; (hi - lo) * dim];
            let mut out = vec![0.0; k];
            for (row, path) in rows.chunks_exact_mut(dim).zip(lo..hi) {
                for (m, (p, st)) in models.iter().zip(&steppers).enumerate() {
                    let mut state = observer.start();
                    let terminal = run_path(st, p, log_spot, steps, cfg.seed, path, None, observer, &mut state)?;
                    observer.finish(state, &terminal, &mut out);
                    for (blk, vals) in out.chunks_exact(b).enumerate() {
                        let at = blk * b * nm + m * b;
                        row[at..at + b].copy_from_slice(vals);
                    }
                }
            }
            if rows.iter().any(|x| !x.is_finite()) {
                return Err(Error::MonteCarlo("observer produced a non-finite output".into()));
            }
            Ok(Moments::from_rows(&rows, dim, b * nm))
        })
        .collect();
    let mut total = Moments::new(dim, b * nm);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

struct NoObserver;

impl PathObserver for NoObserver {
    type State = ();
    fn outputs(&self) -> usize {
        0
    }
    fn block(&self) -> usize {
        1
    }
    fn start(&self) {}
    fn step(&self, _: &mut (), _: &StepView) {}
    fn finish(&self, _: (), _: &PathState, _: &mut [f64]) {}
}

/// Terminal states of every path, in path order. With `barrier`, `alive`
/// records survival, sampled against the bridge probability when enabled.
pub fn terminal_states(
    params: &ModelParams,
    spot: f64,
    horizon: f64,
    cfg: &McConfig,
    barrier: Option<f64>,
) -> Result<Vec<PathState>> {
    let steps = effective_steps(params, cfg, horizon);
    check_inputs(params, spot, horizon, steps, cfg)?;
    if let Some(b) = barrier {
        check("barrier", b, b > 0.0, "must be > 0")?;
    }
    let stepper = Stepper::new(params, horizon / steps as f64, cfg);
    let lb = barrier.map(|b| (b.ln(), cfg.bridge_enabled));
    let log_spot = spot.ln();
    (0..cfg.paths)
        .into_par_iter()
        .map(|i| run_path(&stepper, params, log_spot, steps, cfg.seed, i, lb, &NoObserver, &mut ()))
        .collect()
}
