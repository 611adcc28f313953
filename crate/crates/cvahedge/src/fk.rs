//! Monte-Carlo estimators for the recursive claim-value functions and the
//! counterparty-risk value function, with finite-difference gradients and
//! contagion jump differences.
//!
//! Two interchangeable estimators are provided for the weighted claim value
//! `F_alpha(t, x, z)`:
//!
//! - [`estimate_f_direct`] averages the payoff functional over full market
//!   simulations restarted at `(t, x, z)`;
//! - [`estimate_f_recursive`] conditions on the diffusion skeleton: it
//!   discounts by the survivors' hazard and recurses over default states,
//!   bottoming out at the all-defaulted closed form. Source integrals are
//!   linear in the inner values, so small inner path counts keep the
//!   estimator unbiased.
//!
//! Both agree in distribution; cross-checking them (and the closed-form
//! oracles) is the backbone of the verification suite.

use crate::claims::{ClaimSpec, Portfolio};
use crate::error::{Error, Result};
use crate::model::{
    self, compensator_increment, DefaultState, MarketPath, ModelParams, Scheme, SimConfig,
};
use crate::parallel::run_indexed;
use crate::quad::composite_simpson;
use crate::rng;
use crate::stats::{estimate_from, Estimate};
use std::collections::HashMap;
use std::sync::Mutex;

/// Weighted terminal/flow specification for a claim value function.
///
/// The weights pick which cash-flow components enter: the promised payoff,
/// the recovery, and the running flows (dividend rate and recovery
/// compensation).
#[derive(Debug, Clone)]
pub struct CauchySpec {
    pub claim: ClaimSpec,
    pub alpha: [f64; 3],
}

impl CauchySpec {
    pub fn new(claim: ClaimSpec, alpha: [f64; 3]) -> Self {
        CauchySpec { claim, alpha }
    }

    /// Gain-level weights `(1, 1, 1)`.
    pub fn gain(claim: ClaimSpec) -> Self {
        Self::new(claim, [1.0, 1.0, 1.0])
    }

    /// Terminal condition `alpha1 xi (1 - K) + alpha2 Z K`.
    pub fn terminal(&self, z: DefaultState) -> f64 {
        let c = &self.claim;
        self.alpha[0] * c.xi(z) * (1.0 - c.k(z)) + self.alpha[1] * c.recovery(z) * c.k(z)
    }

    /// Value at the all-defaulted state (no dynamics left).
    pub fn all_defaulted_value(&self, z: DefaultState, t: f64, horizon: f64) -> f64 {
        let c = &self.claim;
        self.terminal(z) + self.alpha[2] * (1.0 - c.k(z)) * c.rate(z) * (horizon - t)
    }
}

/// Which estimator backs a value evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FEstimator {
    Direct,
    Recursive,
}

/// Estimator controls.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Claim maturity `T`.
    pub horizon: f64,
    /// Simulation grid step.
    pub grid_step: f64,
    pub scheme: Scheme,
    /// Outer path count.
    pub paths: usize,
    /// Inner path counts per recursion depth (entry 0 applies at depth 1;
    /// the last entry repeats for deeper levels).
    pub inner_paths: Vec<usize>,
    /// Evaluate inner-estimate source integrands every `source_stride` grid
    /// nodes (1 = every node). All-defaulted inner states are exact and are
    /// always integrated on the full grid.
    pub source_stride: usize,
    /// Relative finite-difference bump, in `(0, 0.5)`.
    pub bump_rel: f64,
    /// Recursion guard; the state lattice alone bounds depth by the name
    /// count.
    pub depth_cap: usize,
    /// Common random numbers across paired evaluations.
    pub crn: bool,
    pub seed: u64,
    /// Worker threads for the outer loop (0 = available parallelism).
    pub threads: usize,
}

impl EstimatorConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        EstimatorConfig {
            horizon,
            grid_step: 0.02,
            scheme: Scheme::EulerFullTruncation,
            paths: 2000,
            inner_paths: vec![16, 4],
            source_stride: 2,
            bump_rel: 0.05,
            depth_cap: 24,
            crn: true,
            seed,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !(self.grid_step > 0.0) {
            return Err(Error::Domain("horizon and grid step must be positive".into()));
        }
        if self.paths == 0 || self.inner_paths.is_empty() || self.inner_paths.contains(&0) {
            return Err(Error::Domain("path counts must be at least 1".into()));
        }
        if !(self.bump_rel > 0.0 && self.bump_rel < 0.5) {
            return Err(Error::Domain("bump_rel must lie in (0, 0.5)".into()));
        }
        if self.source_stride == 0 || self.depth_cap == 0 {
            return Err(Error::Domain("source_stride and depth_cap must be at least 1".into()));
        }
        Ok(())
    }

    fn draws_at_depth(&self, depth: usize) -> usize {
        if depth == 0 {
            self.paths
        } else {
            *self
                .inner_paths
                .get((depth - 1).min(self.inner_paths.len() - 1))
                .unwrap()
        }
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon: self.horizon,
            step: self.grid_step,
            n_paths: 1,
            seed: 0,
            substep_cap: 32,
            scheme: self.scheme,
        }
    }
}

fn check_state(
    model: &ModelParams,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<()> {
    cfg.validate()?;
    if x.len() != model.n_names() || z.n() != model.n_names() {
        return Err(Error::Domain("state dimensions disagree with the model".into()));
    }
    if t < 0.0 || t > cfg.horizon {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: cfg.horizon });
    }
    for i in z.survivors() {
        if x[i] <= 0.0 {
            return Err(Error::Domain(format!(
                "intensity of name {i} must be positive, got {}",
                x[i]
            )));
        }
    }
    Ok(())
}

fn finite_or_err(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical("estimator produced a non-finite value".into()))
    }
}

/// Direct estimator: averages the claim payoff functional along restarted
/// market simulations.
pub fn estimate_f_direct(
    model: &ModelParams,
    spec: &CauchySpec,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    estimate_f_direct_seeded(model, spec, t, x, z, cfg, cfg.seed)
}

fn estimate_f_direct_seeded(
    model: &ModelParams,
    spec: &CauchySpec,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<Estimate> {
    check_state(model, t, x, z, cfg)?;
    if t >= cfg.horizon {
        return Ok(Estimate::exact(spec.terminal(z)));
    }
    if z.all_defaulted() {
        return Ok(Estimate::exact(spec.all_defaulted_value(z, t, cfg.horizon)));
    }
    let sim = cfg.sim_config();
    let values: Vec<Result<f64>> = run_indexed(cfg.paths, cfg.threads, |p| {
        let mut rng = rng::stream(seed, rng::DOMAIN_FK_DIRECT, p as u64);
        let path = model::simulate_market_from(model, &sim, t, x, z, &mut rng)?;
        finite_or_err(direct_payoff(spec, &path))
    });
    let vals = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(estimate_from(&vals))
}

/// Payoff functional of the weighted value along one market path: terminal
/// components at `T`, the dividend rate while untriggered, minus the
/// recovery-compensation flow after the trigger.
fn direct_payoff(spec: &CauchySpec, path: &MarketPath) -> f64 {
    let claim = &spec.claim;
    let z_end = path.final_state();
    let mut rate_term = 0.0;
    let mut comp_term = 0.0;
    for seg in 0..path.grid.len() - 1 {
        let dt = path.grid[seg + 1] - path.grid[seg];
        let zs = path.states[seg];
        if !claim.triggered(zs) {
            rate_term += claim.rate(zs) * dt;
        } else {
            for j in zs.survivors() {
                let dz = claim.recovery(zs.flip(j)) - claim.recovery(zs);
                if dz != 0.0 {
                    let xj = 0.5 * (path.intensities[seg][j] + path.intensities[seg + 1][j]);
                    comp_term += dz * xj * dt;
                }
            }
        }
    }
    spec.terminal(z_end) + spec.alpha[2] * (rate_term - comp_term)
}

/// Recursive estimator: hazard-discounted diffusion skeleton with sources
/// recursing over the default-state lattice.
pub fn estimate_f_recursive(
    model: &ModelParams,
    spec: &CauchySpec,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    check_state(model, t, x, z, cfg)?;
    recursive_f(model, spec, t, x, z, cfg, 0, cfg.seed)
}

#[allow(clippy::too_many_arguments)]
fn recursive_f(
    model: &ModelParams,
    spec: &CauchySpec,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
    depth: usize,
    seed: u64,
) -> Result<Estimate> {
    if depth > cfg.depth_cap {
        return Err(Error::DepthExceeded(cfg.depth_cap));
    }
    if t >= cfg.horizon {
        return Ok(Estimate::exact(spec.terminal(z)));
    }
    if z.all_defaulted() {
        return Ok(Estimate::exact(spec.all_defaulted_value(z, t, cfg.horizon)));
    }
    let n_draws = if model.is_deterministic() { 1 } else { cfg.draws_at_depth(depth) };
    let threads = if depth == 0 { cfg.threads } else { 1 };
    let values: Vec<Result<f64>> = run_indexed(n_draws, threads, |p| {
        recursive_draw(model, spec, t, x, z, cfg, depth, rng::mix(seed, p as u64))
    });
    let vals = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(estimate_from(&vals))
}

#[allow(clippy::too_many_arguments)]
fn recursive_draw(
    model: &ModelParams,
    spec: &CauchySpec,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
    depth: usize,
    draw_seed: u64,
) -> Result<f64> {
    let claim = &spec.claim;
    let horizon = cfg.horizon;
    let mut rng = rng::stream(draw_seed, rng::DOMAIN_FK_RECURSIVE, depth as u64);
    let path =
        model::diffusion_masked(model, t, x, horizon, cfg.grid_step, cfg.scheme, z, &mut rng)?;
    let m = path.grid.len() - 1;
    let h = (horizon - t) / m as f64;

    // Hazard discount of the surviving names along the skeleton.
    let mut disc = Vec::with_capacity(m + 1);
    disc.push(1.0);
    let mut cum = 0.0;
    for k in 0..m {
        let mut inc = 0.0;
        for j in z.survivors() {
            inc += compensator_increment(path.values[k][j], path.values[k + 1][j], h);
        }
        cum += inc;
        disc.push((-cum).exp());
    }

    let mut value = spec.terminal(z) * disc[m];
    if spec.alpha[2] != 0.0 && !claim.triggered(z) && claim.rate(z) != 0.0 {
        value += spec.alpha[2] * claim.rate(z) * composite_simpson(&disc, h);
    }

    for j in z.survivors() {
        let zj = z.with_default(j);
        let comp = spec.alpha[2] * claim.k(z) * (claim.recovery(zj) - claim.recovery(z));
        if zj.all_defaulted() {
            // Inner values are closed-form: integrate on the full grid.
            let integrand: Vec<f64> = (0..=m)
                .map(|k| {
                    let inner = spec.all_defaulted_value(zj, path.grid[k], horizon);
                    path.values[k][j] * (inner - comp) * disc[k]
                })
                .collect();
            value += composite_simpson(&integrand, h);
        } else if model.is_deterministic() {
            // Single-draw recursion: the full grid and Simpson keep the
            // deterministic specialization at quadrature accuracy.
            let mut integrand = Vec::with_capacity(m + 1);
            for k in 0..=m {
                let s = path.grid[k];
                let inner = if k == m {
                    spec.terminal(zj)
                } else {
                    let shifted = shift_for_jump(model, &path.values[k], zj, j);
                    let salt = ((j as u64) << 32) ^ (k as u64) ^ 0x5151_0000;
                    recursive_f(model, spec, s, &shifted, zj, cfg, depth + 1, rng::mix(draw_seed, salt))?
                        .value
                };
                integrand.push(path.values[k][j] * (inner - comp) * disc[k]);
            }
            value += composite_simpson(&integrand, h);
        } else {
            // Inner values need their own estimates: sample the integrand on
            // a strided subgrid and recurse with fresh sub-seeds.
            let stride = cfg.source_stride.max(1);
            let mut nodes: Vec<usize> = (0..=m).step_by(stride).collect();
            if *nodes.last().unwrap() != m {
                nodes.push(m);
            }
            let mut samples = Vec::with_capacity(nodes.len());
            for &k in &nodes {
                let s = path.grid[k];
                let inner = if k == m {
                    spec.terminal(zj)
                } else {
                    let shifted = shift_for_jump(model, &path.values[k], zj, j);
                    let salt = ((j as u64) << 32) ^ (k as u64) ^ 0x5151_0000;
                    recursive_f(model, spec, s, &shifted, zj, cfg, depth + 1, rng::mix(draw_seed, salt))?
                        .value
                };
                samples.push(path.values[k][j] * (inner - comp) * disc[k]);
            }
            let mut integral = 0.0;
            for (ks, fs) in nodes.windows(2).zip(samples.windows(2)) {
                integral += 0.5 * (fs[0] + fs[1]) * (path.grid[ks[1]] - path.grid[ks[0]]);
            }
            value += integral;
        }
    }
    finite_or_err(value)
}

/// Post-jump intensity vector when name `j` defaults at skeleton point `x`:
/// survivors of the new state absorb the contagion column of `j`.
fn shift_for_jump(model: &ModelParams, x: &[f64], zj: DefaultState, j: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in zj.survivors() {
        out[i] += model.contagion[i][j];
    }
    out
}

/// Survival discount `E[exp(-int_t^T sum_surviving X~_k du)]` estimated on
/// the diffusion skeleton (the recursive estimator's discount component).
pub fn survival_discount(
    model: &ModelParams,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    check_state(model, t, x, z, cfg)?;
    if t >= cfg.horizon {
        return Ok(Estimate::exact(1.0));
    }
    let n_draws = if model.is_deterministic() { 1 } else { cfg.paths };
    let values: Vec<Result<f64>> = run_indexed(n_draws, cfg.threads, |p| {
        let mut rng = rng::stream(cfg.seed, rng::DOMAIN_DIFFUSION, p as u64);
        let path =
            model::diffusion_masked(model, t, x, cfg.horizon, cfg.grid_step, cfg.scheme, z, &mut rng)?;
        let m = path.grid.len() - 1;
        let h = (cfg.horizon - t) / m as f64;
        let mut cum = 0.0;
        for k in 0..m {
            for j in z.survivors() {
                cum += compensator_increment(path.values[k][j], path.values[k + 1][j], h);
            }
        }
        finite_or_err((-cum).exp())
    });
    let vals = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(estimate_from(&vals))
}

/// Memo for inner claim values in the counterparty-risk estimator. Sound for
/// deterministic models, where the value at `(claim, state, time)` is a
/// number rather than a random draw; node times repeat across outer paths so
/// the cache collapses the nested work.
type GMemo = Mutex<HashMap<(usize, u32, u64), f64>>;

/// Counterparty-risk value `g(t, x, z)`: expected running payment-stream
/// source along restarted market paths, with inner claim values from the
/// recursive estimator. The positive part is applied inside the path
/// integral, never to the averaged value.
pub fn estimate_g(
    model: &ModelParams,
    portfolio: &Portfolio,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    estimate_g_seeded(model, portfolio, t, x, z, cfg, cfg.seed)
}

fn estimate_g_seeded(
    model: &ModelParams,
    portfolio: &Portfolio,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<Estimate> {
    check_state(model, t, x, z, cfg)?;
    let cpty = model.counterparty();
    if z.is_defaulted(cpty) || t >= cfg.horizon {
        return Ok(Estimate::exact(0.0));
    }
    if portfolio.weights.iter().all(|&b| b == 0.0) {
        return Ok(Estimate::exact(0.0));
    }
    let memo: Option<GMemo> = model.is_deterministic().then(|| Mutex::new(HashMap::new()));
    let sim = cfg.sim_config();
    let specs: Vec<CauchySpec> = (0..portfolio.n_references())
        .map(|i| CauchySpec::gain(portfolio.reference(i).clone()))
        .collect();

    let values: Vec<Result<f64>> = run_indexed(cfg.paths, cfg.threads, |p| {
        let mut rng = rng::stream(seed, rng::DOMAIN_G, p as u64);
        let path = model::simulate_market_from(model, &sim, t, x, z, &mut rng)?;
        let draw_seed = rng::mix(seed, p as u64);
        g_path_integral(model, portfolio, &specs, &path, cfg, draw_seed, memo.as_ref())
    });
    let vals = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(estimate_from(&vals))
}

/// `int Upsilon(s) X_cpty(s) 1(cpty alive) ds` along one path. Trapezoid
/// between same-state nodes, left-value rectangle across default events.
fn g_path_integral(
    model: &ModelParams,
    portfolio: &Portfolio,
    specs: &[CauchySpec],
    path: &MarketPath,
    cfg: &EstimatorConfig,
    draw_seed: u64,
    memo: Option<&GMemo>,
) -> Result<f64> {
    let cpty = model.counterparty();
    let mut total = 0.0;
    let mut prev = 0.0;
    for k in 0..path.grid.len() {
        let zk = path.states[k];
        let s = path.grid[k];
        if zk.is_defaulted(cpty) {
            // Settle the last live segment with its left value.
            if k > 0 {
                total += prev * (s - path.grid[k - 1]);
            }
            break;
        }
        let f_here = if s >= cfg.horizon {
            0.0
        } else {
            let zc = zk.with_default(cpty);
            let mut expo = 0.0;
            for (i, spec) in specs.iter().enumerate() {
                let claim = portfolio.reference(i);
                if portfolio.weights[i] == 0.0 || claim.triggered(zc) {
                    continue;
                }
                let shifted = shift_for_jump(model, &path.intensities[k], zc, cpty);
                let inner =
                    inner_claim_value(model, spec, i, s, &shifted, zc, cfg, draw_seed, k, memo)?;
                expo += portfolio.weights[i] * inner;
            }
            portfolio.cpty_loss(zc) * expo.max(0.0) * path.intensities[k][cpty]
        };
        if k > 0 {
            let dt = s - path.grid[k - 1];
            if path.states[k - 1] == zk {
                total += 0.5 * (prev + f_here) * dt;
            } else {
                total += prev * dt;
            }
        }
        prev = f_here;
    }
    finite_or_err(total)
}

#[allow(clippy::too_many_arguments)]
fn inner_claim_value(
    model: &ModelParams,
    spec: &CauchySpec,
    claim_index: usize,
    s: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
    draw_seed: u64,
    node: usize,
    memo: Option<&GMemo>,
) -> Result<f64> {
    let salt = ((claim_index as u64) << 40) ^ ((node as u64) << 8) ^ 0xC0FE;
    if let Some(m) = memo {
        let key = (claim_index, z.bits(), s.to_bits());
        if let Some(&v) = m.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let v = recursive_f(model, spec, s, x, z, cfg, 1, rng::mix(draw_seed, salt))?.value;
        m.lock().unwrap().insert(key, v);
        Ok(v)
    } else {
        Ok(recursive_f(model, spec, s, x, z, cfg, 1, rng::mix(draw_seed, salt))?.value)
    }
}

/// A value evaluation `(t, x, z, seed) -> estimate`, the shape consumed by
/// the gradient and jump-difference operators.
pub type ValueEval<'a> = dyn Fn(f64, &[f64], DefaultState, u64) -> Result<Estimate> + Sync + 'a;

/// Wraps one of the claim-value estimators as a [`ValueEval`].
pub fn f_evaluator<'a>(
    model: &'a ModelParams,
    spec: &'a CauchySpec,
    which: FEstimator,
    cfg: &'a EstimatorConfig,
) -> impl Fn(f64, &[f64], DefaultState, u64) -> Result<Estimate> + Sync + 'a {
    move |t, x, z, seed| match which {
        FEstimator::Direct => estimate_f_direct_seeded(model, spec, t, x, z, cfg, seed),
        FEstimator::Recursive => {
            check_state(model, t, x, z, cfg)?;
            recursive_f(model, spec, t, x, z, cfg, 0, seed)
        }
    }
}

/// Wraps the counterparty-risk estimator as a [`ValueEval`].
pub fn g_evaluator<'a>(
    model: &'a ModelParams,
    portfolio: &'a Portfolio,
    cfg: &'a EstimatorConfig,
) -> impl Fn(f64, &[f64], DefaultState, u64) -> Result<Estimate> + Sync + 'a {
    move |t, x, z, seed| estimate_g_seeded(model, portfolio, t, x, z, cfg, seed)
}

/// Finite-difference gradient in the intensity coordinates.
#[derive(Debug, Clone)]
pub struct GradientX {
    pub grad: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Bumps shrunk to keep the lower evaluation strictly positive.
    pub shrunk: Vec<bool>,
}

/// Central finite differences with common random numbers across the paired
/// evaluations. Coordinates of defaulted names are zero (the value never
/// reads them). A bump that would cross zero is shrunk and flagged.
pub fn gradient_x(
    eval: &ValueEval<'_>,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<GradientX> {
    cfg.validate()?;
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut se = vec![0.0; n];
    let mut shrunk = vec![false; n];
    for i in 0..n {
        if z.is_defaulted(i) {
            continue;
        }
        let mut h = cfg.bump_rel * x[i];
        if x[i] - h <= 0.0 {
            h = 0.5 * x[i];
            shrunk[i] = true;
        }
        let seed_up = rng::mix(cfg.seed, 0xB0B0 + i as u64);
        let seed_dn = if cfg.crn { seed_up } else { rng::mix(cfg.seed, 0xD0D0 + i as u64) };
        let mut xu = x.to_vec();
        xu[i] += h;
        let mut xd = x.to_vec();
        xd[i] -= h;
        let up = eval(t, &xu, z, seed_up)?;
        let dn = eval(t, &xd, z, seed_dn)?;
        grad[i] = (up.value - dn.value) / (2.0 * h);
        se[i] = up.combined_se(&dn) / (2.0 * h);
    }
    Ok(GradientX { grad, std_error: se, shrunk })
}

/// Contagion jump difference `f(t, x + w_j, z^j) - f(t, x, z)` with common
/// random numbers. Requires name `j` alive in `z`.
pub fn jump_difference(
    eval: &ValueEval<'_>,
    model: &ModelParams,
    t: f64,
    x: &[f64],
    z: DefaultState,
    j: usize,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    cfg.validate()?;
    if j >= z.n() {
        return Err(Error::IndexOutOfRange { index: j, n_names: z.n() });
    }
    if z.is_defaulted(j) {
        return Err(Error::Domain(format!("name {j} has already defaulted in {z}")));
    }
    let zj = z.with_default(j);
    let shifted = shift_for_jump(model, x, zj, j);
    let seed = rng::mix(cfg.seed, 0xA1A1 + j as u64);
    let seed_b = if cfg.crn { seed } else { rng::mix(cfg.seed, 0xB2B2 + j as u64) };
    let a = eval(t, &shifted, zj, seed)?;
    let b = eval(t, x, z, seed_b)?;
    Ok(Estimate {
        value: a.value - b.value,
        std_error: a.combined_se(&b),
        n: a.n.min(b.n),
    })
}
