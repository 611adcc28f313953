//! Interacting default-intensity model: joint simulation of the intensity
//! vector `X` and the default indicator vector `H`.
//!
//! The model carries `n` names; by convention the last index is the
//! counterparty. Between default events each intensity follows a square-root
//! diffusion `dX_i = (kappa_i - nu_i X_i) dt + sqrt(X_i) sum_k sigma_ik dW_k`
//! driven by factors shared across names. When name `j` defaults, every
//! surviving intensity jumps up by the contagion weight `w_ij`, and the
//! defaulted name is frozen and excluded from all further dynamics.
//!
//! Defaults are generated from independent unit-exponential clocks raced
//! against each survivor's running hazard integral. The hazard seen by the
//! clocks is the piecewise-linear interpolant of the per-step trapezoid
//! increments, and the recorded compensators are that same function, so
//! `H_i(t) - int_0^{t and tau_i} X_i ds` is a martingale under the simulated
//! law conditionally on the diffusion skeleton.

use crate::error::{Error, Result};
use crate::rng::{self, PathRng};
use serde::{Deserialize, Serialize};

/// Numerical floor keeping intensities strictly positive after a step.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Discretization scheme for the diffusion part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Clamp the state at zero inside drift/diffusion evaluations, then
    /// floor the result at [`POSITIVITY_FLOOR`].
    EulerFullTruncation,
    /// Exact mean-reverting flow for names with no diffusion loading;
    /// full-truncation Euler otherwise.
    ExactWhereAvailable,
}

/// Vector of default indicators, one bit per name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DefaultState {
    bits: u32,
    n: u8,
}

impl DefaultState {
    pub fn none(n: usize) -> Self {
        assert!((1..=20).contains(&n), "supported name counts are 1..=20");
        DefaultState { bits: 0, n: n as u8 }
    }

    pub fn from_bits(bits: u32, n: usize) -> Self {
        assert!((1..=20).contains(&n));
        assert!(bits < (1u32 << n));
        DefaultState { bits, n: n as u8 }
    }

    /// Builds a state from indicator values, e.g. `[1, 0, 1]`.
    pub fn from_indicators(ind: &[u8]) -> Self {
        let mut bits = 0u32;
        for (i, &b) in ind.iter().enumerate() {
            if b != 0 {
                bits |= 1 << i;
            }
        }
        DefaultState { bits, n: ind.len() as u8 }
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn is_defaulted(&self, i: usize) -> bool {
        self.bits & (1 << i) != 0
    }

    /// Flips component `j` (involution).
    pub fn flip(&self, j: usize) -> Self {
        DefaultState { bits: self.bits ^ (1 << j), n: self.n }
    }

    /// The state after name `j` defaults.
    pub fn with_default(&self, j: usize) -> Self {
        DefaultState { bits: self.bits | (1 << j), n: self.n }
    }

    pub fn popcount(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn all_defaulted(&self) -> bool {
        self.popcount() == self.n()
    }

    /// Index into dense per-state tables.
    pub fn index(&self) -> usize {
        self.bits as usize
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn survivors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| !self.is_defaulted(i))
    }

    /// Componentwise partial order: `self <= other`.
    pub fn le(&self, other: &DefaultState) -> bool {
        self.bits & !other.bits == 0
    }

    /// All states over `n` names, ordered by raw bits.
    pub fn all(n: usize) -> impl Iterator<Item = DefaultState> {
        (0u32..(1 << n)).map(move |bits| DefaultState { bits, n: n as u8 })
    }
}

impl std::fmt::Display for DefaultState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for i in 0..self.n() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", u8::from(self.is_defaulted(i)))?;
        }
        write!(f, ")")
    }
}

/// Model parameters for the `n` interacting intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mean-reversion constants `kappa_i >= 0` (drift `kappa_i - nu_i x_i`).
    pub kappa: Vec<f64>,
    /// Mean-reversion speeds `nu_i >= 0`.
    pub nu: Vec<f64>,
    /// Per-name factor loadings, row `i` holding `sigma_ik` for `k = 1..K`.
    pub sigma: Vec<Vec<f64>>,
    /// Contagion weights: `contagion[i][j] = w_ij` is added to intensity `i`
    /// when name `j` defaults. The diagonal is ignored (a defaulted name is
    /// frozen).
    pub contagion: Vec<Vec<f64>>,
    /// Initial intensities, strictly positive.
    pub initial: Vec<f64>,
}

impl ModelParams {
    /// Builds a model with loadings shared across names, the form used by
    /// the square-root specification.
    pub fn new_shared_vol(
        kappa: Vec<f64>,
        nu: Vec<f64>,
        shared_sigma: Vec<f64>,
        contagion: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n = initial.len();
        let sigma = vec![shared_sigma; n];
        Self::new(kappa, nu, sigma, contagion, initial)
    }

    pub fn new(
        kappa: Vec<f64>,
        nu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
        contagion: Vec<Vec<f64>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let p = ModelParams { kappa, nu, sigma, contagion, initial };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.initial.len();
        if n == 0 {
            return Err(Error::Domain("model needs at least one name".into()));
        }
        if self.kappa.len() != n || self.nu.len() != n || self.sigma.len() != n {
            return Err(Error::Domain("parameter vectors must share the name count".into()));
        }
        let k = self.sigma[0].len();
        if self.sigma.iter().any(|row| row.len() != k) {
            return Err(Error::Domain("sigma rows must share the factor count".into()));
        }
        if self.contagion.len() != n || self.contagion.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("contagion matrix must be n x n".into()));
        }
        if self.initial.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("initial intensities must be strictly positive".into()));
        }
        if self.kappa.iter().any(|&v| v < 0.0)
            || self.nu.iter().any(|&v| v < 0.0)
            || self.sigma.iter().flatten().any(|&v| v < 0.0)
            || self.contagion.iter().flatten().any(|&v| v < 0.0)
        {
            return Err(Error::Domain("kappa, nu, sigma and contagion must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn n_names(&self) -> usize {
        self.initial.len()
    }

    pub fn n_factors(&self) -> usize {
        self.sigma[0].len()
    }

    /// Index of the counterparty (last name by convention).
    pub fn counterparty(&self) -> usize {
        self.n_names() - 1
    }

    /// Per-name boundary non-attainment check: `2 kappa_i >= sum_k sigma_ik^2`.
    pub fn feller_check(&self) -> Vec<bool> {
        (0..self.n_names())
            .map(|i| {
                let s2: f64 = self.sigma[i].iter().map(|s| s * s).sum();
                2.0 * self.kappa[i] >= s2
            })
            .collect()
    }

    /// True when no name carries diffusion.
    pub fn is_deterministic(&self) -> bool {
        self.sigma.iter().flatten().all(|&s| s == 0.0)
    }

    /// True when intensities are piecewise constant between defaults
    /// (no diffusion, no drift), so the state vector is a function of the
    /// default state alone.
    pub fn is_piecewise_constant(&self) -> bool {
        self.is_deterministic()
            && self.kappa.iter().all(|&v| v == 0.0)
            && self.nu.iter().all(|&v| v == 0.0)
    }

    fn sigma_is_zero(&self, i: usize) -> bool {
        self.sigma[i].iter().all(|&s| s == 0.0)
    }

    /// The intensity vector on the jump lattice reached from `initial` at
    /// default state `z` (survivor entries only are meaningful).
    pub fn lattice_intensity(&self, z: DefaultState) -> Vec<f64> {
        let n = self.n_names();
        let mut x = self.initial.clone();
        for j in 0..n {
            if z.is_defaulted(j) {
                for (i, xi) in x.iter_mut().enumerate() {
                    if !z.is_defaulted(i) && i != j {
                        *xi += self.contagion[i][j];
                    }
                }
            }
        }
        x
    }
}

/// Simulation controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Horizon `T` (claims mature here).
    pub horizon: f64,
    /// Target grid step.
    pub step: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Cap on default resolutions within one grid step.
    pub substep_cap: usize,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !(self.step > 0.0) {
            return Err(Error::Domain("horizon and step must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Domain("n_paths must be at least 1".into()));
        }
        if self.substep_cap == 0 {
            return Err(Error::Domain("substep_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// One contagion event on a path.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub name: usize,
    /// Intensities immediately before the jump.
    pub pre: Vec<f64>,
    /// Intensities immediately after surviving names absorbed the weights.
    pub post: Vec<f64>,
}

/// A simulated trajectory of `(X, H)` with default bookkeeping.
///
/// Default times are inserted as extra grid points, so at most one indicator
/// flips per recorded step and the stored intensities at a default time are
/// the post-jump values.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub grid: Vec<f64>,
    /// Intensities per grid point (defaulted names frozen at their
    /// pre-default values; their entries are never read downstream).
    pub intensities: Vec<Vec<f64>>,
    pub states: Vec<DefaultState>,
    /// Cumulative hazard `int X_i 1(alive) ds` per grid point per name.
    pub compensators: Vec<Vec<f64>>,
    /// Default time per name, `INFINITY` for survivors.
    pub default_times: Vec<f64>,
    pub jumps: Vec<JumpRecord>,
    /// Brownian increments per recorded segment (scaled by `sqrt(theta/dt)`
    /// on segments shortened by a default).
    pub brownian: Vec<Vec<f64>>,
}

impl MarketPath {
    pub fn n_names(&self) -> usize {
        self.default_times.len()
    }

    pub fn start_time(&self) -> f64 {
        self.grid[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn final_state(&self) -> DefaultState {
        *self.states.last().unwrap()
    }

    /// Martingale residual `H_i(T) - int_0^{T and tau_i} X_i ds` at the end
    /// of the path.
    pub fn martingale_residual(&self, i: usize) -> f64 {
        let h = f64::from(self.final_state().is_defaulted(i));
        h - self.compensators.last().unwrap()[i]
    }

    /// `sum_j int X_j^2 1(alive) ds` over the whole path (trapezoid).
    pub fn squared_intensity_integral(&self) -> f64 {
        let mut total = 0.0;
        for seg in 0..self.grid.len() - 1 {
            let dt = self.grid[seg + 1] - self.grid[seg];
            let z = self.states[seg];
            for j in z.survivors() {
                let a = self.intensities[seg][j];
                let b = self.intensities[seg + 1][j];
                total += 0.5 * (a * a + b * b) * dt;
            }
        }
        total
    }

    /// Grid index of the first point at or after the default of `name`,
    /// `None` if it survives.
    pub fn default_index(&self, name: usize) -> Option<usize> {
        if self.default_times[name].is_finite() {
            self.states.iter().position(|z| z.is_defaulted(name))
        } else {
            None
        }
    }
}

/// Diffusion-only trajectory of the intensity vector (no defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPath {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Trapezoid hazard increment over a substep.
pub fn compensator_increment(x_start: f64, x_end: f64, dt: f64) -> f64 {
    0.5 * (x_start + x_end) * dt
}

/// Advances survivors over `dt`; returns the end state and the Brownian
/// increments consumed (empty when no surviving name carries diffusion).
fn step_state(
    params: &ModelParams,
    scheme: Scheme,
    x: &[f64],
    z: DefaultState,
    dt: f64,
    rng: &mut PathRng,
) -> (Vec<f64>, Vec<f64>) {
    let k = params.n_factors();
    let needs_noise = z.survivors().any(|i| !params.sigma_is_zero(i));
    let dw: Vec<f64> = if needs_noise {
        (0..k).map(|_| dt.sqrt() * rng::standard_normal(rng)).collect()
    } else {
        vec![0.0; k]
    };
    let mut out = x.to_vec();
    for i in z.survivors() {
        let xi = x[i];
        let exact_ok = scheme == Scheme::ExactWhereAvailable && params.sigma_is_zero(i);
        let next = if exact_ok {
            exact_flow(params.kappa[i], params.nu[i], xi, dt)
        } else {
            let xp = xi.max(0.0);
            let drift = params.kappa[i] - params.nu[i] * xp;
            let mut diff = 0.0;
            if !params.sigma_is_zero(i) {
                let root = xp.sqrt();
                for (kk, dwk) in dw.iter().enumerate() {
                    diff += params.sigma[i][kk] * root * dwk;
                }
            }
            xi + drift * dt + diff
        };
        out[i] = next.max(POSITIVITY_FLOOR);
    }
    (out, dw)
}

/// Exact flow of `dx = (kappa - nu x) dt`.
pub(crate) fn exact_flow(kappa: f64, nu: f64, x: f64, dt: f64) -> f64 {
    if nu == 0.0 {
        x + kappa * dt
    } else {
        let m = kappa / nu;
        m + (x - m) * (-nu * dt).exp()
    }
}

/// Simulates the joint market `(X, H)` from time 0 at the initial parameters.
pub fn simulate_market(params: &ModelParams, cfg: &SimConfig, path_index: u64) -> Result<MarketPath> {
    let mut rng = rng::stream(cfg.seed, rng::DOMAIN_MARKET, path_index);
    simulate_market_from(params, cfg, 0.0, &params.initial, DefaultState::none(params.n_names()), &mut rng)
}

/// Simulates the joint market from an arbitrary state `(t0, x0, z0)` up to
/// the horizon. Entries of `x0` for names defaulted in `z0` are carried
/// along frozen and never read.
pub fn simulate_market_from(
    params: &ModelParams,
    cfg: &SimConfig,
    t0: f64,
    x0: &[f64],
    z0: DefaultState,
    rng: &mut PathRng,
) -> Result<MarketPath> {
    cfg.validate()?;
    params.validate()?;
    let n = params.n_names();
    if x0.len() != n {
        return Err(Error::Domain("initial vector length mismatch".into()));
    }
    for i in z0.survivors() {
        if x0[i] <= 0.0 {
            return Err(Error::Domain(format!("intensity of name {i} must be positive, got {}", x0[i])));
        }
    }
    let horizon = cfg.horizon;
    if t0 >= horizon {
        return Err(Error::TimeOutOfRange { t: t0, lo: 0.0, hi: horizon });
    }

    let mut x = x0.to_vec();
    let mut z = z0;
    let mut cum = vec![0.0; n];
    let mut period = vec![0.0; n];
    let mut clocks = vec![f64::INFINITY; n];
    for i in z.survivors() {
        clocks[i] = rng::unit_exponential(rng);
    }

    let n_steps = ((horizon - t0) / cfg.step).ceil().max(1.0) as usize;
    let mut grid = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut intensities = Vec::with_capacity(n_steps + 1);
    let mut compensators = Vec::with_capacity(n_steps + 1);
    let mut brownian = Vec::with_capacity(n_steps);
    let mut jumps = Vec::new();
    let mut default_times = vec![f64::INFINITY; n];

    grid.push(t0);
    states.push(z);
    intensities.push(x.clone());
    compensators.push(cum.clone());

    let mut cur = t0;
    for k in 1..=n_steps {
        let target = if k == n_steps { horizon } else { t0 + k as f64 * cfg.step };
        let mut substeps = 0usize;
        while cur < target {
            let dt = target - cur;
            let (xe, dw) = step_state(params, cfg.scheme, &x, z, dt, rng);
            let mut winner: Option<(usize, f64)> = None;
            for i in z.survivors() {
                let delta = compensator_increment(x[i], xe[i], dt);
                if period[i] + delta >= clocks[i] && delta > 0.0 {
                    let theta = dt * (clocks[i] - period[i]) / delta;
                    if winner.map_or(true, |(_, best)| theta < best) {
                        winner = Some((i, theta));
                    }
                }
            }
            match winner {
                None => {
                    for i in z.survivors() {
                        let delta = compensator_increment(x[i], xe[i], dt);
                        cum[i] += delta;
                        period[i] += delta;
                        x[i] = xe[i];
                    }
                    brownian.push(dw);
                    grid.push(target);
                    states.push(z);
                    intensities.push(x.clone());
                    compensators.push(cum.clone());
                    cur = target;
                }
                Some((j, theta)) => {
                    substeps += 1;
                    if substeps > cfg.substep_cap {
                        return Err(Error::SubstepCapExceeded { time: cur, cap: cfg.substep_cap });
                    }
                    let theta = theta.clamp(0.0, dt);
                    let at_target = theta >= dt;
                    let tau = if at_target { target } else { cur + theta };
                    let frac = theta / dt;
                    // Commit the clock-facing hazard (linear in the step
                    // fraction) and interpolate survivors to the default time.
                    for i in z.survivors() {
                        let delta = compensator_increment(x[i], xe[i], dt);
                        cum[i] += delta * frac;
                        period[i] += delta * frac;
                        x[i] += frac * (xe[i] - x[i]);
                    }
                    let pre = x.clone();
                    default_times[j] = tau;
                    z = z.with_default(j);
                    for i in z.survivors() {
                        x[i] += params.contagion[i][j];
                    }
                    jumps.push(JumpRecord { time: tau, name: j, pre, post: x.clone() });
                    clocks[j] = f64::INFINITY;
                    for i in z.survivors() {
                        clocks[i] = rng::unit_exponential(rng);
                        period[i] = 0.0;
                    }
                    brownian.push(dw.iter().map(|w| w * frac.sqrt()).collect());
                    grid.push(tau);
                    states.push(z);
                    intensities.push(x.clone());
                    compensators.push(cum.clone());
                    cur = tau;
                }
            }
        }
    }

    Ok(MarketPath {
        grid,
        intensities,
        states,
        compensators,
        default_times,
        jumps,
        brownian,
    })
}

/// Simulates the diffusion-only intensity vector from `(t, x)`; all
/// components evolve, none default.
pub fn simulate_diffusion_only(
    params: &ModelParams,
    t: f64,
    x: &[f64],
    horizon: f64,
    cfg: &SimConfig,
    rng: &mut PathRng,
) -> Result<DiffusionPath> {
    diffusion_masked(params, t, x, horizon, cfg.step, cfg.scheme, DefaultState::none(params.n_names()), rng)
}

/// Diffusion path advancing only the survivors of `mask`; frozen entries are
/// carried unchanged. The grid is uniform with an even number of steps so
/// composite Simpson applies directly.
pub(crate) fn diffusion_masked(
    params: &ModelParams,
    t: f64,
    x: &[f64],
    horizon: f64,
    step: f64,
    scheme: Scheme,
    mask: DefaultState,
    rng: &mut PathRng,
) -> Result<DiffusionPath> {
    if x.len() != params.n_names() {
        return Err(Error::Domain("initial vector length mismatch".into()));
    }
    for i in mask.survivors() {
        if x[i] <= 0.0 {
            return Err(Error::Domain(format!("intensity of name {i} must be positive, got {}", x[i])));
        }
    }
    if t >= horizon {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: horizon });
    }
    let span = horizon - t;
    let mut m = ((span / step).ceil() as usize).max(2);
    if m % 2 == 1 {
        m += 1;
    }
    let h = span / m as f64;
    let mut grid = Vec::with_capacity(m + 1);
    let mut values = Vec::with_capacity(m + 1);
    let mut cur = x.to_vec();
    grid.push(t);
    values.push(cur.clone());
    for k in 1..=m {
        let (next, _) = step_state(params, scheme, &cur, mask, h, rng);
        cur = next;
        grid.push(if k == m { horizon } else { t + k as f64 * h });
        values.push(cur.clone());
    }
    Ok(DiffusionPath { grid, values })
}
