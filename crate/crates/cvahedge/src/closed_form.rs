//! Independent oracles for the small-portfolio closed forms: the single-name
//! swap and bond traded against a risky counterparty (two names) and the
//! two-name first-to-default basket (three names).
//!
//! Each oracle carries its own hand-written state-by-state coefficient
//! tables and evaluates the resulting nested expectations either by
//! quadrature over the exact deterministic intensity flow (requires zero
//! diffusion) or by diffusion-only Monte Carlo with a discount shared across
//! the terms of each draw. The implementation is deliberately separate from
//! the generic claim machinery so the two can check each other.

use crate::error::{Error, Result};
use crate::model::{self, exact_flow, DefaultState, ModelParams, Scheme};
use crate::parallel::run_indexed;
use crate::quad::{adaptive_simpson, composite_simpson};
use crate::rng;
use crate::stats::{estimate_from, Estimate};

/// Evaluation backend for the oracles.
#[derive(Debug, Clone)]
pub enum OracleBackend {
    /// Nested adaptive Simpson over the exact deterministic flow; requires
    /// a model with zero diffusion loadings.
    Quadrature { tol: f64 },
    /// Diffusion-only Monte Carlo with nested inner estimates.
    MonteCarlo(OracleMcConfig),
}

impl OracleBackend {
    pub fn quadrature() -> Self {
        OracleBackend::Quadrature { tol: 1e-11 }
    }
}

#[derive(Debug, Clone)]
pub struct OracleMcConfig {
    pub paths: usize,
    pub step: f64,
    pub seed: u64,
    /// Inner draw counts per nesting level.
    pub inner_paths: Vec<usize>,
    /// Stride for inner-estimate source nodes.
    pub source_stride: usize,
    pub threads: usize,
}

impl OracleMcConfig {
    pub fn new(paths: usize, step: f64, seed: u64) -> Self {
        OracleMcConfig { paths, step, seed, inner_paths: vec![12, 3], source_stride: 2, threads: 0 }
    }
}

/// State-indexed coefficients of one claim's value recursion
/// `V(t,x,z) = term(z) E_z(t,T) + int [rate(z) + sum_j x_j (V(s, x+w_j, z^j) - comp(z,j))] E_z(t,s) ds`.
#[derive(Debug, Clone)]
struct ValueSystem {
    term: Vec<f64>,
    rate: Vec<f64>,
    comp: Vec<Vec<f64>>,
}

impl ValueSystem {
    fn build(
        n: usize,
        term: impl Fn(DefaultState) -> f64,
        rate: impl Fn(DefaultState) -> f64,
        comp: impl Fn(DefaultState, usize) -> f64,
    ) -> Self {
        let states: Vec<DefaultState> = DefaultState::all(n).collect();
        ValueSystem {
            term: states.iter().map(|&z| term(z)).collect(),
            rate: states.iter().map(|&z| rate(z)).collect(),
            comp: states
                .iter()
                .map(|&z| (0..n).map(|j| comp(z, j)).collect())
                .collect(),
        }
    }

    /// Single-name credit swap on `name` (protection-seller view).
    fn cds(n: usize, name: usize, spread: f64, loss: &dyn Fn(DefaultState) -> f64) -> Self {
        let zpay = |z: DefaultState| if z.is_defaulted(name) { loss(z) } else { 0.0 };
        Self::build(
            n,
            zpay,
            |z| if z.is_defaulted(name) { 0.0 } else { -spread },
            |z, j| {
                if z.is_defaulted(name) {
                    zpay(z.flip(j)) - zpay(z)
                } else {
                    0.0
                }
            },
        )
    }

    /// Single-name coupon bond on `name`.
    fn bond(n: usize, name: usize, coupon: f64, loss: &dyn Fn(DefaultState) -> f64) -> Self {
        let zpay = |z: DefaultState| if z.is_defaulted(name) { 1.0 - loss(z) } else { 0.0 };
        Self::build(
            n,
            |z| if z.is_defaulted(name) { 1.0 - loss(z) } else { 1.0 },
            |z| if z.is_defaulted(name) { 0.0 } else { coupon },
            |z, j| {
                if z.is_defaulted(name) {
                    zpay(z.flip(j)) - zpay(z)
                } else {
                    0.0
                }
            },
        )
    }

    /// First-to-default swap over the basket of all names but the last.
    fn first_to_default(n: usize, spread: f64, losses: &[&dyn Fn(DefaultState) -> f64]) -> Self {
        let basket = n - 1;
        let k = |z: DefaultState| (0..basket).any(|i| z.is_defaulted(i));
        let zpay = move |z: DefaultState| -> f64 {
            (0..basket)
                .filter(|&i| z.is_defaulted(i))
                .map(|i| losses[i](z))
                .sum()
        };
        Self::build(
            n,
            move |z| if k(z) { zpay(z) } else { 0.0 },
            move |z| if k(z) { 0.0 } else { -spread },
            move |z, j| if k(z) { zpay(z.flip(j)) - zpay(z) } else { 0.0 },
        )
    }
}

/// Counterparty-risk source description: one reference claim with weight
/// `b1` whose positive exposure at the counterparty default feeds the
/// payment stream.
#[derive(Debug, Clone)]
struct CvaSystem {
    weight: f64,
    /// Trigger indicator of the reference claim, by state.
    triggered: Vec<bool>,
    /// Counterparty loss rate, by state.
    cpty_loss: Vec<f64>,
}

fn require_quadrature_model(model: &ModelParams) -> Result<()> {
    if !model.is_deterministic() {
        return Err(Error::Domain(
            "the quadrature backend needs deterministic intensities (sigma = 0)".into(),
        ));
    }
    Ok(())
}

fn check_oracle_state(model: &ModelParams, n: usize, t: f64, x: &[f64], z: DefaultState, horizon: f64) -> Result<()> {
    if model.n_names() != n {
        return Err(Error::Domain(format!("oracle expects {n} names, model has {}", model.n_names())));
    }
    if x.len() != n || z.n() != n {
        return Err(Error::Domain("state dimensions disagree with the oracle".into()));
    }
    if t < 0.0 || t > horizon {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: horizon });
    }
    for i in z.survivors() {
        if x[i] <= 0.0 {
            return Err(Error::Domain(format!("intensity of name {i} must be positive")));
        }
    }
    Ok(())
}

/// `int_t0^s` of the deterministic flow of name `i` started at `(t0, x0)`.
fn flow_integral(model: &ModelParams, i: usize, t0: f64, x0: f64, s: f64) -> f64 {
    let dt = s - t0;
    let (kappa, nu) = (model.kappa[i], model.nu[i]);
    if nu == 0.0 {
        x0 * dt + 0.5 * kappa * dt * dt
    } else {
        let m = kappa / nu;
        m * dt + (x0 - m) * (1.0 - (-nu * dt).exp()) / nu
    }
}

fn flow_vector(model: &ModelParams, t0: f64, x0: &[f64], z: DefaultState, s: f64) -> Vec<f64> {
    let mut out = x0.to_vec();
    for i in z.survivors() {
        out[i] = exact_flow(model.kappa[i], model.nu[i], x0[i], s - t0);
    }
    out
}

fn survivor_discount(model: &ModelParams, t0: f64, x0: &[f64], z: DefaultState, s: f64) -> f64 {
    let mut h = 0.0;
    for i in z.survivors() {
        h += flow_integral(model, i, t0, x0[i], s);
    }
    (-h).exp()
}

fn jump_shift(model: &ModelParams, x: &[f64], zj: DefaultState, j: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in zj.survivors() {
        out[i] += model.contagion[i][j];
    }
    out
}

/// Quadrature evaluation of a [`ValueSystem`] at `(t, x, z)`.
fn quad_value(
    sys: &ValueSystem,
    model: &ModelParams,
    z: DefaultState,
    t: f64,
    x: &[f64],
    horizon: f64,
    tol: f64,
) -> f64 {
    let zi = z.index();
    if z.all_defaulted() {
        return sys.term[zi] + sys.rate[zi] * (horizon - t);
    }
    if t >= horizon {
        return sys.term[zi];
    }
    let integrand = |s: f64| -> f64 {
        let xs = flow_vector(model, t, x, z, s);
        let disc = survivor_discount(model, t, x, z, s);
        let mut v = sys.rate[zi];
        for j in z.survivors() {
            let zj = z.with_default(j);
            let inner = quad_value(sys, model, zj, s, &jump_shift(model, &xs, zj, j), horizon, tol);
            v += xs[j] * (inner - sys.comp[zi][j]);
        }
        v * disc
    };
    sys.term[zi] * survivor_discount(model, t, x, z, horizon)
        + adaptive_simpson(&integrand, t, horizon, tol)
}

/// One Monte-Carlo draw of a [`ValueSystem`] value on a diffusion skeleton.
#[allow(clippy::too_many_arguments)]
fn mc_draw(
    sys: &ValueSystem,
    model: &ModelParams,
    z: DefaultState,
    t: f64,
    x: &[f64],
    horizon: f64,
    cfg: &OracleMcConfig,
    level: usize,
    draw_seed: u64,
) -> Result<f64> {
    let zi = z.index();
    let mut rng = rng::stream(draw_seed, rng::DOMAIN_ORACLE, level as u64);
    let path = model::diffusion_masked(
        model,
        t,
        x,
        horizon,
        cfg.step,
        Scheme::ExactWhereAvailable,
        z,
        &mut rng,
    )?;
    let m = path.grid.len() - 1;
    let h = (horizon - t) / m as f64;
    let mut disc = Vec::with_capacity(m + 1);
    disc.push(1.0);
    let mut cum = 0.0;
    for k in 0..m {
        for j in z.survivors() {
            cum += model::compensator_increment(path.values[k][j], path.values[k + 1][j], h);
        }
        disc.push((-cum).exp());
    }
    let mut value = sys.term[zi] * disc[m];
    if sys.rate[zi] != 0.0 {
        value += sys.rate[zi] * composite_simpson(&disc, h);
    }
    for j in z.survivors() {
        let zj = z.with_default(j);
        let nodes: Vec<usize> = {
            let mut v: Vec<usize> = (0..=m).step_by(cfg.source_stride.max(1)).collect();
            if *v.last().unwrap() != m {
                v.push(m);
            }
            v
        };
        let mut samples = Vec::with_capacity(nodes.len());
        for &k in &nodes {
            let s = path.grid[k];
            let inner = if k == m || zj.all_defaulted() {
                let zji = zj.index();
                sys.term[zji] + sys.rate[zji] * (horizon - s)
            } else {
                let shifted = jump_shift(model, &path.values[k], zj, j);
                mc_value(sys, model, zj, s, &shifted, horizon, cfg, level + 1, rng::mix(draw_seed, ((j as u64) << 32) ^ k as u64))?
                    .value
            };
            samples.push(path.values[k][j] * (inner - sys.comp[zi][j]) * disc[k]);
        }
        let mut integral = 0.0;
        for (ks, fs) in nodes.windows(2).zip(samples.windows(2)) {
            integral += 0.5 * (fs[0] + fs[1]) * (path.grid[ks[1]] - path.grid[ks[0]]);
        }
        value += integral;
    }
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn mc_value(
    sys: &ValueSystem,
    model: &ModelParams,
    z: DefaultState,
    t: f64,
    x: &[f64],
    horizon: f64,
    cfg: &OracleMcConfig,
    level: usize,
    seed: u64,
) -> Result<Estimate> {
    let zi = z.index();
    if z.all_defaulted() {
        return Ok(Estimate::exact(sys.term[zi] + sys.rate[zi] * (horizon - t)));
    }
    if t >= horizon {
        return Ok(Estimate::exact(sys.term[zi]));
    }
    let draws = if model.is_deterministic() {
        1
    } else if level == 0 {
        cfg.paths
    } else {
        *cfg.inner_paths.get((level - 1).min(cfg.inner_paths.len() - 1)).unwrap()
    };
    let threads = if level == 0 { cfg.threads } else { 1 };
    let vals: Vec<Result<f64>> = run_indexed(draws, threads, |p| {
        mc_draw(sys, model, z, t, x, horizon, cfg, level, rng::mix(seed, p as u64))
    });
    let vals = vals.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(estimate_from(&vals))
}

fn system_value(
    sys: &ValueSystem,
    model: &ModelParams,
    z: DefaultState,
    t: f64,
    x: &[f64],
    horizon: f64,
    backend: &OracleBackend,
) -> Result<Estimate> {
    match backend {
        OracleBackend::Quadrature { tol } => {
            require_quadrature_model(model)?;
            Ok(Estimate::exact(quad_value(sys, model, z, t, x, horizon, *tol)))
        }
        OracleBackend::MonteCarlo(cfg) => mc_value(sys, model, z, t, x, horizon, cfg, 0, cfg.seed),
    }
}

/// Quadrature evaluation of the counterparty-risk value `g` for a one-claim
/// portfolio described by `cva`, with reference-claim values from `fsys`.
#[allow(clippy::too_many_arguments)]
fn quad_g(
    cva: &CvaSystem,
    fsys: &ValueSystem,
    model: &ModelParams,
    z: DefaultState,
    t: f64,
    x: &[f64],
    horizon: f64,
    tol: f64,
) -> f64 {
    let cpty = model.counterparty();
    if z.is_defaulted(cpty) || z.all_defaulted() || t >= horizon {
        return 0.0;
    }
    let integrand = |s: f64| -> f64 {
        let xs = flow_vector(model, t, x, z, s);
        let disc = survivor_discount(model, t, x, z, s);
        let mut v = 0.0;
        for j in z.survivors() {
            let zj = z.with_default(j);
            if j != cpty {
                v += xs[j] * quad_g(cva, fsys, model, zj, s, &jump_shift(model, &xs, zj, j), horizon, tol);
            }
        }
        let zc = z.with_default(cpty);
        if !cva.triggered[zc.index()] {
            let f = quad_value(fsys, model, zc, s, &jump_shift(model, &xs, zc, cpty), horizon, tol);
            v += cva.cpty_loss[zc.index()] * (cva.weight * f).max(0.0) * xs[cpty];
        }
        v * disc
    };
    adaptive_simpson(&integrand, t, horizon, tol)
}

/// Monte-Carlo evaluation of `g` on diffusion skeletons.
#[allow(clippy::too_many_arguments)]
fn mc_g(
    cva: &CvaSystem,
    fsys: &ValueSystem,
    model: &ModelParams,
    z: DefaultState,
    t: f64,
    x: &[f64],
    horizon: f64,
    cfg: &OracleMcConfig,
    level: usize,
    seed: u64,
) -> Result<Estimate> {
    let cpty = model.counterparty();
    if z.is_defaulted(cpty) || z.all_defaulted() || t >= horizon {
        return Ok(Estimate::exact(0.0));
    }
    let draws = if model.is_deterministic() {
        1
    } else if level == 0 {
        cfg.paths
    } else {
        *cfg.inner_paths.get((level - 1).min(cfg.inner_paths.len() - 1)).unwrap()
    };
    let threads = if level == 0 { cfg.threads } else { 1 };
    let vals: Vec<Result<f64>> = run_indexed(draws, threads, |p| {
        let draw_seed = rng::mix(seed, p as u64);
        let mut rng = rng::stream(draw_seed, rng::DOMAIN_ORACLE, 0x60 + level as u64);
        let path = model::diffusion_masked(
            model,
            t,
            x,
            horizon,
            cfg.step,
            Scheme::ExactWhereAvailable,
            z,
            &mut rng,
        )?;
        let m = path.grid.len() - 1;
        let h = (horizon - t) / m as f64;
        let mut disc = Vec::with_capacity(m + 1);
        disc.push(1.0);
        let mut cum = 0.0;
        for k in 0..m {
            for j in z.survivors() {
                cum += model::compensator_increment(path.values[k][j], path.values[k + 1][j], h);
            }
            disc.push((-cum).exp());
        }
        let nodes: Vec<usize> = {
            let mut v: Vec<usize> = (0..=m).step_by(cfg.source_stride.max(1)).collect();
            if *v.last().unwrap() != m {
                v.push(m);
            }
            v
        };
        let mut samples = Vec::with_capacity(nodes.len());
        for &k in &nodes {
            let s = path.grid[k];
            let xs = &path.values[k];
            let mut v = 0.0;
            for j in z.survivors() {
                let zj = z.with_default(j);
                if j != cpty {
                    let inner = mc_g(
                        cva,
                        fsys,
                        model,
                        zj,
                        s,
                        &jump_shift(model, xs, zj, j),
                        horizon,
                        cfg,
                        level + 1,
                        rng::mix(draw_seed, 0x77 ^ ((j as u64) << 32) ^ k as u64),
                    )?
                    .value;
                    v += xs[j] * inner;
                }
            }
            let zc = z.with_default(cpty);
            if !cva.triggered[zc.index()] && s < horizon {
                let f = mc_value(
                    fsys,
                    model,
                    zc,
                    s,
                    &jump_shift(model, xs, zc, cpty),
                    horizon,
                    cfg,
                    level + 1,
                    rng::mix(draw_seed, 0x88 ^ (k as u64)),
                )?
                .value;
                v += cva.cpty_loss[zc.index()] * (cva.weight * f).max(0.0) * xs[cpty];
            }
            samples.push(v * disc[k]);
        }
        let mut integral = 0.0;
        for (ks, fs) in nodes.windows(2).zip(samples.windows(2)) {
            integral += 0.5 * (fs[0] + fs[1]) * (path.grid[ks[1]] - path.grid[ks[0]]);
        }
        Ok(integral)
    });
    let vals = vals.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(estimate_from(&vals))
}

fn system_g(
    cva: &CvaSystem,
    fsys: &ValueSystem,
    model: &ModelParams,
    z: DefaultState,
    t: f64,
    x: &[f64],
    horizon: f64,
    backend: &OracleBackend,
) -> Result<Estimate> {
    match backend {
        OracleBackend::Quadrature { tol } => {
            require_quadrature_model(model)?;
            Ok(Estimate::exact(quad_g(cva, fsys, model, z, t, x, horizon, *tol)))
        }
        OracleBackend::MonteCarlo(cfg) => mc_g(cva, fsys, model, z, t, x, horizon, cfg, 0, cfg.seed),
    }
}

/// Single-name credit swap traded against a risky counterparty: two names,
/// the reference (index 0) and the counterparty (index 1).
pub struct CdsOracle {
    horizon: f64,
    systems: [ValueSystem; 2],
    cva: CvaSystem,
}

impl CdsOracle {
    pub fn new(
        horizon: f64,
        spreads: [f64; 2],
        losses: [&dyn Fn(DefaultState) -> f64; 2],
        b1: f64,
    ) -> Self {
        let systems = [
            ValueSystem::cds(2, 0, spreads[0], losses[0]),
            ValueSystem::cds(2, 1, spreads[1], losses[1]),
        ];
        let cva = CvaSystem {
            weight: b1,
            triggered: DefaultState::all(2).map(|z| z.is_defaulted(0)).collect(),
            cpty_loss: DefaultState::all(2).map(losses[1]).collect(),
        };
        CdsOracle { horizon, systems, cva }
    }

    /// Value of claim `i` (0 = reference swap, 1 = counterparty swap).
    pub fn value(
        &self,
        model: &ModelParams,
        i: usize,
        z: DefaultState,
        t: f64,
        x: &[f64],
        backend: &OracleBackend,
    ) -> Result<Estimate> {
        check_oracle_state(model, 2, t, x, z, self.horizon)?;
        if i >= 2 {
            return Err(Error::IndexOutOfRange { index: i, n_names: 2 });
        }
        system_value(&self.systems[i], model, z, t, x, self.horizon, backend)
    }

    /// Counterparty-risk value `g` for the one-swap portfolio with weight `b1`.
    pub fn cva_source(
        &self,
        model: &ModelParams,
        z: DefaultState,
        t: f64,
        x: &[f64],
        backend: &OracleBackend,
    ) -> Result<Estimate> {
        check_oracle_state(model, 2, t, x, z, self.horizon)?;
        system_g(&self.cva, &self.systems[0], model, z, t, x, self.horizon, backend)
    }
}

/// Single-name coupon bond against a risky counterparty: reference bond
/// (index 0) and counterparty swap (index 1).
pub struct BondOracle {
    horizon: f64,
    systems: [ValueSystem; 2],
    cva: CvaSystem,
}

impl BondOracle {
    pub fn new(
        horizon: f64,
        coupon: f64,
        cpty_spread: f64,
        losses: [&dyn Fn(DefaultState) -> f64; 2],
        b1: f64,
    ) -> Self {
        let systems = [
            ValueSystem::bond(2, 0, coupon, losses[0]),
            ValueSystem::cds(2, 1, cpty_spread, losses[1]),
        ];
        let cva = CvaSystem {
            weight: b1,
            triggered: DefaultState::all(2).map(|z| z.is_defaulted(0)).collect(),
            cpty_loss: DefaultState::all(2).map(losses[1]).collect(),
        };
        BondOracle { horizon, systems, cva }
    }

    pub fn value(
        &self,
        model: &ModelParams,
        i: usize,
        z: DefaultState,
        t: f64,
        x: &[f64],
        backend: &OracleBackend,
    ) -> Result<Estimate> {
        check_oracle_state(model, 2, t, x, z, self.horizon)?;
        if i >= 2 {
            return Err(Error::IndexOutOfRange { index: i, n_names: 2 });
        }
        system_value(&self.systems[i], model, z, t, x, self.horizon, backend)
    }

    pub fn cva_source(
        &self,
        model: &ModelParams,
        z: DefaultState,
        t: f64,
        x: &[f64],
        backend: &OracleBackend,
    ) -> Result<Estimate> {
        check_oracle_state(model, 2, t, x, z, self.horizon)?;
        system_g(&self.cva, &self.systems[0], model, z, t, x, self.horizon, backend)
    }
}

/// Two-name first-to-default basket against a risky counterparty: basket
/// names 0 and 1, counterparty 2.
pub struct FtdOracle {
    horizon: f64,
    ftd: ValueSystem,
    cva: CvaSystem,
}

impl FtdOracle {
    pub fn new(
        horizon: f64,
        spread: f64,
        losses: [&dyn Fn(DefaultState) -> f64; 2],
        cpty_loss: &dyn Fn(DefaultState) -> f64,
        b1: f64,
    ) -> Self {
        let loss_refs: [&dyn Fn(DefaultState) -> f64; 2] = [losses[0], losses[1]];
        let ftd = ValueSystem::first_to_default(3, spread, &loss_refs);
        let cva = CvaSystem {
            weight: b1,
            triggered: DefaultState::all(3)
                .map(|z| z.is_defaulted(0) || z.is_defaulted(1))
                .collect(),
            cpty_loss: DefaultState::all(3).map(cpty_loss).collect(),
        };
        FtdOracle { horizon, ftd, cva }
    }

    /// Value of the first-to-default claim.
    pub fn value(
        &self,
        model: &ModelParams,
        z: DefaultState,
        t: f64,
        x: &[f64],
        backend: &OracleBackend,
    ) -> Result<Estimate> {
        check_oracle_state(model, 3, t, x, z, self.horizon)?;
        system_value(&self.ftd, model, z, t, x, self.horizon, backend)
    }

    pub fn cva_source(
        &self,
        model: &ModelParams,
        z: DefaultState,
        t: f64,
        x: &[f64],
        backend: &OracleBackend,
    ) -> Result<Estimate> {
        check_oracle_state(model, 3, t, x, z, self.horizon)?;
        system_g(&self.cva, &self.ftd, model, z, t, x, self.horizon, backend)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ind(bits: &[u8]) -> DefaultState {
        DefaultState::from_indicators(bits)
    }

    fn const_model(lambda: Vec<f64>, w: Vec<Vec<f64>>) -> ModelParams {
        let n = lambda.len();
        ModelParams::new_shared_vol(vec![0.0; n], vec![0.0; n], vec![], w, lambda).unwrap()
    }

    #[test]
    fn cds_exact_states_are_reproduced_without_tolerance() {
        let loss0 = |_: DefaultState| 0.6;
        let loss1 = |_: DefaultState| 0.55;
        let oracle = CdsOracle::new(2.0, [0.05, 0.04], [&loss0, &loss1], 1.0);
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0, 0.3], vec![0.2, 0.0]]);
        let q = OracleBackend::quadrature();
        let x = [0.5, 0.4];
        // Full default: both swap values sit at their loss rates.
        assert_eq!(oracle.value(&m, 0, ind(&[1, 1]), 0.3, &x, &q).unwrap().value, 0.6);
        assert_eq!(oracle.value(&m, 1, ind(&[1, 1]), 0.3, &x, &q).unwrap().value, 0.55);
        // g vanishes at every state with a defaulted reference or counterparty.
        for z in [ind(&[1, 0]), ind(&[0, 1]), ind(&[1, 1])] {
            assert_eq!(oracle.cva_source(&m, z, 0.3, &x, &q).unwrap().value, 0.0);
        }
    }

    #[test]
    fn cds_reference_value_is_flat_after_own_default() {
        // With the recovery compensation the post-default value equals the
        // current loss rate exactly, for any surviving-counterparty state.
        let loss0 = |z: DefaultState| if z.is_defaulted(1) { 0.5 } else { 0.6 };
        let loss1 = |_: DefaultState| 0.55;
        let oracle = CdsOracle::new(2.0, [0.05, 0.04], [&loss0, &loss1], 1.0);
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0, 0.3], vec![0.2, 0.0]]);
        let q = OracleBackend::quadrature();
        let v = oracle.value(&m, 0, ind(&[1, 0]), 0.4, &[0.5, 0.4], &q).unwrap().value;
        assert!((v - 0.6).abs() < 1e-9, "{v}");
    }

    #[test]
    fn cds_counterparty_leg_matches_constant_intensity_formula() {
        let (lam, loss, eps, horizon) = (0.4, 0.55, 0.04, 2.0);
        let loss0 = |_: DefaultState| 0.6;
        let loss1 = move |_: DefaultState| loss;
        let oracle = CdsOracle::new(horizon, [0.05, eps], [&loss0, &loss1], 1.0);
        let m = const_model(vec![0.5, lam], vec![vec![0.0; 2]; 2]);
        let q = OracleBackend::quadrature();
        // State (1,0): only the counterparty races its own clock.
        for t in [0.0, 0.8] {
            let v = oracle.value(&m, 1, ind(&[1, 0]), t, &[0.5, lam], &q).unwrap().value;
            let exact = (loss - eps / lam) * (1.0 - (-lam * (horizon - t)).exp());
            assert!((v - exact).abs() < 1e-10, "t {t}: {v} vs {exact}");
        }
    }

    #[test]
    fn bond_exact_and_constant_intensity_states() {
        let (lam, loss, eps, horizon) = (0.4, 0.6, 0.03, 2.0);
        let loss0 = move |_: DefaultState| loss;
        let loss1 = |_: DefaultState| 0.55;
        let oracle = BondOracle::new(horizon, eps, 0.04, [&loss0, &loss1], 1.0);
        let m = const_model(vec![lam, 0.3], vec![vec![0.0; 2]; 2]);
        let q = OracleBackend::quadrature();
        assert_eq!(
            oracle.value(&m, 0, ind(&[1, 1]), 0.2, &[lam, 0.3], &q).unwrap().value,
            1.0 - loss
        );
        assert_eq!(oracle.cva_source(&m, ind(&[0, 1]), 0.2, &[lam, 0.3], &q).unwrap().value, 0.0);
        // Bond on the survivor after the counterparty default.
        for t in [0.0, 1.1] {
            let tau = horizon - t;
            let exact = (-lam * tau).exp() + ((1.0 - loss) + eps / lam) * (1.0 - (-lam * tau).exp());
            let v = oracle.value(&m, 0, ind(&[0, 1]), t, &[lam, 0.3], &q).unwrap().value;
            assert!((v - exact).abs() < 1e-10, "t {t}: {v} vs {exact}");
        }
    }

    #[test]
    fn ftd_exact_states() {
        let l0 = |_: DefaultState| 0.4;
        let l1 = |_: DefaultState| 0.5;
        let lc = |_: DefaultState| 0.55;
        let oracle = FtdOracle::new(2.0, 0.03, [&l0, &l1], &lc, 1.0);
        let m = const_model(vec![0.4, 0.35, 0.3], vec![vec![0.0; 3]; 3]);
        let q = OracleBackend::quadrature();
        let x = [0.4, 0.35, 0.3];
        assert_eq!(oracle.value(&m, ind(&[1, 1, 1]), 0.3, &x, &q).unwrap().value, 0.4 + 0.5);
        assert_eq!(oracle.cva_source(&m, ind(&[0, 0, 1]), 0.3, &x, &q).unwrap().value, 0.0);
        // Once the basket has triggered, no future exposure remains.
        for z in [ind(&[1, 0, 0]), ind(&[0, 1, 0]), ind(&[1, 1, 0])] {
            assert_eq!(oracle.cva_source(&m, z, 0.3, &x, &q).unwrap().value, 0.0);
        }
    }

    #[test]
    fn ftd_triggered_states_hold_their_loss_level() {
        // After the first basket default the claim value stays at the paid
        // loss (post-state) for any surviving complement.
        let l0 = |_: DefaultState| 0.4;
        let l1 = |_: DefaultState| 0.5;
        let lc = |_: DefaultState| 0.55;
        let oracle = FtdOracle::new(2.0, 0.03, [&l0, &l1], &lc, 1.0);
        let m = const_model(
            vec![0.4, 0.35, 0.3],
            vec![
                vec![0.0, 0.2, 0.1],
                vec![0.15, 0.0, 0.1],
                vec![0.1, 0.1, 0.0],
            ],
        );
        let q = OracleBackend::quadrature();
        let x = [0.4, 0.35, 0.3];
        for (z, want) in [
            (ind(&[1, 0, 1]), 0.4),
            (ind(&[0, 1, 1]), 0.5),
            (ind(&[1, 1, 0]), 0.9),
            (ind(&[1, 0, 0]), 0.4),
            (ind(&[0, 1, 0]), 0.5),
        ] {
            let v = oracle.value(&m, z, 0.25, &x, &q).unwrap().value;
            assert!((v - want).abs() < 1e-9, "state {z}: {v} vs {want}");
        }
    }

    #[test]
    fn quadrature_and_monte_carlo_backends_agree() {
        let loss0 = |_: DefaultState| 0.6;
        let loss1 = |_: DefaultState| 0.55;
        let oracle = CdsOracle::new(1.5, [0.05, 0.04], [&loss0, &loss1], 1.0);
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0, 0.3], vec![0.2, 0.0]]);
        let quad = OracleBackend::quadrature();
        let mc = OracleBackend::MonteCarlo(OracleMcConfig::new(1, 0.01, 7));
        let x = [0.5, 0.4];
        for z in DefaultState::all(2) {
            let a = oracle.value(&m, 0, z, 0.0, &x, &quad).unwrap();
            let b = oracle.value(&m, 0, z, 0.0, &x, &mc).unwrap();
            assert!(a.agrees_within(&b, 3.0, 5e-4), "state {z}: {} vs {}", a.value, b.value);
        }
        let a = oracle.cva_source(&m, DefaultState::none(2), 0.0, &x, &quad).unwrap();
        let b = oracle.cva_source(&m, DefaultState::none(2), 0.0, &x, &mc).unwrap();
        assert!(a.agrees_within(&b, 3.0, 5e-4), "g {} vs {}", a.value, b.value);
    }

    #[test]
    fn ftd_value_sits_between_single_name_bounds_at_combined_hazard() {
        // Constant intensities, no contagion: the basket value equals the
        // single-name formula at the combined hazard with the
        // intensity-weighted loss, hence lies between the min- and max-loss
        // variants.
        let (la, lb, spread, horizon) = (0.45f64, 0.3f64, 0.06f64, 1.5f64);
        let (l0v, l1v) = (0.4, 0.5);
        let l0 = move |_: DefaultState| l0v;
        let l1 = move |_: DefaultState| l1v;
        let lc = |_: DefaultState| 0.55;
        let oracle = FtdOracle::new(horizon, spread, [&l0, &l1], &lc, 1.0);
        let m = const_model(vec![la, lb, 0.3], vec![vec![0.0; 3]; 3]);
        let q = OracleBackend::quadrature();
        let x = [la, lb, 0.3];
        let got = oracle.value(&m, ind(&[0, 0, 0]), 0.0, &x, &q).unwrap().value;
        let single = |loss: f64| {
            let lam = la + lb;
            (loss - spread / lam) * (1.0 - (-lam * horizon).exp())
        };
        let weighted = single((l0v * la + l1v * lb) / (la + lb));
        assert!((got - weighted).abs() < 1e-10, "{got} vs {weighted}");
        assert!(got >= single(l0v.min(l1v)) - 1e-12);
        assert!(got <= single(l0v.max(l1v)) + 1e-12);
        // The counterparty state does not move the basket value when w = 0.
        let shifted = oracle.value(&m, ind(&[0, 0, 1]), 0.0, &x, &q).unwrap().value;
        assert!((shifted - got).abs() < 1e-9);
    }

    #[test]
    fn quadrature_rejects_diffusive_models() {
        let m = ModelParams::new_shared_vol(
            vec![0.3, 0.3],
            vec![1.0, 1.0],
            vec![0.4],
            vec![vec![0.0; 2]; 2],
            vec![0.4, 0.3],
        )
        .unwrap();
        let loss0 = |_: DefaultState| 0.6;
        let loss1 = |_: DefaultState| 0.55;
        let oracle = CdsOracle::new(1.0, [0.05, 0.04], [&loss0, &loss1], 1.0);
        let err = oracle.value(&m, 0, DefaultState::none(2), 0.0, &[0.4, 0.3], &OracleBackend::quadrature());
        assert!(err.is_err());
    }

    #[test]
    fn wrong_name_count_is_rejected() {
        let loss0 = |_: DefaultState| 0.6;
        let loss1 = |_: DefaultState| 0.55;
        let oracle = CdsOracle::new(1.0, [0.05, 0.04], [&loss0, &loss1], 1.0);
        let m3 = const_model(vec![0.4, 0.3, 0.2], vec![vec![0.0; 3]; 3]);
        let z = DefaultState::none(3);
        assert!(oracle.value(&m3, 0, z, 0.0, &[0.4, 0.3, 0.2], &OracleBackend::quadrature()).is_err());
    }
}
