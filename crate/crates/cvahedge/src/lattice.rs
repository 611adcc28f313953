//! Backward time-grid solver for models whose intensities are deterministic
//! between defaults with state-independent slopes (no diffusion, no mean
//! reversion). In that class the intensity vector is a function of
//! `(time, default state)` alone, so the recursive value systems collapse to
//! one ordinary backward integration per default state, solved here to
//! near machine accuracy on a uniform grid.
//!
//! These tables back the hedging coefficients and serve as the fully
//! deterministic quadrature specialization of the claim values.

use crate::claims::{ClaimSpec, Portfolio};
use crate::error::{Error, Result};
use crate::model::{DefaultState, ModelParams};

/// Per-state value functions on a shared uniform grid over `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct LatticeTables {
    n: usize,
    horizon: f64,
    h: f64,
    values: Vec<Vec<f64>>,
}

impl LatticeTables {
    pub fn n_names(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Value at `(t, z)` by cubic interpolation in `t` (exact at nodes).
    pub fn eval(&self, t: f64, z: DefaultState) -> f64 {
        let table = &self.values[z.index()];
        let m = table.len() - 1;
        let s = (t / self.h).clamp(0.0, m as f64);
        let k = (s.floor() as usize).min(m - 1);
        let lo = k.saturating_sub(1).min(m - 3);
        let u = s - lo as f64;
        // 4-point Lagrange basis on offsets 0..4.
        let w0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0;
        let w1 = u * (u - 2.0) * (u - 3.0) / 2.0;
        let w2 = -u * (u - 1.0) * (u - 3.0) / 2.0;
        let w3 = u * (u - 1.0) * (u - 2.0) / 6.0;
        w0 * table[lo] + w1 * table[lo + 1] + w2 * table[lo + 2] + w3 * table[lo + 3]
    }
}

/// Intensity of name `j` at `(s, z)`: initial value plus accumulated drift
/// plus the contagion weights of the defaults in `z`.
fn state_intensity(model: &ModelParams, s: f64, z: DefaultState, j: usize) -> f64 {
    let mut x = model.initial[j] + model.kappa[j] * s;
    for l in 0..model.n_names() {
        if z.is_defaulted(l) && l != j {
            x += model.contagion[j][l];
        }
    }
    x
}

/// `int_a^b sum_{j surviving} x_j(u, z) du`, exact for affine intensities.
fn hazard_integral(model: &ModelParams, z: DefaultState, a: f64, b: f64) -> f64 {
    let mut c0 = 0.0;
    let mut c1 = 0.0;
    for j in z.survivors() {
        c0 += state_intensity(model, 0.0, z, j);
        c1 += model.kappa[j];
    }
    c0 * (b - a) + 0.5 * c1 * (b * b - a * a)
}

fn check_supported(model: &ModelParams, n_steps: usize, horizon: f64) -> Result<()> {
    if !model.is_deterministic() || model.nu.iter().any(|&v| v != 0.0) {
        return Err(Error::Domain(
            "lattice tables need deterministic intensities with state-independent slopes \
             (sigma = 0, nu = 0)"
                .into(),
        ));
    }
    if n_steps < 4 {
        return Err(Error::Domain("lattice needs at least four steps".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    Ok(())
}

/// Solves the claim value system for weight vector `alpha` on all default
/// states. `alpha = (1,1,1)` gives the gain-level value; `(1,0,0)` and
/// `(0,1,1)` give the two price components.
pub fn claim_tables(
    model: &ModelParams,
    claim: &ClaimSpec,
    alpha: [f64; 3],
    horizon: f64,
    n_steps: usize,
) -> Result<LatticeTables> {
    check_supported(model, n_steps, horizon)?;
    let n = model.n_names();
    if claim.n_names() != n {
        return Err(Error::Domain("claim and model disagree on the name count".into()));
    }
    let h = horizon / n_steps as f64;
    let mut states: Vec<DefaultState> = DefaultState::all(n).collect();
    states.sort_by_key(|z| std::cmp::Reverse(z.popcount()));

    let mut tables = LatticeTables { n, horizon, h, values: vec![Vec::new(); 1 << n] };
    for &z in &states {
        let terminal =
            alpha[0] * claim.xi(z) * (1.0 - claim.k(z)) + alpha[1] * claim.recovery(z) * claim.k(z);
        let annuity = alpha[2] * (1.0 - claim.k(z)) * claim.rate(z);
        let table = if z.all_defaulted() {
            (0..=n_steps)
                .map(|k| terminal + annuity * (horizon - k as f64 * h))
                .collect()
        } else {
            let src = |s: f64, t: &LatticeTables| -> f64 {
                let mut v = annuity;
                for j in z.survivors() {
                    let zj = z.with_default(j);
                    let comp = alpha[2] * claim.k(z) * (claim.recovery(zj) - claim.recovery(z));
                    v += state_intensity(model, s, z, j) * (t.eval(s, zj) - comp);
                }
                v
            };
            integrate_backward(model, z, terminal, &src, &tables, horizon, n_steps)
        };
        tables.values[z.index()] = table;
    }
    Ok(tables)
}

/// Solves the counterparty-risk value system `g` given the portfolio claims'
/// `(1,1,1)` tables. `g` vanishes identically once the counterparty has
/// defaulted and at the horizon.
pub fn cva_tables(
    model: &ModelParams,
    portfolio: &Portfolio,
    claim_values: &[LatticeTables],
    horizon: f64,
    n_steps: usize,
) -> Result<LatticeTables> {
    check_supported(model, n_steps, horizon)?;
    let n = model.n_names();
    if portfolio.n_names() != n {
        return Err(Error::Domain("portfolio and model disagree on the name count".into()));
    }
    if claim_values.len() < portfolio.n_references() {
        return Err(Error::Domain("need claim value tables for every reference claim".into()));
    }
    let cpty = model.counterparty();
    let h = horizon / n_steps as f64;
    let mut states: Vec<DefaultState> = DefaultState::all(n).collect();
    states.sort_by_key(|z| std::cmp::Reverse(z.popcount()));

    let mut tables = LatticeTables { n, horizon, h, values: vec![Vec::new(); 1 << n] };
    for &z in &states {
        let table = if z.is_defaulted(cpty) || z.all_defaulted() {
            vec![0.0; n_steps + 1]
        } else {
            let src = |s: f64, t: &LatticeTables| -> f64 {
                let mut v = 0.0;
                for j in z.survivors() {
                    v += state_intensity(model, s, z, j) * t.eval(s, z.with_default(j));
                }
                let zc = z.with_default(cpty);
                let mut expo = 0.0;
                for i in 0..portfolio.n_references() {
                    let claim = portfolio.reference(i);
                    expo += portfolio.weights[i]
                        * (1.0 - claim.k(zc))
                        * claim_values[i].eval(s, zc);
                }
                v + portfolio.cpty_loss(zc) * expo.max(0.0) * state_intensity(model, s, z, cpty)
            };
            integrate_backward(model, z, 0.0, &src, &tables, horizon, n_steps)
        };
        tables.values[z.index()] = table;
    }
    Ok(tables)
}

/// Backward integration of `v(t) = terminal * E(t,T) + int_t^T src(s) E(t,s) ds`
/// where `E` is the survivor hazard discount in state `z`. One Simpson step
/// per grid interval; child-state values come from `done` (already solved,
/// higher popcount).
fn integrate_backward(
    model: &ModelParams,
    z: DefaultState,
    terminal: f64,
    src: &dyn Fn(f64, &LatticeTables) -> f64,
    done: &LatticeTables,
    horizon: f64,
    n_steps: usize,
) -> Vec<f64> {
    let h = horizon / n_steps as f64;
    let mut out = vec![0.0; n_steps + 1];
    out[n_steps] = terminal;
    for k in (0..n_steps).rev() {
        let t0 = k as f64 * h;
        let t1 = t0 + h;
        let tm = t0 + 0.5 * h;
        let e_mid = (-hazard_integral(model, z, t0, tm)).exp();
        let e_full = (-hazard_integral(model, z, t0, t1)).exp();
        let q = h / 6.0 * (src(t0, done) + 4.0 * e_mid * src(tm, done) + e_full * src(t1, done));
        out[k] = e_full * out[k + 1] + q;
    }
    out
}
