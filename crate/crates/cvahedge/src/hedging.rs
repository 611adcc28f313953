//! Risk-minimizing hedge of the counterparty-risk payment stream using the
//! credit swap on the counterparty, plus replay and diagnostics.
//!
//! The hedge ratio at a pre-default state is the ratio of the instantaneous
//! covariation between the stream value and the instrument gain to the
//! instrument's quadratic-variation density: a diffusion bracket `U1`, the
//! direct payment term `U2`, a jump-covariation sum `U3`, over the
//! denominator `phi`. The full strategy holds `theta` units of the gain
//! process and `eta = V - Theta - theta Y` in the riskless asset, stops at
//! the earlier of maturity and the counterparty default, and is 0-achieving
//! by construction.

use crate::claims::{make_cds, ClaimSpec, Portfolio};
use crate::error::{Error, Result};
use crate::fk::{self, CauchySpec, EstimatorConfig, FEstimator};
use crate::lattice::{self, LatticeTables};
use crate::model::{DefaultState, MarketPath, ModelParams};
use crate::stats::{estimate_from, Accumulator, Estimate};

/// Minimum ensemble size for the decomposition diagnostics.
pub const MIN_DIAGNOSTIC_PATHS: usize = 10_000;

/// Relative floor for the hedge denominator.
pub const PHI_GUARD: f64 = 1e-12;

/// The hedging instrument: a credit swap referencing the counterparty.
#[derive(Debug, Clone)]
pub struct CdsHedgeInstrument {
    pub spread: f64,
    /// Counterparty loss rate by default state.
    pub loss: Vec<f64>,
    /// The instrument as a claim (swap on the last name).
    pub claim: ClaimSpec,
}

impl CdsHedgeInstrument {
    pub fn new(n: usize, spread: f64, loss: &dyn Fn(DefaultState) -> f64) -> Result<Self> {
        let claim = make_cds(n, n - 1, spread, loss)?;
        Ok(CdsHedgeInstrument {
            spread,
            loss: DefaultState::all(n).map(loss).collect(),
            claim,
        })
    }

    pub fn loss_at(&self, z: DefaultState) -> f64 {
        self.loss[z.index()]
    }
}

/// Evaluations of the value functions the hedge needs: the instrument value
/// and gradient, the stream value `g` and gradient, and the reference-claim
/// values.
pub trait ValueSurface: Sync {
    fn f_cds(&self, t: f64, x: &[f64], z: DefaultState) -> Result<f64>;
    fn grad_f_cds(&self, t: f64, x: &[f64], z: DefaultState) -> Result<Vec<f64>>;
    fn g(&self, t: f64, x: &[f64], z: DefaultState) -> Result<f64>;
    fn grad_g(&self, t: f64, x: &[f64], z: DefaultState) -> Result<Vec<f64>>;
    fn f_claim(&self, i: usize, t: f64, x: &[f64], z: DefaultState) -> Result<f64>;
}

/// Near-exact tables for deterministic piecewise-affine models; values
/// depend on `(t, z)` only, so path states evaluate in O(1).
pub struct LatticeSurface {
    f_cds: LatticeTables,
    f_claims: Vec<LatticeTables>,
    g: LatticeTables,
    n: usize,
}

impl LatticeSurface {
    pub fn build(
        model: &ModelParams,
        portfolio: &Portfolio,
        instrument: &CdsHedgeInstrument,
        horizon: f64,
        n_steps: usize,
    ) -> Result<Self> {
        let f_cds = lattice::claim_tables(model, &instrument.claim, [1.0, 1.0, 1.0], horizon, n_steps)?;
        let mut f_claims = Vec::with_capacity(portfolio.n_references());
        for i in 0..portfolio.n_references() {
            f_claims.push(lattice::claim_tables(
                model,
                portfolio.reference(i),
                [1.0, 1.0, 1.0],
                horizon,
                n_steps,
            )?);
        }
        let g = lattice::cva_tables(model, portfolio, &f_claims, horizon, n_steps)?;
        Ok(LatticeSurface { f_cds, f_claims, g, n: model.n_names() })
    }
}

impl ValueSurface for LatticeSurface {
    fn f_cds(&self, t: f64, _x: &[f64], z: DefaultState) -> Result<f64> {
        Ok(self.f_cds.eval(t, z))
    }

    fn grad_f_cds(&self, _t: f64, _x: &[f64], _z: DefaultState) -> Result<Vec<f64>> {
        // The lattice applies to diffusion-free models where the gradient
        // only ever appears multiplied by sigma = 0.
        Ok(vec![0.0; self.n])
    }

    fn g(&self, t: f64, _x: &[f64], z: DefaultState) -> Result<f64> {
        Ok(self.g.eval(t, z))
    }

    fn grad_g(&self, _t: f64, _x: &[f64], _z: DefaultState) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.n])
    }

    fn f_claim(&self, i: usize, t: f64, _x: &[f64], z: DefaultState) -> Result<f64> {
        Ok(self.f_claims[i].eval(t, z))
    }
}

/// Estimator-backed surface for general models. Point evaluations run nested
/// Monte Carlo; intended for spot checks, not full-path replays.
pub struct EstimatorSurface<'a> {
    pub model: &'a ModelParams,
    pub portfolio: &'a Portfolio,
    pub instrument: &'a CdsHedgeInstrument,
    pub cfg: EstimatorConfig,
}

impl ValueSurface for EstimatorSurface<'_> {
    fn f_cds(&self, t: f64, x: &[f64], z: DefaultState) -> Result<f64> {
        let spec = CauchySpec::gain(self.instrument.claim.clone());
        Ok(fk::estimate_f_recursive(self.model, &spec, t, x, z, &self.cfg)?.value)
    }

    fn grad_f_cds(&self, t: f64, x: &[f64], z: DefaultState) -> Result<Vec<f64>> {
        let spec = CauchySpec::gain(self.instrument.claim.clone());
        let eval = fk::f_evaluator(self.model, &spec, FEstimator::Recursive, &self.cfg);
        Ok(fk::gradient_x(&eval, t, x, z, &self.cfg)?.grad)
    }

    fn g(&self, t: f64, x: &[f64], z: DefaultState) -> Result<f64> {
        Ok(fk::estimate_g(self.model, self.portfolio, t, x, z, &self.cfg)?.value)
    }

    fn grad_g(&self, t: f64, x: &[f64], z: DefaultState) -> Result<Vec<f64>> {
        let eval = fk::g_evaluator(self.model, self.portfolio, &self.cfg);
        Ok(fk::gradient_x(&eval, t, x, z, &self.cfg)?.grad)
    }

    fn f_claim(&self, i: usize, t: f64, x: &[f64], z: DefaultState) -> Result<f64> {
        let spec = CauchySpec::gain(self.portfolio.reference(i).clone());
        Ok(fk::estimate_f_recursive(self.model, &spec, t, x, z, &self.cfg)?.value)
    }
}

/// `sum_k (sum_i a_i sigma_ik sqrt(x_i)) (sum_i b_i sigma_ik sqrt(x_i))`
/// over surviving names.
fn diffusion_bracket(model: &ModelParams, x: &[f64], z: DefaultState, a: &[f64], b: &[f64]) -> f64 {
    let kf = model.n_factors();
    let mut total = 0.0;
    for k in 0..kf {
        let mut sa = 0.0;
        let mut sb = 0.0;
        for i in z.survivors() {
            let root = x[i].max(0.0).sqrt();
            sa += a[i] * model.sigma[i][k] * root;
            sb += b[i] * model.sigma[i][k] * root;
        }
        total += sa * sb;
    }
    total
}

/// Post-jump intensities when name `j` defaults from `(x, z)`.
fn shift(model: &ModelParams, x: &[f64], z: DefaultState, j: usize) -> Vec<f64> {
    let zj = z.with_default(j);
    let mut out = x.to_vec();
    for i in zj.survivors() {
        out[i] += model.contagion[i][j];
    }
    out
}

/// Reconstructs the pre-event intensities at a default grid point: the
/// recorded values are post-jump for the survivors of the new state and
/// frozen pre-default values elsewhere.
fn pre_event_intensities(
    model: &ModelParams,
    recorded: &[f64],
    z_before: DefaultState,
    z_after: DefaultState,
) -> Vec<f64> {
    let j_star = (z_after.bits() ^ z_before.bits()).trailing_zeros() as usize;
    let mut out = recorded.to_vec();
    for i in z_after.survivors() {
        out[i] -= model.contagion[i][j_star];
    }
    out
}

/// Instrument jump difference `G_j = F_cds(t, x + w_j, z^j) - F_cds(t, x, z)`.
fn instrument_jump(
    surface: &dyn ValueSurface,
    model: &ModelParams,
    t: f64,
    x: &[f64],
    z: DefaultState,
    j: usize,
    f0: f64,
) -> Result<f64> {
    Ok(surface.f_cds(t, &shift(model, x, z, j), z.with_default(j))? - f0)
}

/// Quadratic-variation density of the instrument gain:
/// `|grad_F_cds' sigma|^2 + sum_j |G_j - z_c (L(z^j) - L(z))|^2 x_j 1(j alive)`.
pub fn phi(
    surface: &dyn ValueSurface,
    model: &ModelParams,
    instrument: &CdsHedgeInstrument,
    t: f64,
    x: &[f64],
    z: DefaultState,
) -> Result<f64> {
    let cpty = model.counterparty();
    let diff = if model.is_deterministic() {
        0.0
    } else {
        let v = surface.grad_f_cds(t, x, z)?;
        diffusion_bracket(model, x, z, &v, &v)
    };
    let f0 = surface.f_cds(t, x, z)?;
    let mut jumps = 0.0;
    for j in z.survivors() {
        let gj = instrument_jump(surface, model, t, x, z, j, f0)?;
        let compensation = if z.is_defaulted(cpty) {
            instrument.loss_at(z.with_default(j)) - instrument.loss_at(z)
        } else {
            0.0
        };
        jumps += (gj - compensation).powi(2) * x[j];
    }
    Ok(diff + jumps)
}

/// The three numerator terms of the hedge ratio at a state with the
/// counterparty alive. Refuses post-default states: the hedge lives on
/// `[0, T and tau_cpty]`.
pub fn u_terms(
    surface: &dyn ValueSurface,
    model: &ModelParams,
    portfolio: &Portfolio,
    instrument: &CdsHedgeInstrument,
    t: f64,
    x: &[f64],
    z: DefaultState,
) -> Result<(f64, f64, f64)> {
    let cpty = model.counterparty();
    if z.is_defaulted(cpty) {
        return Err(Error::CounterpartyDefaulted);
    }
    let f0 = surface.f_cds(t, x, z)?;
    let g0 = surface.g(t, x, z)?;

    let u1 = if model.is_deterministic() {
        0.0
    } else {
        let dg = surface.grad_g(t, x, z)?;
        let vc = surface.grad_f_cds(t, x, z)?;
        diffusion_bracket(model, x, z, &dg, &vc)
    };

    let zc = z.with_default(cpty);
    let xc_shift = shift(model, x, z, cpty);
    let mut expo = 0.0;
    for i in 0..portfolio.n_references() {
        let claim = portfolio.reference(i);
        if portfolio.weights[i] == 0.0 || claim.triggered(zc) {
            continue;
        }
        expo += portfolio.weights[i] * surface.f_claim(i, t, &xc_shift, zc)?;
    }
    let g_cpty = instrument_jump(surface, model, t, x, z, cpty, f0)?;
    let u2 = instrument.loss_at(zc) * expo.max(0.0) * g_cpty * x[cpty];

    let mut u3 = 0.0;
    for j in z.survivors() {
        let zj = z.with_default(j);
        let gj = instrument_jump(surface, model, t, x, z, j, f0)?;
        let g_diff = surface.g(t, &shift(model, x, z, j), zj)? - g0;
        u3 += g_diff * gj * x[j];
    }
    Ok((u1, u2, u3))
}

/// Risk-minimizing hedge ratio `(U1 + U2 + U3) / phi`, with a guard that
/// rejects a vanishing denominator (the numerators vanish with it in the
/// model; the guard preserves square integrability numerically).
pub fn theta_gkw(
    surface: &dyn ValueSurface,
    model: &ModelParams,
    portfolio: &Portfolio,
    instrument: &CdsHedgeInstrument,
    t: f64,
    x: &[f64],
    z: DefaultState,
) -> Result<f64> {
    let (u1, u2, u3) = u_terms(surface, model, portfolio, instrument, t, x, z)?;
    let ph = phi(surface, model, instrument, t, x, z)?;
    let num = u1 + u2 + u3;
    if ph < PHI_GUARD * num.abs().max(1.0) {
        return Err(Error::DegeneratePhi { phi: ph, u1, u2, u3 });
    }
    Ok(num / ph)
}

/// One grid row of a hedge replay.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeRow {
    pub time: f64,
    pub theta: f64,
    pub eta: f64,
    /// Optimal portfolio value `V - Theta` (equals the remaining stream
    /// value; exactly zero at the stop).
    pub value: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub phi: f64,
    /// Cost increment over the step starting here.
    pub d_cost: f64,
    /// Residual increment (equals the cost increment).
    pub d_residual: f64,
    /// Instrument gain increment over the step starting here.
    pub d_gain: f64,
    /// Set when the denominator guard forced `theta = 0`.
    pub guarded: bool,
}

/// Hedge replay along one simulated path, stopped at the earlier of the
/// horizon and the counterparty default.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeReport {
    pub rows: Vec<HedgeRow>,
    pub stopped_at: f64,
    /// Payment of the counterparty-risk stream at the stop (zero if no
    /// counterparty default before the horizon).
    pub theta_payment: f64,
    /// Total cost `sum dC = C(stop) - C(0)`.
    pub total_cost: f64,
    /// `sum theta dY`, enough to replay scaled-hedge probes.
    pub total_theta_gain: f64,
    /// Value of the optimal portfolio at the stop (zero by construction).
    pub terminal_value: f64,
    /// Stream value at the start, `V(t0)`.
    pub initial_value: f64,
}

/// Replays the risk-minimizing strategy along a simulated path.
pub fn full_strategy(
    surface: &dyn ValueSurface,
    model: &ModelParams,
    portfolio: &Portfolio,
    instrument: &CdsHedgeInstrument,
    path: &MarketPath,
    horizon: f64,
) -> Result<HedgeReport> {
    let cpty = model.counterparty();
    let t0 = path.start_time();
    let stop = path.default_index(cpty).unwrap_or(path.grid.len() - 1);

    // Stream payment at the stop (strictly before the horizon only).
    let tau = path.default_times[cpty];
    let theta_payment = if tau < horizon {
        let z_post = path.states[stop];
        let x_post = &path.intensities[stop];
        let mut expo = 0.0;
        for i in 0..portfolio.n_references() {
            let claim = portfolio.reference(i);
            if portfolio.weights[i] == 0.0 || claim.triggered(z_post) {
                continue;
            }
            expo += portfolio.weights[i] * surface.f_claim(i, tau, x_post, z_post)?;
        }
        portfolio.cpty_loss(z_post) * expo.max(0.0)
    } else {
        0.0
    };

    let mut rows: Vec<HedgeRow> = Vec::with_capacity(stop + 1);
    let mut total_cost = 0.0;
    let mut total_theta_gain = 0.0;
    for k in 0..=stop {
        let t = path.grid[k];
        let z = path.states[k];
        let x = &path.intensities[k];
        if k == stop {
            // Stopped row: the strategy is closed out.
            let value = if z.is_defaulted(cpty) {
                surface.g(t, x, z)? // identically zero
            } else {
                surface.g(t.min(horizon), x, z)?
            };
            rows.push(HedgeRow {
                time: t,
                theta: 0.0,
                eta: 0.0,
                value,
                u1: 0.0,
                u2: 0.0,
                u3: 0.0,
                phi: 0.0,
                d_cost: 0.0,
                d_residual: 0.0,
                d_gain: 0.0,
                guarded: false,
            });
            break;
        }

        let g_here = surface.g(t, x, z)?;
        let (u1, u2, u3) = u_terms(surface, model, portfolio, instrument, t, x, z)?;
        let ph = phi(surface, model, instrument, t, x, z)?;
        let num = u1 + u2 + u3;
        let (theta, guarded) = if ph < PHI_GUARD * num.abs().max(1.0) {
            (0.0, true)
        } else {
            (num / ph, false)
        };

        // Gain level of the instrument: value function plus accrued spread
        // (no recovery adjustment before the counterparty default).
        let y_level = surface.f_cds(t, x, z)? - instrument.spread * (t - t0);
        let v_here = g_here; // Theta = 0 while the counterparty is alive
        let eta = v_here - theta * y_level;

        // Dynamics-based instrument gain over (t_k, t_{k+1}]: the hazard
        // compensator part integrates the running jump differences along the
        // frozen-state segment; the hedged gain integrates the running hedge
        // ratio against it. One default can sit at the segment's right end.
        let t_next = path.grid[k + 1];
        let z_next = path.states[k + 1];
        let event = z_next != z;
        let x_end_pre = if event {
            pre_event_intensities(model, &path.intensities[k + 1], z, z_next)
        } else {
            path.intensities[k + 1].clone()
        };
        let dens = |u: f64, xu: &[f64]| -> Result<(f64, f64)> {
            // Returns (sum_j G_j x_j, theta * sum_j G_j x_j) at (u, xu, z).
            let f0 = surface.f_cds(u, xu, z)?;
            let mut total = 0.0;
            for j in z.survivors() {
                total += instrument_jump(surface, model, u, xu, z, j, f0)? * xu[j];
            }
            let (u1s, u2s, u3s) = u_terms(surface, model, portfolio, instrument, u, xu, z)?;
            let phs = phi(surface, model, instrument, u, xu, z)?;
            let nums = u1s + u2s + u3s;
            let ths = if phs < PHI_GUARD * nums.abs().max(1.0) { 0.0 } else { nums / phs };
            Ok((total, ths * total))
        };
        let h_seg = t_next - t;
        let x_mid: Vec<f64> =
            x.iter().zip(&x_end_pre).map(|(a, b)| 0.5 * (a + b)).collect();
        let (da, ta) = dens(t, x)?;
        let (dm_mid, tm_mid) = dens(t + 0.5 * h_seg, &x_mid)?;
        let (db, tb) = dens(t_next, &x_end_pre)?;
        let comp_gain = -h_seg / 6.0 * (da + 4.0 * dm_mid + db);
        let comp_theta_gain = -h_seg / 6.0 * (ta + 4.0 * tm_mid + tb);

        let mut d_gain = comp_gain;
        let mut d_theta_gain = comp_theta_gain;
        if !model.is_deterministic() {
            let v = surface.grad_f_cds(t, x, z)?;
            let kf = model.n_factors();
            for kk in 0..kf {
                let mut coeff = 0.0;
                for i in z.survivors() {
                    coeff += v[i] * model.sigma[i][kk] * x[i].max(0.0).sqrt();
                }
                d_gain += coeff * path.brownian[k][kk];
                d_theta_gain += theta * coeff * path.brownian[k][kk];
            }
        }
        if event {
            let j_star = (z_next.bits() ^ z.bits()).trailing_zeros() as usize;
            let f0 = surface.f_cds(t_next, &x_end_pre, z)?;
            let jump = instrument_jump(surface, model, t_next, &x_end_pre, z, j_star, f0)?;
            d_gain += jump;
            let (u1s, u2s, u3s) =
                u_terms(surface, model, portfolio, instrument, t_next, &x_end_pre, z)?;
            let phs = phi(surface, model, instrument, t_next, &x_end_pre, z)?;
            let nums = u1s + u2s + u3s;
            let ths = if phs < PHI_GUARD * nums.abs().max(1.0) { 0.0 } else { nums / phs };
            d_theta_gain += ths * jump;
        }

        // Value increment: V = g + Theta, with Theta paid only at the stop.
        let g_next = if k + 1 == stop {
            if z_next.is_defaulted(cpty) {
                0.0
            } else {
                surface.g(path.grid[k + 1].min(horizon), &path.intensities[k + 1], z_next)?
            }
        } else {
            surface.g(t_next, &path.intensities[k + 1], z_next)?
        };
        let theta_next = if k + 1 == stop && z_next.is_defaulted(cpty) { theta_payment } else { 0.0 };
        let d_value = (g_next + theta_next) - g_here;
        let d_cost = d_value - d_theta_gain;

        total_cost += d_cost;
        total_theta_gain += d_theta_gain;

        rows.push(HedgeRow {
            time: t,
            theta,
            eta,
            value: v_here,
            u1,
            u2,
            u3,
            phi: ph,
            d_cost,
            d_residual: d_cost,
            d_gain,
            guarded,
        });
    }

    let terminal_value = rows.last().map(|r| r.value).unwrap_or(0.0);
    let initial_value = rows.first().map(|r| r.value).unwrap_or(0.0);
    Ok(HedgeReport {
        rows,
        stopped_at: path.grid[stop].min(horizon),
        theta_payment,
        total_cost,
        total_theta_gain,
        terminal_value,
        initial_value,
    })
}

/// Covariance of residual and gain increments within one time bucket.
#[derive(Debug, Clone)]
pub struct BucketCovariance {
    pub t_lo: f64,
    pub covariance: f64,
    pub std_error: f64,
    pub n: u64,
}

/// Risk functional at a scaled hedge, `R(c) = E[(C_c(stop) - C_c(0))^2]`.
#[derive(Debug, Clone)]
pub struct RiskProbe {
    pub scale: f64,
    pub risk: f64,
    /// Paired mean and standard error of `C_c^2 - C_1^2` (positive mean
    /// means the probe is worse than the hedge).
    pub excess_mean: f64,
    pub excess_se: f64,
}

/// Ensemble diagnostics of the decomposition quality.
#[derive(Debug, Clone)]
pub struct GkwDiagnostics {
    pub n_paths: usize,
    /// Mean of the total residual `A(stop) - A(0)` (mean self-financing).
    pub mean_residual: Estimate,
    /// Per-bucket covariance between residual and instrument gain
    /// increments (strong orthogonality).
    pub bucket_covariances: Vec<BucketCovariance>,
    /// Risk at the hedge and at scaled probes.
    pub risk_probes: Vec<RiskProbe>,
}

impl GkwDiagnostics {
    /// Mean residual within `k` standard errors of zero.
    pub fn residual_ok(&self, k: f64) -> bool {
        self.mean_residual.value.abs() <= k * self.mean_residual.std_error.max(1e-300)
            || self.mean_residual.value == 0.0
    }

    /// Every bucket covariance within `k` standard errors of zero.
    pub fn orthogonality_ok(&self, k: f64) -> bool {
        self.bucket_covariances
            .iter()
            .all(|b| b.covariance.abs() <= k * b.std_error || b.covariance == 0.0)
    }

    /// `R(hedge) <= R(probe) + k * se` for every probe.
    pub fn dominance_ok(&self, k: f64) -> bool {
        self.risk_probes
            .iter()
            .all(|p| p.scale == 1.0 || p.excess_mean >= -k * p.excess_se)
    }
}

/// Builds the ensemble diagnostics from hedge replays. Buckets are
/// `[t0 + i bucket_step, t0 + (i+1) bucket_step)`; probes scale the hedge
/// ratio by the given factors.
pub fn gkw_diagnostics(
    reports: &[HedgeReport],
    bucket_step: f64,
    probe_scales: &[f64],
) -> Result<GkwDiagnostics> {
    if reports.len() < MIN_DIAGNOSTIC_PATHS {
        return Err(Error::InsufficientPaths { need: MIN_DIAGNOSTIC_PATHS, got: reports.len() });
    }
    if !(bucket_step > 0.0) {
        return Err(Error::Domain("bucket_step must be positive".into()));
    }
    let totals: Vec<f64> = reports.iter().map(|r| r.total_cost).collect();
    let mean_residual = estimate_from(&totals);

    let t0 = reports[0].rows.first().map(|r| r.time).unwrap_or(0.0);
    let horizon = reports.iter().map(|r| r.stopped_at).fold(0.0, f64::max);
    let n_buckets = ((horizon - t0) / bucket_step).ceil().max(1.0) as usize;
    let mut prod = vec![Accumulator::new(); n_buckets];
    let mut da_acc = vec![Accumulator::new(); n_buckets];
    let mut dy_acc = vec![Accumulator::new(); n_buckets];
    for rep in reports {
        for row in &rep.rows[..rep.rows.len().saturating_sub(1)] {
            let b = ((((row.time - t0) / bucket_step) + 1e-9).floor() as usize).min(n_buckets - 1);
            prod[b].push(row.d_residual * row.d_gain);
            da_acc[b].push(row.d_residual);
            dy_acc[b].push(row.d_gain);
        }
    }
    let bucket_covariances = (0..n_buckets)
        .map(|b| BucketCovariance {
            t_lo: t0 + b as f64 * bucket_step,
            covariance: prod[b].mean() - da_acc[b].mean() * dy_acc[b].mean(),
            std_error: prod[b].std_error(),
            n: prod[b].n(),
        })
        .collect();

    let base: Vec<f64> = reports.iter().map(|r| r.total_cost).collect();
    let mut risk_probes = Vec::with_capacity(probe_scales.len());
    for &c in probe_scales {
        let mut sq = Accumulator::new();
        let mut excess = Accumulator::new();
        for (rep, &c1) in reports.iter().zip(&base) {
            let cc = rep.total_cost + (1.0 - c) * rep.total_theta_gain;
            sq.push(cc * cc);
            excess.push(cc * cc - c1 * c1);
        }
        risk_probes.push(RiskProbe {
            scale: c,
            risk: sq.mean(),
            excess_mean: excess.mean(),
            excess_se: excess.std_error(),
        });
    }

    Ok(GkwDiagnostics { n_paths: reports.len(), mean_residual, bucket_covariances, risk_probes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_market, Scheme, SimConfig};
    use crate::parallel::run_indexed;

    fn const_model(lambda: Vec<f64>, w: Vec<Vec<f64>>) -> ModelParams {
        let n = lambda.len();
        ModelParams::new_shared_vol(vec![0.0; n], vec![0.0; n], vec![], w, lambda).unwrap()
    }

    /// Two-name swap scenario with contagion, piecewise-constant intensities.
    fn scenario() -> (ModelParams, Portfolio, CdsHedgeInstrument) {
        let m = const_model(vec![0.35, 0.25], vec![vec![0.0, 0.4], vec![0.3, 0.0]]);
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        let pf = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![1.0], 0.04, &|_| 0.55).unwrap();
        let instr = CdsHedgeInstrument::new(2, 0.04, &|_| 0.55).unwrap();
        (m, pf, instr)
    }

    fn sim(horizon: f64, step: f64, seed: u64) -> SimConfig {
        SimConfig {
            horizon,
            step,
            n_paths: 1,
            seed,
            substep_cap: 32,
            scheme: Scheme::EulerFullTruncation,
        }
    }

    fn analytic_cds(lambda: f64, loss: f64, eps: f64, tau: f64) -> f64 {
        (loss - eps / lambda) * (1.0 - (-lambda * tau).exp())
    }

    #[test]
    fn phi_matches_single_name_formula() {
        // One name (the counterparty itself), constant intensity: the
        // denominator is the squared own-jump times the intensity.
        let (lam, loss, eps, horizon) = (0.5, 0.55, 0.04, 2.0);
        let m = const_model(vec![lam], vec![vec![0.0]]);
        let instr = CdsHedgeInstrument::new(1, eps, &|_| loss).unwrap();
        let pf = Portfolio::new(vec![instr.claim.clone()], vec![], instr.loss.clone()).unwrap();
        let surf = LatticeSurface::build(&m, &pf, &instr, horizon, 2048).unwrap();
        for t in [0.0, 0.7, 1.5] {
            let f = analytic_cds(lam, loss, eps, horizon - t);
            let want = (loss - f).powi(2) * lam;
            let got = phi(&surf, &m, &instr, t, &[lam], DefaultState::none(1)).unwrap();
            assert!((got - want).abs() < 1e-9, "t {t}: {got} vs {want}");
        }
    }

    #[test]
    fn phi_compensation_appears_only_after_counterparty_default() {
        // State-dependent counterparty loss: at a post-default state the
        // jump difference is compensated by the loss change.
        let m = const_model(vec![0.35, 0.25], vec![vec![0.0, 0.4], vec![0.3, 0.0]]);
        let cl = |z: DefaultState| if z.is_defaulted(0) { 0.5 } else { 0.55 };
        let instr = CdsHedgeInstrument::new(2, 0.04, &cl).unwrap();
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        let pf = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![1.0], 0.04, &cl).unwrap();
        let surf = LatticeSurface::build(&m, &pf, &instr, 1.0, 1024).unwrap();
        // Counterparty defaulted, reference alive: survivor j = 0.
        let z = DefaultState::from_indicators(&[0, 1]);
        let x = m.lattice_intensity(z);
        let t = 0.3;
        let f0 = surf.f_cds(t, &x, z).unwrap();
        let f1 = surf.f_cds(t, &x, z.with_default(0)).unwrap();
        let comp = cl(z.with_default(0)) - cl(z);
        let want = (f1 - f0 - comp).powi(2) * x[0];
        let got = phi(&surf, &m, &instr, t, &x, z).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(comp != 0.0);
    }

    #[test]
    fn zero_portfolio_has_zero_hedge() {
        let m = const_model(vec![0.35, 0.25], vec![vec![0.0, 0.4], vec![0.3, 0.0]]);
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        let pf = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![0.0], 0.04, &|_| 0.55).unwrap();
        let instr = CdsHedgeInstrument::new(2, 0.04, &|_| 0.55).unwrap();
        let surf = LatticeSurface::build(&m, &pf, &instr, 1.0, 512).unwrap();
        let z = DefaultState::none(2);
        let x = m.initial.clone();
        let (u1, u2, u3) = u_terms(&surf, &m, &pf, &instr, 0.2, &x, z).unwrap();
        assert_eq!((u1, u2, u3), (0.0, 0.0, 0.0));
        assert_eq!(theta_gkw(&surf, &m, &pf, &instr, 0.2, &x, z).unwrap(), 0.0);
    }

    #[test]
    fn hedge_refuses_post_default_states() {
        let (m, pf, instr) = scenario();
        let surf = LatticeSurface::build(&m, &pf, &instr, 1.0, 512).unwrap();
        let z = DefaultState::from_indicators(&[0, 1]);
        let err = u_terms(&surf, &m, &pf, &instr, 0.2, &m.initial.clone(), z);
        assert!(matches!(err, Err(Error::CounterpartyDefaulted)));
    }

    #[test]
    fn theta_scales_with_the_position() {
        let m = const_model(vec![0.35, 0.25], vec![vec![0.0, 0.4], vec![0.3, 0.0]]);
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        let instr = CdsHedgeInstrument::new(2, 0.04, &|_| 0.55).unwrap();
        let pf1 = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![1.0], 0.04, &|_| 0.55).unwrap();
        let pf2 = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![2.0], 0.04, &|_| 0.55).unwrap();
        let s1 = LatticeSurface::build(&m, &pf1, &instr, 1.0, 1024).unwrap();
        let s2 = LatticeSurface::build(&m, &pf2, &instr, 1.0, 1024).unwrap();
        let z = DefaultState::none(2);
        let x = m.initial.clone();
        let t1 = theta_gkw(&s1, &m, &pf1, &instr, 0.3, &x, z).unwrap();
        let t2 = theta_gkw(&s2, &m, &pf2, &instr, 0.3, &x, z).unwrap();
        assert!(t1 != 0.0);
        assert!((t2 - 2.0 * t1).abs() < 1e-10, "{t2} vs {}", 2.0 * t1);
    }

    #[test]
    fn degenerate_denominator_is_reported() {
        // Vanishing intensities starve the jump variance.
        let m = const_model(vec![1e-13, 1e-13], vec![vec![0.0; 2]; 2]);
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        let pf = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![1.0], 0.04, &|_| 0.55).unwrap();
        let instr = CdsHedgeInstrument::new(2, 0.04, &|_| 0.55).unwrap();
        let surf = LatticeSurface::build(&m, &pf, &instr, 1.0, 512).unwrap();
        let err = theta_gkw(&surf, &m, &pf, &instr, 0.2, &[1e-13, 1e-13], DefaultState::none(2));
        assert!(matches!(err, Err(Error::DegeneratePhi { .. })));
    }

    #[test]
    fn denominator_floor_holds_on_sampled_states() {
        let (m, pf, instr) = scenario();
        let horizon = 1.0;
        let surf = LatticeSurface::build(&m, &pf, &instr, horizon, 1024).unwrap();
        let cpty = m.counterparty();
        for z in [DefaultState::none(2), DefaultState::from_indicators(&[1, 0])] {
            let x = m.lattice_intensity(z);
            for t in [0.0, 0.33, 0.7] {
                let f0 = surf.f_cds(t, &x, z).unwrap();
                let gc = instrument_jump(&surf, &m, t, &x, z, cpty, f0).unwrap();
                let floor = gc * gc * x[cpty];
                let ph = phi(&surf, &m, &instr, t, &x, z).unwrap();
                assert!(ph >= floor - 1e-12, "phi {ph} below floor {floor}");
            }
        }
    }

    #[test]
    fn zero_portfolio_strategy_is_identically_zero() {
        let m = const_model(vec![0.35, 0.25], vec![vec![0.0, 0.4], vec![0.3, 0.0]]);
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        let pf = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![0.0], 0.04, &|_| 0.55).unwrap();
        let instr = CdsHedgeInstrument::new(2, 0.04, &|_| 0.55).unwrap();
        let horizon = 1.0;
        let surf = LatticeSurface::build(&m, &pf, &instr, horizon, 512).unwrap();
        for p in 0..50 {
            let path = simulate_market(&m, &sim(horizon, 0.05, 71), p).unwrap();
            let rep = full_strategy(&surf, &m, &pf, &instr, &path, horizon).unwrap();
            assert_eq!(rep.theta_payment, 0.0);
            assert_eq!(rep.total_cost, 0.0);
            for row in &rep.rows {
                assert_eq!(row.theta, 0.0);
                assert_eq!(row.eta, 0.0);
                assert_eq!(row.value, 0.0);
                assert_eq!(row.d_cost, 0.0);
            }
        }
    }

    #[test]
    fn strategy_is_zero_achieving_on_every_path() {
        let (m, pf, instr) = scenario();
        let horizon = 1.0;
        let surf = LatticeSurface::build(&m, &pf, &instr, horizon, 1024).unwrap();
        for p in 0..500 {
            let path = simulate_market(&m, &sim(horizon, 0.02, 73), p).unwrap();
            let rep = full_strategy(&surf, &m, &pf, &instr, &path, horizon).unwrap();
            assert_eq!(rep.terminal_value, 0.0, "path {p}");
        }
    }

    #[test]
    fn default_payment_matches_the_value_jump() {
        // At the counterparty default the stream pays exactly the value the
        // martingale bookkeeping assigns to the jump.
        let (m, pf, instr) = scenario();
        let horizon = 1.0;
        let surf = LatticeSurface::build(&m, &pf, &instr, horizon, 2048).unwrap();
        let mut seen = 0;
        for p in 0..2000 {
            let path = simulate_market(&m, &sim(horizon, 0.02, 79), p).unwrap();
            if path.default_times[1] < horizon && path.default_times[0] > path.default_times[1] {
                let rep = full_strategy(&surf, &m, &pf, &instr, &path, horizon).unwrap();
                let tau = path.default_times[1];
                let want = pf.cpty_loss(path.states.last().unwrap().with_default(1).with_default(0))
                    .min(1.0); // constant table: same at every state
                let _ = want;
                let expect = 0.55
                    * (analytic_cds(0.35 + 0.4, 0.6, 0.05, horizon - tau)).max(0.0);
                assert!(
                    (rep.theta_payment - expect).abs() < 1e-8,
                    "payment {} vs {}",
                    rep.theta_payment,
                    expect
                );
                seen += 1;
                if seen > 20 {
                    break;
                }
            }
        }
        assert!(seen > 5);
    }

    #[test]
    fn estimator_surface_prices_the_hedge_under_diffusion() {
        // Square-root diffusion: the hedge ratio comes from nested
        // estimators, including the diffusion bracket U1.
        let m = ModelParams::new_shared_vol(
            vec![0.3, 0.25],
            vec![0.9, 0.8],
            vec![0.45],
            vec![vec![0.0, 0.3], vec![0.25, 0.0]],
            vec![0.4, 0.3],
        )
        .unwrap();
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        let pf = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![1.0], 0.04, &|_| 0.55).unwrap();
        let instr = CdsHedgeInstrument::new(2, 0.04, &|_| 0.55).unwrap();
        let cfg = EstimatorConfig {
            paths: 400,
            grid_step: 0.05,
            inner_paths: vec![4, 2],
            source_stride: 4,
            ..EstimatorConfig::new(1.0, 97)
        };
        let surf = EstimatorSurface { model: &m, portfolio: &pf, instrument: &instr, cfg };
        let z = DefaultState::none(2);
        let x = m.initial.clone();
        let ph = phi(&surf, &m, &instr, 0.2, &x, z).unwrap();
        assert!(ph > 0.0);
        let (u1, u2, u3) = u_terms(&surf, &m, &pf, &instr, 0.2, &x, z).unwrap();
        assert!(u1.is_finite() && u2.is_finite() && u3.is_finite());
        assert!(u1 != 0.0, "diffusion bracket should not vanish under sigma > 0");
        let theta = theta_gkw(&surf, &m, &pf, &instr, 0.2, &x, z).unwrap();
        assert!(theta.is_finite() && theta.abs() < 10.0, "theta {theta}");
    }

    #[test]
    fn diagnostics_require_enough_paths() {
        let (m, pf, instr) = scenario();
        let horizon = 1.0;
        let surf = LatticeSurface::build(&m, &pf, &instr, horizon, 512).unwrap();
        let path = simulate_market(&m, &sim(horizon, 0.05, 83), 0).unwrap();
        let rep = full_strategy(&surf, &m, &pf, &instr, &path, horizon).unwrap();
        let err = gkw_diagnostics(&[rep], 0.05, &[1.0]);
        assert!(matches!(err, Err(Error::InsufficientPaths { .. })));
    }

    #[test]
    fn decomposition_diagnostics_pass_on_the_swap_scenario() {
        let (m, pf, instr) = scenario();
        let horizon = 1.0;
        let step = 0.02;
        let surf = LatticeSurface::build(&m, &pf, &instr, horizon, 2048).unwrap();
        let n = MIN_DIAGNOSTIC_PATHS;
        let reports: Vec<HedgeReport> = run_indexed(n, 0, |p| {
            let path = simulate_market(&m, &sim(horizon, step, 89), p as u64).unwrap();
            full_strategy(&surf, &m, &pf, &instr, &path, horizon).unwrap()
        });
        let diag = gkw_diagnostics(&reports, step, &[0.0, 0.5, 0.9, 1.0, 1.1, 2.0]).unwrap();
        assert!(diag.residual_ok(3.0), "residual {:?}", diag.mean_residual);
        assert!(diag.orthogonality_ok(3.0));
        assert!(diag.dominance_ok(3.0));
        // The unhedged risk strictly exceeds the hedged risk.
        let r1 = diag.risk_probes.iter().find(|p| p.scale == 1.0).unwrap().risk;
        let r0 = diag.risk_probes.iter().find(|p| p.scale == 0.0).unwrap().risk;
        assert!(r0 > r1, "unhedged {r0} <= hedged {r1}");
        // Unhedged risk is the variance of the stream payment (the initial
        // value offsets the mean up to ensemble noise).
        let mut pay = Accumulator::new();
        for r in &reports {
            pay.push(r.theta_payment);
        }
        let bias = (pay.mean() - reports[0].initial_value).powi(2);
        assert!(
            (r0 - pay.variance() - bias).abs() < 1e-5,
            "R(0) {r0} vs Var(payment) {} + offset {bias}",
            pay.variance()
        );
    }
}
