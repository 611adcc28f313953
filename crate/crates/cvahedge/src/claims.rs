//! Defaultable claims as state-indexed payoff quadruples, canonical
//! constructors, and dividend evaluation along simulated paths.
//!
//! A claim is the quadruple `(xi, a, Z, K)`: terminal payoff, dividend rate,
//! recovery paid when the trigger `K` flips, and the monotone trigger
//! indicator itself. All four are total maps over the default states, stored
//! as dense tables (name counts up to 20).

use crate::error::{Error, Result};
use crate::model::{DefaultState, MarketPath};

/// Dense table of a state-indexed map.
pub type StateTable = Vec<f64>;

/// A defaultable claim maturing at the portfolio horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimSpec {
    n: usize,
    xi: StateTable,
    rate: StateTable,
    recovery: StateTable,
    trigger: Vec<bool>,
}

impl ClaimSpec {
    /// Builds a claim from payoff maps, checking that the trigger is
    /// monotone in the default state.
    pub fn from_maps(
        n: usize,
        xi: impl Fn(DefaultState) -> f64,
        rate: impl Fn(DefaultState) -> f64,
        recovery: impl Fn(DefaultState) -> f64,
        trigger: impl Fn(DefaultState) -> bool,
    ) -> Result<Self> {
        if n == 0 || n > 20 {
            return Err(Error::Domain("claims support 1..=20 names".into()));
        }
        let states: Vec<DefaultState> = DefaultState::all(n).collect();
        let claim = ClaimSpec {
            n,
            xi: states.iter().map(|&z| xi(z)).collect(),
            rate: states.iter().map(|&z| rate(z)).collect(),
            recovery: states.iter().map(|&z| recovery(z)).collect(),
            trigger: states.iter().map(|&z| trigger(z)).collect(),
        };
        for &z in &states {
            for j in z.survivors() {
                if claim.triggered(z) && !claim.triggered(z.with_default(j)) {
                    return Err(Error::Domain(format!(
                        "trigger is not monotone: K{z} = 1 but K{} = 0",
                        z.with_default(j)
                    )));
                }
            }
        }
        Ok(claim)
    }

    pub fn n_names(&self) -> usize {
        self.n
    }

    pub fn xi(&self, z: DefaultState) -> f64 {
        self.xi[z.index()]
    }

    pub fn rate(&self, z: DefaultState) -> f64 {
        self.rate[z.index()]
    }

    pub fn recovery(&self, z: DefaultState) -> f64 {
        self.recovery[z.index()]
    }

    pub fn triggered(&self, z: DefaultState) -> bool {
        self.trigger[z.index()]
    }

    /// Trigger as 0/1.
    pub fn k(&self, z: DefaultState) -> f64 {
        f64::from(self.triggered(z))
    }
}

/// Credit default swap on `name`, protection-seller view: no terminal
/// payoff, dividend rate `-spread` while alive, loss rate paid at the
/// reference default.
pub fn make_cds(
    n: usize,
    name: usize,
    spread: f64,
    loss: &dyn Fn(DefaultState) -> f64,
) -> Result<ClaimSpec> {
    check_name(n, name)?;
    check_loss_range(n, loss)?;
    if spread <= 0.0 {
        return Err(Error::Domain("spread must be positive".into()));
    }
    ClaimSpec::from_maps(
        n,
        |_| 0.0,
        |_| -spread,
        loss,
        |z| z.is_defaulted(name),
    )
}

/// Coupon bond of `name`: unit notional at maturity if alive, coupon while
/// alive, recovery `1 - loss` at default.
pub fn make_bond(
    n: usize,
    name: usize,
    coupon: f64,
    loss: &dyn Fn(DefaultState) -> f64,
) -> Result<ClaimSpec> {
    check_name(n, name)?;
    check_loss_range(n, loss)?;
    if coupon <= 0.0 {
        return Err(Error::Domain("coupon must be positive".into()));
    }
    ClaimSpec::from_maps(
        n,
        |_| 1.0,
        |_| coupon,
        |z| 1.0 - loss(z),
        |z| z.is_defaulted(name),
    )
}

/// First-to-default swap over the basket of reference names (all names but
/// the counterparty), protection-seller view: spread paid until the first
/// basket default, which triggers the loss rate of the defaulted name.
pub fn make_first_to_default(
    n: usize,
    spread: f64,
    losses: &[&dyn Fn(DefaultState) -> f64],
) -> Result<ClaimSpec> {
    if n < 2 {
        return Err(Error::Domain("a basket needs at least one reference name".into()));
    }
    if losses.len() != n - 1 {
        return Err(Error::Domain(format!(
            "need one loss map per basket name, got {} for {} names",
            losses.len(),
            n - 1
        )));
    }
    if spread <= 0.0 {
        return Err(Error::Domain("spread must be positive".into()));
    }
    for loss in losses {
        check_loss_range(n, *loss)?;
    }
    ClaimSpec::from_maps(
        n,
        |_| 0.0,
        |_| -spread,
        |z| {
            (0..n - 1)
                .filter(|&i| z.is_defaulted(i))
                .map(|i| losses[i](z))
                .sum()
        },
        |z| (0..n - 1).any(|i| z.is_defaulted(i)),
    )
}

fn check_name(n: usize, name: usize) -> Result<()> {
    if name >= n {
        Err(Error::IndexOutOfRange { index: name, n_names: n })
    } else {
        Ok(())
    }
}

fn check_loss_range(n: usize, loss: &dyn Fn(DefaultState) -> f64) -> Result<()> {
    for z in DefaultState::all(n) {
        let l = loss(z);
        if !(l > 0.0 && l <= 1.0) {
            return Err(Error::Domain(format!("loss rate must lie in (0, 1], got {l} at {z}")));
        }
    }
    Ok(())
}

/// Flips the `j`-th component of a default state.
pub fn flip_state(z: DefaultState, j: usize) -> Result<DefaultState> {
    if j >= z.n() {
        return Err(Error::IndexOutOfRange { index: j, n_names: z.n() });
    }
    Ok(z.flip(j))
}

/// A traded portfolio: reference claims with position weights, plus the
/// counterparty swap leg (always the last claim) whose loss map prices the
/// counterparty's failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    /// Claims `1..=N` are the traded references; the last entry is the
    /// counterparty credit swap.
    pub claims: Vec<ClaimSpec>,
    /// Position weights for the reference claims (`claims.len() - 1` of them).
    pub weights: Vec<f64>,
    /// Loss rate of the counterparty, by default state.
    pub cpty_loss: StateTable,
}

impl Portfolio {
    pub fn new(claims: Vec<ClaimSpec>, weights: Vec<f64>, cpty_loss: StateTable) -> Result<Self> {
        if claims.is_empty() {
            return Err(Error::Domain("portfolio needs at least the counterparty leg".into()));
        }
        if weights.len() + 1 != claims.len() {
            return Err(Error::Domain(format!(
                "expected {} weights for {} claims",
                claims.len() - 1,
                claims.len()
            )));
        }
        let n = claims[0].n_names();
        if claims.iter().any(|c| c.n_names() != n) {
            return Err(Error::Domain("claims must share the name count".into()));
        }
        if cpty_loss.len() != 1 << n {
            return Err(Error::Domain("counterparty loss table has the wrong size".into()));
        }
        Ok(Portfolio { claims, weights, cpty_loss })
    }

    pub fn n_names(&self) -> usize {
        self.claims[0].n_names()
    }

    /// Number of traded reference claims.
    pub fn n_references(&self) -> usize {
        self.weights.len()
    }

    pub fn reference(&self, i: usize) -> &ClaimSpec {
        &self.claims[i]
    }

    pub fn counterparty_leg(&self) -> &ClaimSpec {
        self.claims.last().unwrap()
    }

    pub fn cpty_loss(&self, z: DefaultState) -> f64 {
        self.cpty_loss[z.index()]
    }

    /// Portfolio of single-name swaps on names `1..=N` against the
    /// counterparty (last name).
    pub fn cds_portfolio(
        n: usize,
        spreads: &[f64],
        losses: &[&dyn Fn(DefaultState) -> f64],
        weights: Vec<f64>,
        cpty_spread: f64,
        cpty_loss: &dyn Fn(DefaultState) -> f64,
    ) -> Result<Self> {
        if spreads.len() != n - 1 || losses.len() != n - 1 || weights.len() != n - 1 {
            return Err(Error::Domain("need spread, loss and weight per reference name".into()));
        }
        let mut claims = Vec::with_capacity(n);
        for i in 0..n - 1 {
            claims.push(make_cds(n, i, spreads[i], losses[i])?);
        }
        claims.push(make_cds(n, n - 1, cpty_spread, cpty_loss)?);
        let table = DefaultState::all(n).map(cpty_loss).collect();
        Portfolio::new(claims, weights, table)
    }

    /// Portfolio of coupon bonds on names `1..=N` against the counterparty.
    pub fn bond_portfolio(
        n: usize,
        coupons: &[f64],
        losses: &[&dyn Fn(DefaultState) -> f64],
        weights: Vec<f64>,
        cpty_spread: f64,
        cpty_loss: &dyn Fn(DefaultState) -> f64,
    ) -> Result<Self> {
        if coupons.len() != n - 1 || losses.len() != n - 1 || weights.len() != n - 1 {
            return Err(Error::Domain("need coupon, loss and weight per reference name".into()));
        }
        let mut claims = Vec::with_capacity(n);
        for i in 0..n - 1 {
            claims.push(make_bond(n, i, coupons[i], losses[i])?);
        }
        claims.push(make_cds(n, n - 1, cpty_spread, cpty_loss)?);
        let table = DefaultState::all(n).map(cpty_loss).collect();
        Portfolio::new(claims, weights, table)
    }

    /// A first-to-default claim over the reference basket, weight `b1`,
    /// against the counterparty.
    pub fn ftd_portfolio(
        n: usize,
        spread: f64,
        losses: &[&dyn Fn(DefaultState) -> f64],
        b1: f64,
        cpty_spread: f64,
        cpty_loss: &dyn Fn(DefaultState) -> f64,
    ) -> Result<Self> {
        let claims = vec![
            make_first_to_default(n, spread, losses)?,
            make_cds(n, n - 1, cpty_spread, cpty_loss)?,
        ];
        let table = DefaultState::all(n).map(cpty_loss).collect();
        Portfolio::new(claims, vec![b1], table)
    }
}

/// Cumulative dividend `D(t)` of a claim along a simulated path.
///
/// The promised payoff enters only at `t = T`; the dividend rate accrues
/// while the trigger is off; the recovery is paid once, at the trigger,
/// evaluated at the post-event state.
pub fn dividend_cumulative(claim: &ClaimSpec, path: &MarketPath, t: f64) -> Result<f64> {
    let horizon = path.end_time();
    if t < path.start_time() || t > horizon {
        return Err(Error::TimeOutOfRange { t, lo: path.start_time(), hi: horizon });
    }
    let mut total = 0.0;
    let mut prev_triggered = claim.triggered(path.states[0]);
    for seg in 0..path.grid.len() - 1 {
        let (t0, t1) = (path.grid[seg], path.grid[seg + 1]);
        if t0 >= t {
            break;
        }
        let z = path.states[seg];
        let len = t1.min(t) - t0;
        if !claim.triggered(z) {
            total += claim.rate(z) * len;
        }
        // Recovery at the trigger event, post-jump state.
        let z_next = path.states[seg + 1];
        let now_triggered = claim.triggered(z_next);
        if now_triggered && !prev_triggered && t1 <= t {
            total += claim.recovery(z_next);
        }
        prev_triggered = prev_triggered || now_triggered;
    }
    if t == horizon {
        let z_final = path.final_state();
        total += claim.xi(z_final) * (1.0 - claim.k(z_final));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_market, ModelParams, Scheme, SimConfig};

    fn two_name_model(lambda: [f64; 2]) -> ModelParams {
        ModelParams::new_shared_vol(
            vec![0.0; 2],
            vec![0.0; 2],
            vec![],
            vec![vec![0.0; 2]; 2],
            lambda.to_vec(),
        )
        .unwrap()
    }

    fn cfg(horizon: f64, seed: u64) -> SimConfig {
        SimConfig {
            horizon,
            step: 0.02,
            n_paths: 1,
            seed,
            substep_cap: 32,
            scheme: Scheme::EulerFullTruncation,
        }
    }

    /// Path where name `which` defaults near `target` (selected by scanning
    /// seeds), used for hand-computed dividend checks.
    fn path_with_default(
        model: &ModelParams,
        c: &SimConfig,
        which: usize,
        window: (f64, f64),
    ) -> crate::model::MarketPath {
        for p in 0..20_000 {
            let path = simulate_market(model, c, p).unwrap();
            let tau = path.default_times[which];
            if tau > window.0 && tau < window.1 {
                return path;
            }
        }
        panic!("no path with the requested default found");
    }

    #[test]
    fn cds_dividend_no_default() {
        let m = two_name_model([1e-9, 1e-9]);
        let c = cfg(3.0, 2);
        let claim = make_cds(2, 0, 0.02, &|_| 0.6).unwrap();
        let path = simulate_market(&m, &c, 0).unwrap();
        assert!(path.default_times[0].is_infinite());
        let d = dividend_cumulative(&claim, &path, 3.0).unwrap();
        assert!((d - (-0.02 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn cds_dividend_with_default() {
        let m = two_name_model([0.5, 1e-9]);
        let c = cfg(3.0, 3);
        let claim = make_cds(2, 0, 0.02, &|_| 0.6).unwrap();
        let path = path_with_default(&m, &c, 0, (0.5, 2.5));
        let tau = path.default_times[0];
        let d = dividend_cumulative(&claim, &path, 3.0).unwrap();
        assert!((d - (-0.02 * tau + 0.6)).abs() < 1e-12);
        // The rate contribution stops at the trigger.
        let d_mid = dividend_cumulative(&claim, &path, (tau + 3.0) / 2.0).unwrap();
        assert!((d_mid - d).abs() < 1e-12);
    }

    #[test]
    fn bond_dividend_cases() {
        let m = two_name_model([0.5, 1e-9]);
        let c = cfg(3.0, 5);
        let bond = make_bond(2, 0, 0.03, &|_| 0.6).unwrap();

        // Survival: 1 + coupon * T.
        let quiet = two_name_model([1e-9, 1e-9]);
        let path = simulate_market(&quiet, &c, 0).unwrap();
        let d = dividend_cumulative(&bond, &path, 3.0).unwrap();
        assert!((d - (1.0 + 0.03 * 3.0)).abs() < 1e-12);

        // Default at tau: coupon * tau + recovery 0.4.
        let path = path_with_default(&m, &c, 0, (0.5, 2.5));
        let tau = path.default_times[0];
        let d = dividend_cumulative(&bond, &path, 3.0).unwrap();
        assert!((d - (0.03 * tau + 0.4)).abs() < 1e-12);

        // Zero recovery bond: coupon leg only.
        let zero_rec = make_bond(2, 0, 0.03, &|_| 1.0).unwrap();
        let d = dividend_cumulative(&zero_rec, &path, 3.0).unwrap();
        assert!((d - 0.03 * tau).abs() < 1e-12);
    }

    #[test]
    fn cds_bond_duality_sums_to_one() {
        // Same spread and loss: dividends add to exactly 1 at maturity.
        let m = two_name_model([0.6, 1e-9]);
        let c = cfg(3.0, 7);
        let cds = make_cds(2, 0, 0.04, &|_| 0.6).unwrap();
        let bond = make_bond(2, 0, 0.04, &|_| 0.6).unwrap();
        for p in 0..200 {
            let path = simulate_market(&m, &c, p).unwrap();
            let total = dividend_cumulative(&cds, &path, 3.0).unwrap()
                + dividend_cumulative(&bond, &path, 3.0).unwrap();
            assert!((total - 1.0).abs() < 1e-12, "path {p}: {total}");
        }
    }

    #[test]
    fn first_to_default_dividend() {
        let losses: [&dyn Fn(DefaultState) -> f64; 2] = [&|_| 0.4, &|_| 0.5];
        let claim = make_first_to_default(3, 0.03, &losses).unwrap();
        let m = ModelParams::new_shared_vol(
            vec![0.0; 3],
            vec![0.0; 3],
            vec![],
            vec![vec![0.0; 3]; 3],
            vec![1e-9, 0.8, 1e-9],
        )
        .unwrap();
        let c = cfg(3.0, 11);
        // Name 2 defaults first (only live basket intensity).
        let path = path_with_default(&m, &c, 1, (0.2, 2.5));
        let tau = path.default_times[1];
        let d = dividend_cumulative(&claim, &path, 3.0).unwrap();
        assert!((d - (-0.03 * tau + 0.5)).abs() < 1e-12);

        // No basket defaults: pure spread leg.
        let quiet = ModelParams::new_shared_vol(
            vec![0.0; 3],
            vec![0.0; 3],
            vec![],
            vec![vec![0.0; 3]; 3],
            vec![1e-9, 1e-9, 1e-9],
        )
        .unwrap();
        let path = simulate_market(&quiet, &c, 0).unwrap();
        let d = dividend_cumulative(&claim, &path, 3.0).unwrap();
        assert!((d - (-0.03 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn first_to_default_ignores_later_defaults() {
        let losses: [&dyn Fn(DefaultState) -> f64; 2] = [&|_| 0.4, &|_| 0.5];
        let claim = make_first_to_default(3, 0.03, &losses).unwrap();
        let m = ModelParams::new_shared_vol(
            vec![0.0; 3],
            vec![0.0; 3],
            vec![],
            vec![vec![0.0; 3]; 3],
            vec![1.2, 1.2, 1e-9],
        )
        .unwrap();
        let c = cfg(4.0, 13);
        for p in 0..4000 {
            let path = simulate_market(&m, &c, p).unwrap();
            let (t1, t2) = (path.default_times[0], path.default_times[1]);
            if t1.is_finite() && t2.is_finite() {
                let first = t1.min(t2);
                let loss = if t1 < t2 { 0.4 } else { 0.5 };
                let d = dividend_cumulative(&claim, &path, 4.0).unwrap();
                assert!((d - (-0.03 * first + loss)).abs() < 1e-12);
                return;
            }
        }
        panic!("no path with two basket defaults");
    }

    #[test]
    fn dividend_has_finitely_many_jumps_and_monotone_segments() {
        let m = two_name_model([0.7, 0.6]);
        let c = cfg(3.0, 17);
        let cds = make_cds(2, 0, 0.05, &|_| 0.6).unwrap();
        for p in 0..50 {
            let path = simulate_market(&m, &c, p).unwrap();
            let mut jumps = 0;
            let mut prev = 0.0;
            let mut prev_t = 0.0;
            for k in 1..path.grid.len() {
                let t = path.grid[k];
                let d = dividend_cumulative(&cds, &path, t).unwrap();
                let step = d - prev;
                // Between payment events the dividend drifts at the (negative)
                // spread rate; a recovery payment is an upward jump.
                if step > 0.0 {
                    jumps += 1;
                } else {
                    assert!(step >= -0.05 * (t - prev_t) - 1e-12);
                }
                prev = d;
                prev_t = t;
            }
            assert!(jumps <= 2);
        }
    }

    #[test]
    fn flip_state_checks_bounds() {
        let z = DefaultState::none(2);
        assert_eq!(flip_state(z, 0).unwrap(), DefaultState::from_indicators(&[1, 0]));
        assert_eq!(flip_state(flip_state(z, 1).unwrap(), 1).unwrap(), z);
        assert!(flip_state(z, 2).is_err());
        let z = DefaultState::from_indicators(&[1, 0, 1]);
        assert_eq!(flip_state(z, 1).unwrap(), DefaultState::from_indicators(&[1, 1, 1]));
    }

    #[test]
    fn trigger_monotonicity_is_enforced() {
        let bad = ClaimSpec::from_maps(
            2,
            |_| 0.0,
            |_| -0.1,
            |_| 0.5,
            |z| z.popcount() == 1, // flips back off at full default
        );
        assert!(bad.is_err());
    }

    #[test]
    fn portfolio_triggers_never_flip_together() {
        let losses: [&dyn Fn(DefaultState) -> f64; 2] = [&|_| 0.4, &|_| 0.5];
        let pf = Portfolio::ftd_portfolio(3, 0.03, &losses, 1.0, 0.04, &|_| 0.6).unwrap();
        let m = ModelParams::new_shared_vol(
            vec![0.0; 3],
            vec![0.0; 3],
            vec![],
            vec![vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5], vec![0.2, 0.2, 0.0]],
            vec![0.8, 0.7, 0.6],
        )
        .unwrap();
        let c = cfg(3.0, 19);
        for p in 0..300 {
            let path = simulate_market(&m, &c, p).unwrap();
            for k in 1..path.grid.len() {
                let flips = pf
                    .claims
                    .iter()
                    .filter(|cl| cl.triggered(path.states[k]) != cl.triggered(path.states[k - 1]))
                    .count();
                assert!(flips <= 1);
            }
        }
    }

    #[test]
    fn loss_rates_outside_unit_interval_are_rejected() {
        assert!(make_cds(2, 0, 0.02, &|_| 0.0).is_err());
        assert!(make_cds(2, 0, 0.02, &|_| 1.2).is_err());
        assert!(make_cds(2, 0, 0.02, &|_| 1.0).is_ok());
    }

    #[test]
    fn dividend_time_domain_is_checked() {
        let m = two_name_model([0.5, 0.5]);
        let c = cfg(3.0, 23);
        let claim = make_cds(2, 0, 0.02, &|_| 0.6).unwrap();
        let path = simulate_market(&m, &c, 0).unwrap();
        assert!(dividend_cumulative(&claim, &path, 3.5).is_err());
        assert!(dividend_cumulative(&claim, &path, -0.1).is_err());
    }
}
