//! Exposure, the counterparty-risk payment stream, and its value.
//!
//! The exposure at time `t` is the weighted mark-to-market of the surviving
//! reference claims. When the counterparty defaults before maturity the
//! stream pays the counterparty loss rate times the positive part of the
//! exposure evaluated at the post-jump intensities and post-default state.

use crate::claims::Portfolio;
use crate::error::Result;
use crate::fk::{self, CauchySpec, EstimatorConfig};
use crate::model::{self, DefaultState, MarketPath, ModelParams};
use crate::parallel::run_indexed;
use crate::rng;
use crate::stats::{estimate_from, Estimate};

/// Exposure snapshot at one valuation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureRecord {
    pub time: f64,
    /// Price per reference claim (zero once its trigger has fired).
    pub prices: Vec<f64>,
    pub exposure: f64,
    pub positive_part: f64,
}

/// Price of reference claim `i` at `(t, x, z)`:
/// `1(t != T) * Lambda_1 + Lambda_2 - Z K`, with the two components from the
/// weighted value estimator under common random numbers.
pub fn claim_price(
    model: &ModelParams,
    portfolio: &Portfolio,
    i: usize,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    let claim = portfolio.reference(i);
    let zk = claim.recovery(z) * claim.k(z);
    if t >= cfg.horizon {
        // At maturity the flow component reduces to the recovery term and
        // the promised-payoff component is excluded: the price is zero.
        return Ok(Estimate::exact(0.0));
    }
    let promised = CauchySpec::new(claim.clone(), [1.0, 0.0, 0.0]);
    let flows = CauchySpec::new(claim.clone(), [0.0, 1.0, 1.0]);
    let a = fk::estimate_f_recursive(model, &promised, t, x, z, cfg)?;
    let b = fk::estimate_f_recursive(model, &flows, t, x, z, cfg)?;
    Ok(Estimate {
        value: a.value + b.value - zk,
        std_error: a.combined_se(&b),
        n: a.n.min(b.n),
    })
}

/// Weighted exposure over the surviving reference claims.
pub fn exposure(
    model: &ModelParams,
    portfolio: &Portfolio,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<(ExposureRecord, f64)> {
    let mut prices = vec![0.0; portfolio.n_references()];
    let mut total = 0.0;
    let mut var = 0.0;
    for i in 0..portfolio.n_references() {
        let claim = portfolio.reference(i);
        if claim.triggered(z) || portfolio.weights[i] == 0.0 {
            continue;
        }
        let p = claim_price(model, portfolio, i, t, x, z, cfg)?;
        prices[i] = p.value;
        total += portfolio.weights[i] * p.value;
        var += (portfolio.weights[i] * p.std_error).powi(2);
    }
    let rec = ExposureRecord { time: t, prices, exposure: total, positive_part: total.max(0.0) };
    Ok((rec, var.sqrt()))
}

/// Realized payment of the counterparty-risk stream along one path: zero
/// unless the counterparty defaults strictly before the horizon, in which
/// case the loss rate applies to the positive part of the post-jump
/// exposure. Claim values are taken at the recorded post-jump intensities
/// and the post-default state.
pub fn theta_stream(
    model: &ModelParams,
    portfolio: &Portfolio,
    path: &MarketPath,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    theta_stream_seeded(model, portfolio, path, cfg, cfg.seed)
}

fn theta_stream_seeded(
    model: &ModelParams,
    portfolio: &Portfolio,
    path: &MarketPath,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<f64> {
    let cpty = model.counterparty();
    let tau = path.default_times[cpty];
    if !(tau < cfg.horizon) {
        return Ok(0.0);
    }
    let idx = path.default_index(cpty).expect("finite default time has a grid point");
    let z_post = path.states[idx];
    let x_post = &path.intensities[idx];
    let mut expo = 0.0;
    for i in 0..portfolio.n_references() {
        let claim = portfolio.reference(i);
        if portfolio.weights[i] == 0.0 || claim.triggered(z_post) {
            continue;
        }
        let spec = CauchySpec::gain(claim.clone());
        let inner = EstimatorConfig { seed: rng::mix(seed, 0xE0 + i as u64), ..cfg.clone() };
        let f = fk::estimate_f_recursive(model, &spec, tau, x_post, z_post, &inner)?;
        expo += portfolio.weights[i] * f.value;
    }
    Ok(portfolio.cpty_loss(z_post) * expo.max(0.0))
}

/// Value of the remaining counterparty-risk stream at `(t, x, z)`, averaged
/// over restarted market paths. Before any counterparty default this equals
/// the function estimated by [`fk::estimate_g`].
pub fn cva_value(
    model: &ModelParams,
    portfolio: &Portfolio,
    t: f64,
    x: &[f64],
    z: DefaultState,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    let cpty = model.counterparty();
    if z.is_defaulted(cpty) || t >= cfg.horizon {
        return Ok(Estimate::exact(0.0));
    }
    let sim = model::SimConfig {
        horizon: cfg.horizon,
        step: cfg.grid_step,
        n_paths: 1,
        seed: 0,
        substep_cap: 32,
        scheme: cfg.scheme,
    };
    let inner_cfg = EstimatorConfig { paths: cfg.inner_paths[0], ..cfg.clone() };
    let values: Vec<Result<f64>> = run_indexed(cfg.paths, cfg.threads, |p| {
        let mut rng = rng::stream(cfg.seed, rng::DOMAIN_CVA, p as u64);
        let path = model::simulate_market_from(model, &sim, t, x, z, &mut rng)?;
        theta_stream_seeded(model, portfolio, &path, &inner_cfg, rng::mix(cfg.seed, p as u64))
    });
    let vals = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(estimate_from(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Scheme, SimConfig};

    fn const_model(lambda: Vec<f64>, w: Vec<Vec<f64>>) -> ModelParams {
        let n = lambda.len();
        ModelParams::new_shared_vol(vec![0.0; n], vec![0.0; n], vec![], w, lambda).unwrap()
    }

    fn cds_portfolio(b1: f64) -> Portfolio {
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        Portfolio::cds_portfolio(2, &[0.05], &losses, vec![b1], 0.04, &|_| 0.55).unwrap()
    }

    fn analytic_cds(lambda: f64, loss: f64, eps: f64, tau: f64) -> f64 {
        (loss - eps / lambda) * (1.0 - (-lambda * tau).exp())
    }

    fn sim(seed: u64) -> SimConfig {
        SimConfig {
            horizon: 2.0,
            step: 0.02,
            n_paths: 1,
            seed,
            substep_cap: 32,
            scheme: Scheme::EulerFullTruncation,
        }
    }

    #[test]
    fn price_is_zero_at_maturity_and_after_own_default() {
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0, 0.3], vec![0.2, 0.0]]);
        let pf = cds_portfolio(1.0);
        let cfg = EstimatorConfig { grid_step: 0.01, ..EstimatorConfig::new(2.0, 3) };
        let x = [0.5, 0.4];
        let at_t = claim_price(&m, &pf, 0, 2.0, &x, DefaultState::none(2), &cfg).unwrap();
        assert_eq!(at_t.value, 0.0);
        // Defaulted reference: deterministic skeleton gives the value to
        // quadrature accuracy; the price nets to zero.
        let z = DefaultState::from_indicators(&[1, 0]);
        let s = claim_price(&m, &pf, 0, 0.5, &x, z, &cfg).unwrap();
        assert!(s.value.abs() < 1e-8, "price after default {}", s.value);
    }

    #[test]
    fn price_matches_constant_intensity_formula() {
        let (lam, loss, eps) = (0.5, 0.6, 0.05);
        let m = const_model(vec![lam, 0.4], vec![vec![0.0; 2]; 2]);
        let pf = cds_portfolio(1.0);
        let cfg = EstimatorConfig { grid_step: 0.01, ..EstimatorConfig::new(2.0, 5) };
        let p = claim_price(&m, &pf, 0, 0.0, &[lam, 0.4], DefaultState::none(2), &cfg).unwrap();
        let exact = analytic_cds(lam, loss, eps, 2.0);
        assert!((p.value - exact).abs() < 1e-8, "{} vs {exact}", p.value);
    }

    #[test]
    fn exposure_trivial_cases() {
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0; 2]; 2]);
        let cfg = EstimatorConfig::new(2.0, 7);
        let x = [0.5, 0.4];
        // All weights zero.
        let pf0 = cds_portfolio(0.0);
        let (rec, _) = exposure(&m, &pf0, 0.3, &x, DefaultState::none(2), &cfg).unwrap();
        assert_eq!(rec.exposure, 0.0);
        assert_eq!(rec.positive_part, 0.0);
        // All claims triggered.
        let pf = cds_portfolio(1.0);
        let z = DefaultState::from_indicators(&[1, 0]);
        let (rec, _) = exposure(&m, &pf, 0.3, &x, z, &cfg).unwrap();
        assert_eq!(rec.exposure, 0.0);
        // Single live claim: exposure equals its price.
        let (rec, _) = exposure(&m, &pf, 0.0, &x, DefaultState::none(2), &cfg).unwrap();
        let p = claim_price(&m, &pf, 0, 0.0, &x, DefaultState::none(2), &cfg).unwrap();
        assert!((rec.exposure - p.value).abs() < 1e-12);
    }

    #[test]
    fn stream_is_zero_without_early_counterparty_default() {
        let m = const_model(vec![0.5, 1e-9], vec![vec![0.0; 2]; 2]);
        let pf = cds_portfolio(1.0);
        let cfg = EstimatorConfig::new(2.0, 11);
        for p in 0..50 {
            let path = model::simulate_market(&m, &sim(11), p).unwrap();
            assert!(path.default_times[1].is_infinite());
            assert_eq!(theta_stream(&m, &pf, &path, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn negative_exposure_is_floored_at_zero() {
        // Protection sold (b1 < 0): the exposure at the counterparty default
        // is negative whenever the reference swap still has positive value.
        let m = const_model(vec![0.5, 0.8], vec![vec![0.0; 2]; 2]);
        let pf = cds_portfolio(-1.0);
        let cfg = EstimatorConfig { grid_step: 0.02, ..EstimatorConfig::new(2.0, 13) };
        let mut seen = 0;
        for p in 0..300 {
            let path = model::simulate_market(&m, &sim(13), p).unwrap();
            if path.default_times[1] < 2.0 && path.default_times[0] > path.default_times[1] {
                assert_eq!(theta_stream(&m, &pf, &path, &cfg).unwrap(), 0.0);
                seen += 1;
            }
        }
        assert!(seen > 30);
    }

    #[test]
    fn stream_matches_composed_formula_at_constant_intensities() {
        let (lam, loss, eps, lc) = (0.5, 0.6, 0.05, 0.55);
        let m = const_model(vec![lam, 0.8], vec![vec![0.0; 2]; 2]);
        let pf = cds_portfolio(1.0);
        let cfg = EstimatorConfig { grid_step: 0.01, ..EstimatorConfig::new(2.0, 17) };
        let mut seen = 0;
        for p in 0..400 {
            let path = model::simulate_market(&m, &sim(17), p).unwrap();
            let tau = path.default_times[1];
            if tau < 2.0 && path.default_times[0] > tau {
                let got = theta_stream(&m, &pf, &path, &cfg).unwrap();
                let want = lc * analytic_cds(lam, loss, eps, 2.0 - tau).max(0.0);
                assert!((got - want).abs() < 1e-7, "path {p}: {got} vs {want}");
                seen += 1;
                if seen > 25 {
                    break;
                }
            }
        }
        assert!(seen > 10);
    }

    #[test]
    fn stream_value_is_nonnegative_and_doubles_with_the_position() {
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0, 0.3], vec![0.2, 0.0]]);
        let cfg = EstimatorConfig {
            paths: 400,
            grid_step: 0.02,
            inner_paths: vec![1],
            ..EstimatorConfig::new(2.0, 19)
        };
        let pf1 = cds_portfolio(1.0);
        let pf2 = cds_portfolio(2.0);
        let x = [0.5, 0.4];
        let v1 = cva_value(&m, &pf1, 0.0, &x, DefaultState::none(2), &cfg).unwrap();
        let v2 = cva_value(&m, &pf2, 0.0, &x, DefaultState::none(2), &cfg).unwrap();
        assert!(v1.value > 0.0);
        assert!((v2.value - 2.0 * v1.value).abs() < 1e-10, "{} vs {}", v2.value, 2.0 * v1.value);
    }

    #[test]
    fn remaining_value_is_zero_after_counterparty_default() {
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0; 2]; 2]);
        let pf = cds_portfolio(1.0);
        let cfg = EstimatorConfig::new(2.0, 23);
        let z = DefaultState::from_indicators(&[0, 1]);
        let v = cva_value(&m, &pf, 0.7, &[0.5, 0.4], z, &cfg).unwrap();
        assert_eq!(v.value, 0.0);
        assert_eq!(v.std_error, 0.0);
    }

    #[test]
    fn value_shrinks_linearly_with_the_counterparty_loss() {
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0; 2]; 2]);
        let losses: [&dyn Fn(DefaultState) -> f64; 1] = [&|_| 0.6];
        let cfg = EstimatorConfig {
            paths: 300,
            inner_paths: vec![1],
            ..EstimatorConfig::new(2.0, 29)
        };
        let x = [0.5, 0.4];
        let hi = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![1.0], 0.04, &|_| 0.5).unwrap();
        let lo = Portfolio::cds_portfolio(2, &[0.05], &losses, vec![1.0], 0.04, &|_| 0.05).unwrap();
        let vh = cva_value(&m, &hi, 0.0, &x, DefaultState::none(2), &cfg).unwrap();
        let vl = cva_value(&m, &lo, 0.0, &x, DefaultState::none(2), &cfg).unwrap();
        assert!((vl.value - 0.1 * vh.value).abs() < 1e-10, "{} vs {}", vl.value, 0.1 * vh.value);
    }

    #[test]
    fn value_agrees_with_the_running_source_estimator() {
        let m = const_model(vec![0.5, 0.4], vec![vec![0.0, 0.3], vec![0.2, 0.0]]);
        let pf = cds_portfolio(1.0);
        let cfg = EstimatorConfig {
            paths: 3000,
            grid_step: 0.02,
            inner_paths: vec![1],
            ..EstimatorConfig::new(2.0, 31)
        };
        let x = [0.5, 0.4];
        let a = cva_value(&m, &pf, 0.0, &x, DefaultState::none(2), &cfg).unwrap();
        let b = fk::estimate_g(&m, &pf, 0.0, &x, DefaultState::none(2), &cfg).unwrap();
        assert!(
            a.agrees_within(&b, 3.0, 1e-8),
            "stream value {} ({}) vs source {} ({})",
            a.value,
            a.std_error,
            b.value,
            b.std_error
        );
    }
}
