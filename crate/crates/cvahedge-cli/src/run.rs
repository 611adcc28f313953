//! Mode implementations and artifact writers.
//!
//! All Monte-Carlo work fans out over per-path streams and reduces in path
//! order, so outputs are byte-identical for any `--threads` value. Floats
//! are written with Rust's shortest round-trip formatting.

use crate::scenario::{Mode, PortfolioKind, Scenario};
use crate::CliError;
use cvahedge::claims::Portfolio;
use cvahedge::closed_form::{BondOracle, CdsOracle, FtdOracle, OracleBackend};
use cvahedge::fk::{self, CauchySpec, EstimatorConfig};
use cvahedge::hedging::{
    self, CdsHedgeInstrument, EstimatorSurface, HedgeReport, LatticeSurface, ValueSurface,
};
use cvahedge::model::{self, DefaultState, ModelParams, SimConfig};
use cvahedge::parallel::run_indexed;
use cvahedge::stats::{estimate_from, Accumulator};
use cvahedge::Error as EngineError;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct RunContext {
    pub scenario: Scenario,
    pub mode: Mode,
    pub threads: usize,
    pub out_dir: PathBuf,
}

fn engine(e: EngineError) -> CliError {
    match e {
        EngineError::Domain(_)
        | EngineError::IndexOutOfRange { .. }
        | EngineError::TimeOutOfRange { .. }
        | EngineError::InsufficientPaths { .. } => CliError::Config(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Collects per-path results, attaching path and seed provenance to the
/// first failure.
fn collect_with_provenance<T>(
    results: Vec<Result<T, EngineError>>,
    seed: u64,
) -> Result<Vec<T>, CliError> {
    let mut out = Vec::with_capacity(results.len());
    for (p, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                let wrapped = format!("path {p} (seed {seed}): {e}");
                return Err(match engine(e) {
                    CliError::Config(_) => CliError::Config(wrapped),
                    CliError::Numerical(_) => CliError::Numerical(wrapped),
                });
            }
        }
    }
    Ok(out)
}

pub fn run(ctx: &RunContext) -> Result<(), CliError> {
    let model = ctx.scenario.model_params().map_err(engine)?;
    let portfolio = ctx.scenario.portfolio().map_err(engine)?;
    let sim = ctx.scenario.sim_config();
    let mut est = ctx.scenario.estimator_config();
    est.threads = ctx.threads;
    match ctx.mode {
        Mode::Simulate => run_simulate(ctx, &model, &sim),
        Mode::Price => run_price(ctx, &model, &portfolio, &est),
        Mode::Cva => run_cva(ctx, &model, &portfolio, &sim, &est),
        Mode::Hedge => run_hedge(ctx, &model, &portfolio, &sim, &est),
        Mode::Verify => run_verify(ctx, &model, &portfolio, &est),
    }
}

fn run_simulate(ctx: &RunContext, model: &ModelParams, sim: &SimConfig) -> Result<(), CliError> {
    let n = model.n_names();
    let rows: Vec<Result<(Vec<f64>, Vec<bool>, f64), EngineError>> =
        run_indexed(sim.n_paths, ctx.threads, |p| {
            let path = model::simulate_market(model, sim, p as u64)?;
            let resid: Vec<f64> = (0..n).map(|i| path.martingale_residual(i)).collect();
            let defaulted: Vec<bool> = (0..n).map(|i| path.final_state().is_defaulted(i)).collect();
            Ok((resid, defaulted, path.squared_intensity_integral()))
        });
    let rows = collect_with_provenance(rows, sim.seed)?;

    let mut csv = String::from("name,n_defaults,default_prob,martingale_mean,martingale_se\n");
    for i in 0..n {
        let resid: Vec<f64> = rows.iter().map(|r| r.0[i]).collect();
        let est = estimate_from(&resid);
        let defaults = rows.iter().filter(|r| r.1[i]).count();
        let prob = defaults as f64 / rows.len() as f64;
        writeln!(csv, "{},{},{},{},{}", i + 1, defaults, prob, est.value, est.std_error).unwrap();
    }
    write_file(&ctx.out_dir, "simulate_summary.csv", &csv)?;

    let moments: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let m = estimate_from(&moments);
    let mut csv = String::from("quantity,value,std_error,n_paths\n");
    writeln!(csv, "sum_squared_intensity_integral,{},{},{}", m.value, m.std_error, m.n).unwrap();
    write_file(&ctx.out_dir, "moments.csv", &csv)?;
    println!("simulate: {} paths, outputs in {}", rows.len(), ctx.out_dir.display());
    Ok(())
}

fn run_price(
    ctx: &RunContext,
    model: &ModelParams,
    portfolio: &Portfolio,
    est: &EstimatorConfig,
) -> Result<(), CliError> {
    let z0 = DefaultState::none(model.n_names());
    let x0 = model.initial.clone();
    let mut csv = String::from("claim,value,std_error\n");
    for i in 0..portfolio.n_references() {
        let p = cvahedge::cva::claim_price(model, portfolio, i, 0.0, &x0, z0, est).map_err(engine)?;
        writeln!(csv, "{},{},{}", i + 1, p.value, p.std_error).unwrap();
    }
    // Counterparty leg: same price representation applied to the last claim.
    let leg = portfolio.counterparty_leg().clone();
    let zk = leg.recovery(z0) * leg.k(z0);
    let spec = CauchySpec::gain(leg);
    let f = fk::estimate_f_recursive(model, &spec, 0.0, &x0, z0, est).map_err(engine)?;
    writeln!(csv, "{},{},{}", portfolio.n_references() + 1, f.value - zk, f.std_error).unwrap();
    write_file(&ctx.out_dir, "prices.csv", &csv)?;
    println!("price: outputs in {}", ctx.out_dir.display());
    Ok(())
}

/// Builds the value surface backing path replays: exact lattice tables for
/// deterministic piecewise-affine models, nested estimators otherwise (slow;
/// meant for small path counts).
fn build_surface<'a>(
    model: &'a ModelParams,
    portfolio: &'a Portfolio,
    instrument: &'a CdsHedgeInstrument,
    est: &EstimatorConfig,
    horizon: f64,
) -> Result<Box<dyn ValueSurface + 'a>, CliError> {
    if model.is_deterministic() && model.nu.iter().all(|&v| v == 0.0) {
        let surf =
            LatticeSurface::build(model, portfolio, instrument, horizon, 4096).map_err(engine)?;
        Ok(Box::new(surf))
    } else {
        eprintln!(
            "note: model has diffusion or mean reversion; falling back to nested estimators \
             (runtime grows with paths x grid x inner paths)"
        );
        Ok(Box::new(EstimatorSurface { model, portfolio, instrument, cfg: est.clone() }))
    }
}

fn instrument_from(scenario: &Scenario, portfolio: &Portfolio) -> Result<CdsHedgeInstrument, CliError> {
    let n = portfolio.n_names();
    let cl = scenario.portfolio.cpty_loss.clone();
    CdsHedgeInstrument::new(n, scenario.portfolio.cpty_spread, &move |z| cl.at(z)).map_err(engine)
}

fn run_cva(
    ctx: &RunContext,
    model: &ModelParams,
    portfolio: &Portfolio,
    sim: &SimConfig,
    est: &EstimatorConfig,
) -> Result<(), CliError> {
    let instrument = instrument_from(&ctx.scenario, portfolio)?;
    let surface = build_surface(model, portfolio, &instrument, est, sim.horizon)?;
    let surface = surface.as_ref();
    let n_steps = (sim.horizon / sim.step).round().max(1.0) as usize;
    let grid: Vec<f64> = (0..=n_steps).map(|k| k as f64 * sim.step).collect();
    let nref = portfolio.n_references();

    struct PathProfile {
        prices: Vec<Vec<f64>>,
        exposure: Vec<f64>,
        positive: Vec<f64>,
        payment: f64,
        payment_time: f64,
    }
    let profiles: Vec<Result<PathProfile, EngineError>> = run_indexed(sim.n_paths, ctx.threads, |p| {
        let path = model::simulate_market(model, sim, p as u64)?;
        let cpty = model.counterparty();
        let tau = path.default_times[cpty];
        let mut prices = vec![vec![0.0; nref]; grid.len()];
        let mut exposure = vec![0.0; grid.len()];
        let mut positive = vec![0.0; grid.len()];
        let mut seg = 0usize;
        for (gi, &t) in grid.iter().enumerate() {
            while seg + 1 < path.grid.len() && path.grid[seg + 1] <= t + 1e-12 {
                seg += 1;
            }
            let z = path.states[seg];
            let x = &path.intensities[seg];
            if z.is_defaulted(cpty) {
                break; // exposure reporting stops with the hedge horizon
            }
            let mut total = 0.0;
            for i in 0..nref {
                let claim = portfolio.reference(i);
                if claim.triggered(z) {
                    continue;
                }
                let s = if t >= sim.horizon {
                    0.0
                } else {
                    surface.f_claim(i, t, x, z)? - claim.recovery(z) * claim.k(z)
                };
                prices[gi][i] = s;
                total += portfolio.weights[i] * s;
            }
            exposure[gi] = total;
            positive[gi] = total.max(0.0);
        }
        // Realized stream payment.
        let (payment, payment_time) = if tau < sim.horizon {
            let idx = path.default_index(cpty).unwrap();
            let z_post = path.states[idx];
            let x_post = &path.intensities[idx];
            let mut expo = 0.0;
            for i in 0..nref {
                let claim = portfolio.reference(i);
                if !claim.triggered(z_post) {
                    expo += portfolio.weights[i] * surface.f_claim(i, tau, x_post, z_post)?;
                }
            }
            (portfolio.cpty_loss(z_post) * expo.max(0.0), tau)
        } else {
            (0.0, f64::INFINITY)
        };
        Ok(PathProfile { prices, exposure, positive, payment, payment_time })
    });
    let profiles = collect_with_provenance(profiles, sim.seed)?;

    let n_paths = profiles.len() as f64;
    let mut csv = String::from("time,");
    for i in 0..nref {
        write!(csv, "price_{},", i + 1).unwrap();
    }
    csv.push_str("exposure,positive_part\n");
    for (gi, &t) in grid.iter().enumerate() {
        write!(csv, "{t},").unwrap();
        for i in 0..nref {
            let mean = profiles.iter().map(|pr| pr.prices[gi][i]).sum::<f64>() / n_paths;
            write!(csv, "{mean},").unwrap();
        }
        let me = profiles.iter().map(|pr| pr.exposure[gi]).sum::<f64>() / n_paths;
        let mp = profiles.iter().map(|pr| pr.positive[gi]).sum::<f64>() / n_paths;
        writeln!(csv, "{me},{mp}").unwrap();
    }
    write_file(&ctx.out_dir, "exposure.csv", &csv)?;

    let mut csv = String::from("time,epe,cva_cumulative\n");
    for (gi, &t) in grid.iter().enumerate() {
        let epe = profiles.iter().map(|pr| pr.positive[gi]).sum::<f64>() / n_paths;
        let cum = profiles
            .iter()
            .map(|pr| if pr.payment_time <= t { pr.payment } else { 0.0 })
            .sum::<f64>()
            / n_paths;
        writeln!(csv, "{t},{epe},{cum}").unwrap();
    }
    write_file(&ctx.out_dir, "cva.csv", &csv)?;

    let payments: Vec<f64> = profiles.iter().map(|pr| pr.payment).collect();
    let total = estimate_from(&payments);
    let mut rep = String::new();
    writeln!(rep, "n_paths={}", profiles.len()).unwrap();
    writeln!(rep, "cva_total={}", total.value).unwrap();
    writeln!(rep, "cva_total_se={}", total.std_error).unwrap();
    write_file(&ctx.out_dir, "cva_summary.txt", &rep)?;
    println!("cva: CVA(0) = {} (se {}), outputs in {}", total.value, total.std_error, ctx.out_dir.display());
    Ok(())
}

fn run_hedge(
    ctx: &RunContext,
    model: &ModelParams,
    portfolio: &Portfolio,
    sim: &SimConfig,
    est: &EstimatorConfig,
) -> Result<(), CliError> {
    let instrument = instrument_from(&ctx.scenario, portfolio)?;
    let surface = build_surface(model, portfolio, &instrument, est, sim.horizon)?;
    let surface = surface.as_ref();
    let reports: Vec<Result<HedgeReport, EngineError>> = run_indexed(sim.n_paths, ctx.threads, |p| {
        let path = model::simulate_market(model, sim, p as u64)?;
        hedging::full_strategy(surface, model, portfolio, &instrument, &path, sim.horizon)
    });
    let reports = collect_with_provenance(reports, sim.seed)?;

    // Ensemble means per regular grid bucket.
    let n_steps = (sim.horizon / sim.step).round().max(1.0) as usize;
    let fields = 9usize;
    let mut acc = vec![vec![Accumulator::new(); fields]; n_steps + 1];
    for rep in &reports {
        for row in &rep.rows {
            let b = (((row.time / sim.step) + 1e-9).floor() as usize).min(n_steps);
            let vals =
                [row.theta, row.eta, row.value, row.u1, row.u2, row.u3, row.phi, row.d_cost, row.d_residual];
            for (a, v) in acc[b].iter_mut().zip(vals) {
                a.push(v);
            }
        }
    }
    let mut csv = String::from("time,theta,eta,value,U1,U2,U3,phi,dC,dA\n");
    for (b, cell) in acc.iter().enumerate() {
        if cell[0].n() == 0 {
            continue;
        }
        write!(csv, "{}", b as f64 * sim.step).unwrap();
        for a in cell {
            write!(csv, ",{}", a.mean()).unwrap();
        }
        csv.push('\n');
    }
    write_file(&ctx.out_dir, "hedge.csv", &csv)?;

    let scales = [0.0, 0.5, 0.9, 1.0, 1.1, 2.0];
    let mut rep = String::new();
    writeln!(rep, "n_paths={}", reports.len()).unwrap();
    let max_terminal = reports.iter().map(|r| r.terminal_value.abs()).fold(0.0, f64::max);
    writeln!(rep, "max_abs_terminal_value={max_terminal}").unwrap();
    let payments: Vec<f64> = reports.iter().map(|r| r.theta_payment).collect();
    let pay = estimate_from(&payments);
    writeln!(rep, "stream_payment_mean={}", pay.value).unwrap();
    writeln!(rep, "stream_payment_se={}", pay.std_error).unwrap();
    if reports.len() >= hedging::MIN_DIAGNOSTIC_PATHS {
        let diag = hedging::gkw_diagnostics(&reports, sim.step, &scales).map_err(engine)?;
        writeln!(rep, "residual_mean={}", diag.mean_residual.value).unwrap();
        writeln!(rep, "residual_se={}", diag.mean_residual.std_error).unwrap();
        writeln!(rep, "residual_within_3se={}", diag.residual_ok(3.0)).unwrap();
        writeln!(rep, "orthogonality_within_3se={}", diag.orthogonality_ok(3.0)).unwrap();
        writeln!(rep, "risk_dominance_within_3se={}", diag.dominance_ok(3.0)).unwrap();
        for p in &diag.risk_probes {
            writeln!(rep, "risk_scale_{}={}", p.scale, p.risk).unwrap();
        }
    } else {
        writeln!(rep, "diagnostics=skipped (needs {} paths)", hedging::MIN_DIAGNOSTIC_PATHS).unwrap();
    }
    write_file(&ctx.out_dir, "hedge_summary.txt", &rep)?;
    println!("hedge: {} paths, outputs in {}", reports.len(), ctx.out_dir.display());
    Ok(())
}

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn check(list: &mut Vec<Check>, name: &str, pass: bool, detail: String) {
    list.push(Check { name: name.into(), pass, detail });
}

fn run_verify(
    ctx: &RunContext,
    model: &ModelParams,
    portfolio: &Portfolio,
    est: &EstimatorConfig,
) -> Result<(), CliError> {
    let horizon = ctx.scenario.sim.horizon;
    let z0 = DefaultState::none(model.n_names());
    let x0 = model.initial.clone();
    let mut checks: Vec<Check> = Vec::new();
    let quad = OracleBackend::quadrature();
    let deterministic = model.is_deterministic();

    let sp = &ctx.scenario.portfolio;
    match (sp.kind, model.n_names()) {
        (PortfolioKind::Cds, 2) => {
            let l0 = sp.losses[0].clone();
            let lc = sp.cpty_loss.clone();
            let loss0 = move |z: DefaultState| l0.at(z);
            let loss1 = move |z: DefaultState| lc.at(z);
            let oracle = CdsOracle::new(
                horizon,
                [sp.spreads[0], sp.cpty_spread],
                [&loss0, &loss1],
                sp.weights[0],
            );
            let full = DefaultState::from_indicators(&[1, 1]);
            if deterministic {
                let v = oracle.value(model, 0, full, 0.3, &x0, &quad).map_err(engine)?;
                check(
                    &mut checks,
                    "swap value at full default equals the loss rate",
                    v.value == loss0(full),
                    format!("{} vs {}", v.value, loss0(full)),
                );
                for bits in [[1u8, 0], [0, 1], [1, 1]] {
                    let z = DefaultState::from_indicators(&bits);
                    let g = oracle.cva_source(model, z, 0.3, &x0, &quad).map_err(engine)?;
                    check(
                        &mut checks,
                        &format!("stream value vanishes at {z}"),
                        g.value == 0.0,
                        format!("{}", g.value),
                    );
                }
                // Cross-check the generic estimator against the oracle.
                for z in DefaultState::all(2) {
                    let a = oracle.value(model, 0, z, 0.0, &x0, &quad).map_err(engine)?;
                    let spec = CauchySpec::gain(portfolio.reference(0).clone());
                    let b = fk::estimate_f_recursive(model, &spec, 0.0, &x0, z, est).map_err(engine)?;
                    let ok = a.agrees_within(&b, 3.0, 1e-6);
                    check(
                        &mut checks,
                        &format!("estimator matches the oracle at {z}"),
                        ok,
                        format!("{} vs {}", a.value, b.value),
                    );
                }
            } else {
                check(
                    &mut checks,
                    "quadrature checks skipped (diffusive model)",
                    true,
                    "sigma != 0".into(),
                );
            }
        }
        (PortfolioKind::Bond, 2) => {
            let l0 = sp.losses[0].clone();
            let lc = sp.cpty_loss.clone();
            let loss0 = move |z: DefaultState| l0.at(z);
            let loss1 = move |z: DefaultState| lc.at(z);
            let oracle = BondOracle::new(
                horizon,
                sp.spreads[0],
                sp.cpty_spread,
                [&loss0, &loss1],
                sp.weights[0],
            );
            if deterministic {
                let full = DefaultState::from_indicators(&[1, 1]);
                let v = oracle.value(model, 0, full, 0.3, &x0, &quad).map_err(engine)?;
                check(
                    &mut checks,
                    "bond value at full default equals the recovery",
                    v.value == 1.0 - loss0(full),
                    format!("{} vs {}", v.value, 1.0 - loss0(full)),
                );
                let g = oracle
                    .cva_source(model, DefaultState::from_indicators(&[0, 1]), 0.3, &x0, &quad)
                    .map_err(engine)?;
                check(&mut checks, "stream value vanishes after the counterparty default", g.value == 0.0, format!("{}", g.value));
            }
        }
        (PortfolioKind::Ftd, 3) => {
            let l0 = sp.losses[0].clone();
            let l1 = sp.losses[1].clone();
            let lc = sp.cpty_loss.clone();
            let loss0 = move |z: DefaultState| l0.at(z);
            let loss1 = move |z: DefaultState| l1.at(z);
            let lossc = move |z: DefaultState| lc.at(z);
            let oracle = FtdOracle::new(horizon, sp.spreads[0], [&loss0, &loss1], &lossc, sp.weights[0]);
            if deterministic {
                let full = DefaultState::from_indicators(&[1, 1, 1]);
                let v = oracle.value(model, full, 0.3, &x0, &quad).map_err(engine)?;
                let want = loss0(full) + loss1(full);
                check(
                    &mut checks,
                    "basket value at full default sums the loss rates",
                    v.value == want,
                    format!("{} vs {want}", v.value),
                );
                let g = oracle
                    .cva_source(model, DefaultState::from_indicators(&[0, 0, 1]), 0.3, &x0, &quad)
                    .map_err(engine)?;
                check(&mut checks, "stream value vanishes after the counterparty default", g.value == 0.0, format!("{}", g.value));
            }
        }
        (kind, n) => {
            return Err(CliError::Config(format!(
                "verify mode supports 2-name swap/bond and 3-name basket scenarios, got {kind:?} with {n} names"
            )));
        }
    }

    // Weight linearity of the estimator, portfolio-independent.
    let claim = portfolio.reference(0).clone();
    let a = fk::estimate_f_recursive(model, &CauchySpec::new(claim.clone(), [1.0, 0.0, 0.0]), 0.0, &x0, z0, est)
        .map_err(engine)?;
    let b = fk::estimate_f_recursive(model, &CauchySpec::new(claim.clone(), [0.0, 1.0, 1.0]), 0.0, &x0, z0, est)
        .map_err(engine)?;
    let c = fk::estimate_f_recursive(model, &CauchySpec::new(claim, [1.0, 1.0, 1.0]), 0.0, &x0, z0, est)
        .map_err(engine)?;
    let sum = cvahedge::stats::Estimate {
        value: a.value + b.value,
        std_error: a.combined_se(&b),
        n: a.n,
    };
    check(
        &mut checks,
        "weight components add up",
        sum.agrees_within(&c, 3.0, 1e-7),
        format!("{} vs {}", sum.value, c.value),
    );

    let mut report = String::new();
    let mut all_ok = true;
    for c in &checks {
        let line = format!("CHECK {} ... {} ({})", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
        println!("{line}");
        writeln!(report, "{line}").unwrap();
        all_ok &= c.pass;
    }
    write_file(&ctx.out_dir, "verify_report.txt", &report)?;
    if all_ok {
        println!("verify: all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(CliError::Numerical("verification checks failed".into()))
    }
}
