//! Scenario files: one human-readable config (TOML preferred, JSON accepted)
//! describing the model, the traded portfolio, simulation and estimator
//! controls, and the output location.

use cvahedge::claims::Portfolio;
use cvahedge::fk::EstimatorConfig;
use cvahedge::model::{DefaultState, ModelParams, Scheme, SimConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Default run mode; the command line can override it.
    #[serde(default)]
    pub mode: Option<Mode>,
    pub model: ModelSection,
    pub portfolio: PortfolioSection,
    pub sim: SimSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Price,
    Cva,
    Hedge,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kappa: Vec<f64>,
    pub nu: Vec<f64>,
    /// Factor loadings shared across names.
    #[serde(default)]
    pub sigma: Vec<f64>,
    /// Optional per-name override of the loadings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_per_name: Option<Vec<Vec<f64>>>,
    pub contagion: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortfolioKind {
    Cds,
    Bond,
    Ftd,
}

/// Loss rate: a constant or a table keyed by default state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LossSpec {
    Constant(f64),
    Table {
        default: f64,
        overrides: Vec<LossOverride>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossOverride {
    /// Default indicators, e.g. `[1, 0]`.
    pub state: Vec<u8>,
    pub value: f64,
}

impl LossSpec {
    pub fn at(&self, z: DefaultState) -> f64 {
        match self {
            LossSpec::Constant(v) => *v,
            LossSpec::Table { default, overrides } => overrides
                .iter()
                .find(|o| DefaultState::from_indicators(&o.state) == z)
                .map(|o| o.value)
                .unwrap_or(*default),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSection {
    pub kind: PortfolioKind,
    /// Spread per reference swap, coupon per bond, or the single
    /// first-to-default spread.
    pub spreads: Vec<f64>,
    pub losses: Vec<LossSpec>,
    pub weights: Vec<f64>,
    pub cpty_spread: f64,
    pub cpty_loss: LossSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub horizon: f64,
    pub step: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default = "default_substep_cap")]
    pub substep_cap: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

fn default_substep_cap() -> usize {
    32
}

fn default_scheme() -> Scheme {
    Scheme::EulerFullTruncation
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub paths: usize,
    pub grid_step: f64,
    pub inner_paths: Vec<usize>,
    pub source_stride: usize,
    pub bump_rel: f64,
    pub depth_cap: usize,
    pub crn: bool,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            paths: 2000,
            grid_step: 0.02,
            inner_paths: vec![8, 2],
            source_stride: 2,
            bump_rel: 0.05,
            depth_cap: 24,
            crn: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

impl Scenario {
    /// Parses TOML (preferred) or JSON, inferring from the content.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("json parse: {e}")))
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(format!("toml parse: {e}")))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let sc = Self::parse(&text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model_params().map_err(|e| CliError::Config(e.to_string()))?;
        self.portfolio().map_err(|e| CliError::Config(e.to_string()))?;
        self.sim_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.estimator_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let n = self.model.initial.len();
        let refs = match self.portfolio.kind {
            PortfolioKind::Ftd => 1,
            _ => n - 1,
        };
        if self.portfolio.weights.len() != refs {
            return Err(CliError::Config(format!(
                "portfolio.weights must hold {refs} entries for this kind"
            )));
        }
        Ok(())
    }

    pub fn n_names(&self) -> usize {
        self.model.initial.len()
    }

    pub fn model_params(&self) -> cvahedge::Result<ModelParams> {
        let sigma = match &self.model.sigma_per_name {
            Some(rows) => rows.clone(),
            None => vec![self.model.sigma.clone(); self.model.initial.len()],
        };
        ModelParams::new(
            self.model.kappa.clone(),
            self.model.nu.clone(),
            sigma,
            self.model.contagion.clone(),
            self.model.initial.clone(),
        )
    }

    pub fn portfolio(&self) -> cvahedge::Result<Portfolio> {
        let n = self.n_names();
        let p = &self.portfolio;
        let loss_fns: Vec<Box<dyn Fn(DefaultState) -> f64>> = p
            .losses
            .iter()
            .map(|l| {
                let l = l.clone();
                Box::new(move |z| l.at(z)) as Box<dyn Fn(DefaultState) -> f64>
            })
            .collect();
        let loss_refs: Vec<&dyn Fn(DefaultState) -> f64> =
            loss_fns.iter().map(|b| b.as_ref() as &dyn Fn(DefaultState) -> f64).collect();
        let cl = p.cpty_loss.clone();
        let cpty_loss = move |z: DefaultState| cl.at(z);
        match p.kind {
            PortfolioKind::Cds => Portfolio::cds_portfolio(
                n,
                &p.spreads,
                &loss_refs,
                p.weights.clone(),
                p.cpty_spread,
                &cpty_loss,
            ),
            PortfolioKind::Bond => Portfolio::bond_portfolio(
                n,
                &p.spreads,
                &loss_refs,
                p.weights.clone(),
                p.cpty_spread,
                &cpty_loss,
            ),
            PortfolioKind::Ftd => Portfolio::ftd_portfolio(
                n,
                p.spreads[0],
                &loss_refs,
                p.weights[0],
                p.cpty_spread,
                &cpty_loss,
            ),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon: self.sim.horizon,
            step: self.sim.step,
            n_paths: self.sim.paths,
            seed: self.sim.seed,
            substep_cap: self.sim.substep_cap,
            scheme: self.sim.scheme,
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let e = &self.estimator;
        EstimatorConfig {
            horizon: self.sim.horizon,
            grid_step: e.grid_step,
            scheme: self.sim.scheme,
            paths: e.paths,
            inner_paths: e.inner_paths.clone(),
            source_stride: e.source_stride,
            bump_rel: e.bump_rel,
            depth_cap: e.depth_cap,
            crn: e.crn,
            seed: self.sim.seed,
            threads: 0,
        }
    }
}
