//! Monte-Carlo engine for counterparty-risk pricing and risk-minimizing
//! hedging of defaultable-claim portfolios under an interacting
//! default-intensity model with contagion jumps.
//!
//! The crate is organized around the pipeline:
//!
//! - [`model`] — joint simulation of intensities and default indicators;
//! - [`claims`] — defaultable claims as state-indexed payoff quadruples;
//! - [`fk`] — Monte-Carlo estimators for the recursive claim-value and
//!   counterparty-risk value functions, with gradients and jump differences;
//! - [`cva`] — exposure, the counterparty-risk payment stream, and its value;
//! - [`hedging`] — the risk-minimizing hedge in the counterparty swap and
//!   its diagnostics;
//! - [`closed_form`] — independent oracles for the small-portfolio closed
//!   forms, by quadrature or diffusion-only Monte Carlo;
//! - [`lattice`] — near-exact value tables for deterministic
//!   piecewise-affine intensity models.

pub mod claims;
pub mod closed_form;
pub mod cva;
pub mod error;
pub mod fk;
pub mod hedging;
pub mod lattice;
pub mod model;
pub mod parallel;
pub mod quad;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
