//! Error types shared across the engine.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or input violates its domain (nonpositive intensity,
    /// malformed dimensions, bad configuration values).
    #[error("domain error: {0}")]
    Domain(String),

    /// Simultaneous-default resolution exhausted the substep budget.
    #[error("substep cap {cap} exceeded while resolving defaults near t = {time}")]
    SubstepCapExceeded { time: f64, cap: usize },

    /// An estimator produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Recursion over default states exceeded the configured depth cap.
    #[error("recursion depth cap {0} exceeded")]
    DepthExceeded(usize),

    /// Index out of range for the given number of names.
    #[error("name index {index} out of range for {n_names} names")]
    IndexOutOfRange { index: usize, n_names: usize },

    /// Time argument outside the claim's life [0, T].
    #[error("time {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    /// The hedge is only defined while the counterparty is alive.
    #[error("hedge requested after the counterparty default")]
    CounterpartyDefaulted,

    /// The instrument's quadratic-variation density vanished while the
    /// numerator did not; carries the numerator terms for diagnostics.
    #[error("degenerate hedge denominator: phi = {phi:.3e}, u = ({u1:.3e}, {u2:.3e}, {u3:.3e})")]
    DegeneratePhi { phi: f64, u1: f64, u2: f64, u3: f64 },

    /// Not enough Monte-Carlo material to form the requested diagnostic.
    #[error("insufficient paths: need at least {need}, got {got}")]
    InsufficientPaths { need: usize, got: usize },
}
