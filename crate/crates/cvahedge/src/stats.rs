//! Sample statistics for Monte-Carlo estimates.

/// A Monte-Carlo estimate with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n: u64,
}

impl Estimate {
    /// An exact (zero-variance) value, e.g. a terminal condition.
    pub fn exact(value: f64) -> Self {
        Estimate { value, std_error: 0.0, n: 1 }
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_se(&self, other: &Estimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    /// Whether `self` and `other` agree within `k` combined standard errors.
    /// Deterministic estimates (zero combined SE) are compared at `floor`.
    pub fn agrees_within(&self, other: &Estimate, k: f64, floor: f64) -> bool {
        let tol = (k * self.combined_se(other)).max(floor);
        (self.value - other.value).abs() <= tol
    }
}

/// Welford accumulator for mean and standard error.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean, std_error: self.std_error(), n: self.n }
    }
}

/// Accumulates mean/SE from a slice in index order (deterministic reduction).
pub fn estimate_from(values: &[f64]) -> Estimate {
    let mut acc = Accumulator::new();
    for &v in values {
        acc.push(v);
    }
    acc.estimate()
}
