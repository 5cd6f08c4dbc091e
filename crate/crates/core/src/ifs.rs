//! Intuitionistic fuzzy values: a support degree `mu`, an opposition degree
//! `nu`, and the hesitation `1 - mu - nu` that is left over.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on `mu + nu <= 1` before a value is rejected.
pub const DEFAULT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IfsError {
    #[error("{field}={value} is outside [0, 1]")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("mu+nu>1 (mu={mu}, nu={nu})")]
    ConstraintViolated { mu: f64, nu: f64 },
    #[error("tolerance {0} must lie in (0, 1e-3)")]
    InvalidTolerance(f64),
}

impl IfsError {
    /// Short machine-readable reason used in service and CLI error bodies.
    pub fn reason(&self) -> String {
        match self {
            IfsError::OutOfRange { field, .. } => format!("{field} out of [0,1]"),
            IfsError::ConstraintViolated { .. } => "mu+nu>1".to_string(),
            IfsError::InvalidTolerance(_) => "invalid tolerance".to_string(),
        }
    }
}

/// Constraint slack used when validating values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    eps: f64,
}

impl Tolerance {
    pub fn new(eps: f64) -> Result<Self, IfsError> {
        if eps > 0.0 && eps < 1e-3 {
            Ok(Self { eps })
        } else {
            Err(IfsError::InvalidTolerance(eps))
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS }
    }
}

/// A validated intuitionistic fuzzy judgment.
///
/// Both degrees lie in `[0, 1]` and their sum never exceeds `1 + eps`.
/// Deserialization goes through the same validation as [`IfsValue::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIfs", into = "RawIfs")]
pub struct IfsValue {
    mu: f64,
    nu: f64,
}

/// Unvalidated wire form of an [`IfsValue`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawIfs {
    pub mu: f64,
    pub nu: f64,
}

impl TryFrom<RawIfs> for IfsValue {
    type Error = IfsError;

    fn try_from(raw: RawIfs) -> Result<Self, Self::Error> {
        IfsValue::new(raw.mu, raw.nu)
    }
}

impl From<IfsValue> for RawIfs {
    fn from(v: IfsValue) -> Self {
        RawIfs { mu: v.mu, nu: v.nu }
    }
}

impl IfsValue {
    /// Total hesitation: no support and no opposition.
    pub const UNKNOWN: IfsValue = IfsValue { mu: 0.0, nu: 0.0 };

    pub fn new(mu: f64, nu: f64) -> Result<Self, IfsError> {
        Self::with_tolerance(mu, nu, Tolerance::default())
    }

    pub fn with_tolerance(mu: f64, nu: f64, tol: Tolerance) -> Result<Self, IfsError> {
        // `contains` is false for NaN, so NaN is rejected here as well.
        if !(0.0..=1.0).contains(&mu) {
            return Err(IfsError::OutOfRange { field: "mu", value: mu });
        }
        if !(0.0..=1.0).contains(&nu) {
            return Err(IfsError::OutOfRange { field: "nu", value: nu });
        }
        if mu + nu > 1.0 + tol.eps() {
            return Err(IfsError::ConstraintViolated { mu, nu });
        }
        Ok(Self { mu, nu })
    }

    /// Builds a value from the annotation UI's integer percent sliders.
    pub fn from_percent(support: u8, opposition: u8) -> Result<Self, IfsError> {
        Self::new(f64::from(support) / 100.0, f64::from(opposition) / 100.0)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `1 - mu - nu`, clamped to `[0, 1]`.
    pub fn hesitation(&self) -> f64 {
        (1.0 - self.mu - self.nu).clamp(0.0, 1.0)
    }

    /// Normalized Euclidean distance over the (mu, nu, pi) triple.
    pub fn distance(&self, other: &IfsValue) -> f64 {
        let d_mu = self.mu - other.mu;
        let d_nu = self.nu - other.nu;
        let d_pi = self.hesitation() - other.hesitation();
        (0.5 * (d_mu * d_mu + d_nu * d_nu + d_pi * d_pi)).sqrt().min(1.0)
    }

    /// Midpoint of the interval `[mu, 1 - nu]`, i.e. `mu + pi / 2`.
    pub fn defuzzify(&self) -> f64 {
        (self.mu + self.hesitation() / 2.0).clamp(0.0, 1.0)
    }

    /// Support and opposition exchanged.
    pub fn complement(&self) -> IfsValue {
        IfsValue { mu: self.nu, nu: self.mu }
    }

    pub fn approx_eq(&self, other: &IfsValue, tol: f64) -> bool {
        (self.mu - other.mu).abs() <= tol && (self.nu - other.nu).abs() <= tol
    }
}

impl fmt::Display for IfsValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(mu={}, nu={}, pi={})", self.mu, self.nu, self.hesitation())
    }
}

/// Two-response side-by-side judgment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub first: IfsValue,
    pub second: IfsValue,
}

impl PreferencePair {
    pub fn new(first: IfsValue, second: IfsValue) -> Self {
        Self { first, second }
    }
}
