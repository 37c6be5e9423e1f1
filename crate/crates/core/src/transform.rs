//! Root transformations of the response and their inverses.
//!
//! The frequentist estimator back-transforms a fitted mean and therefore needs
//! a bias correction; Bayesian estimators back-transform posterior predictive
//! draws and use the plain inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};

/// Root used to transform biomass before fitting: `t = y^(1/r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum TransformSpec {
    SquareRoot,
    FourthRoot,
}

impl TransformSpec {
    pub fn from_root(root: u32) -> Result<Self> {
        match root {
            2 => Ok(TransformSpec::SquareRoot),
            4 => Ok(TransformSpec::FourthRoot),
            other => Err(SaeError::Config(format!(
                "unsupported root {other}; expected 2 or 4"
            ))),
        }
    }

    pub fn root(self) -> u32 {
        match self {
            TransformSpec::SquareRoot => 2,
            TransformSpec::FourthRoot => 4,
        }
    }

    pub fn forward(self, y: f64) -> Result<f64> {
        forward(y, self)
    }

    pub fn naive_inverse(self, t: f64) -> f64 {
        naive_inverse(t, self)
    }

    pub fn bias_corrected_inverse(self, mean_t: f64, tau2: f64) -> Result<f64> {
        bias_corrected_inverse(mean_t, tau2, self)
    }
}

impl TryFrom<u32> for TransformSpec {
    type Error = SaeError;
    fn try_from(value: u32) -> Result<Self> {
        TransformSpec::from_root(value)
    }
}

impl From<TransformSpec> for u32 {
    fn from(value: TransformSpec) -> u32 {
        value.root()
    }
}

/// How a fitted transformed-scale value is mapped back to biomass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackTransformKind {
    NaiveInverse,
    BiasCorrected { tau2: f64 },
}

impl BackTransformKind {
    pub fn apply(self, t: f64, spec: TransformSpec) -> Result<f64> {
        match self {
            BackTransformKind::NaiveInverse => Ok(naive_inverse(t, spec)),
            BackTransformKind::BiasCorrected { tau2 } => bias_corrected_inverse(t, tau2, spec),
        }
    }
}

pub fn forward(y: f64, spec: TransformSpec) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(SaeError::Domain(format!(
            "root transform requires y >= 0, got {y}"
        )));
    }
    Ok(match spec {
        TransformSpec::SquareRoot => y.sqrt(),
        TransformSpec::FourthRoot => y.sqrt().sqrt(),
    })
}

/// `t^r`; negative `t` is raised as-is, which is nonnegative for even roots.
pub fn naive_inverse(t: f64, spec: TransformSpec) -> f64 {
    let t2 = t * t;
    match spec {
        TransformSpec::SquareRoot => t2,
        TransformSpec::FourthRoot => t2 * t2,
    }
}

/// Mean of `Z^r` for `Z ~ N(mean_t, tau2)`.
pub fn bias_corrected_inverse(mean_t: f64, tau2: f64, spec: TransformSpec) -> Result<f64> {
    if !(tau2 >= 0.0) {
        return Err(SaeError::Domain(format!(
            "residual variance must be >= 0, got {tau2}"
        )));
    }
    let m2 = mean_t * mean_t;
    Ok(match spec {
        TransformSpec::SquareRoot => m2 + tau2,
        TransformSpec::FourthRoot => m2 * m2 + 6.0 * m2 * tau2 + 3.0 * tau2 * tau2,
    })
}
