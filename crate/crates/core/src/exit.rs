//! Exit intervals and exit records shared by the flow, the simulator and the
//! statistics layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ext_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Lower,
    Upper,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Lower => write!(f, "lower"),
            Endpoint::Upper => write!(f, "upper"),
        }
    }
}

/// The open interval `(lower, upper)`; either end may be infinite for a
/// one-sided boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitProblemSpec {
    #[serde(with = "ext_f64")]
    pub lower: f64,
    #[serde(with = "ext_f64")]
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rare_endpoint: Option<Endpoint>,
}

impl ExitProblemSpec {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let s = Self {
            lower,
            upper,
            rare_endpoint: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_nan() || self.upper.is_nan() || self.lower >= self.upper {
            return Err(Error::Config(format!(
                "exit interval needs lower < upper, got ({}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    pub fn require_inside(&self, x0: f64) -> Result<()> {
        if self.contains(x0) {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "start {x0} is not strictly inside ({}, {})",
                self.lower, self.upper
            )))
        }
    }

    pub fn boundary(&self, e: Endpoint) -> f64 {
        match e {
            Endpoint::Lower => self.lower,
            Endpoint::Upper => self.upper,
        }
    }

    /// Endpoint crossed by a state outside the open interval.
    pub fn side(&self, x: f64) -> Option<Endpoint> {
        if x <= self.lower {
            Some(Endpoint::Lower)
        } else if x >= self.upper {
            Some(Endpoint::Upper)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub tau: f64,
    pub exit_state: f64,
    pub endpoint: Endpoint,
}
