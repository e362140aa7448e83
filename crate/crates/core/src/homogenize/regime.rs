//! Scaling-regime bookkeeping for the fluctuation limit.
//!
//! The relation between ε and δ is always configured as an exact power law,
//! so the limit `ℓ = lim ε^m/θ` is decided by comparing exponents rather
//! than by evaluating anything numerically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ext_f64;

/// Tolerance for deciding equality of configured exponents.
const EXPONENT_EPS: f64 = 1e-12;

/// How δ depends on ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeltaSchedule {
    /// Diffusive regime: `δ = ε^exponent` with `exponent > 1`, so `θ = δ/ε = ε^{exponent−1}`.
    Power { exponent: f64 },
    /// Resonant regime with the γ of the coefficient set:
    /// `δ = ε/(γ + ε^ζ)` so that `θ = ε/δ − γ = ε^ζ`; without ζ, `δ = ε/γ` and `θ ≡ 0`.
    Resonant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        zeta: Option<f64>,
    },
}

impl DeltaSchedule {
    pub fn delta(&self, epsilon: f64, gamma: f64) -> f64 {
        match *self {
            DeltaSchedule::Power { exponent } => epsilon.powf(exponent),
            DeltaSchedule::Resonant { zeta } => match zeta {
                Some(z) => epsilon / (gamma + epsilon.powf(z)),
                None => epsilon / gamma,
            },
        }
    }
}

/// Value of `ℓ = lim ε^m/θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ell {
    Zero,
    Finite(f64),
    Infinite,
}

impl Ell {
    pub fn is_zero(&self) -> bool {
        matches!(self, Ell::Zero)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Ell::Infinite)
    }

    pub fn value(&self) -> f64 {
        match *self {
            Ell::Zero => 0.0,
            Ell::Finite(v) => v,
            Ell::Infinite => f64::INFINITY,
        }
    }
}

/// Which terms of the limiting fluctuation process survive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ActiveTerms {
    pub j_drift: bool,
    pub psi_drift: bool,
    pub noise: bool,
    pub initial_perturbation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeClassification {
    pub regime_index: u8,
    pub epsilon: f64,
    pub delta: f64,
    /// δ = ε^p in the diffusive regime
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_exponent: Option<f64>,
    #[serde(with = "ext_f64")]
    pub gamma: f64,
    #[serde(with = "ext_f64")]
    pub a1: f64,
    #[serde(with = "ext_f64")]
    pub a2: f64,
    pub theta: f64,
    pub m: f64,
    pub ell: Ell,
    pub beta: f64,
    /// θ = ε^ζ; absent when θ ≡ 0
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    pub active_terms: ActiveTerms,
    /// multiplier of the J̄ drift: `ℓ⁻¹` for ℓ ∈ (0, ∞], 1 for ℓ = 0
    pub j_coefficient: f64,
}

fn same(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= EXPONENT_EPS * (1.0 + a.abs().max(b.abs()))
}

/// Classify the scaling regime for one ε.
pub fn classify_regime(
    epsilon: f64,
    schedule: DeltaSchedule,
    gamma: f64,
    a1: f64,
    a2: f64,
) -> Result<RegimeClassification> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    for (name, a) in [("a1", a1), ("a2", a2)] {
        if a.is_nan() || a <= 0.0 {
            return Err(Error::Config(format!(
                "{name} must be positive or inf, got {a}"
            )));
        }
    }
    let (regime_index, delta_exponent, theta, zeta) = match schedule {
        DeltaSchedule::Power { exponent } => {
            if !gamma.is_infinite() {
                return Err(Error::Config(format!(
                    "power schedule is the diffusive regime and needs gamma = inf, got {gamma}"
                )));
            }
            if !(exponent.is_finite() && exponent > 1.0) {
                return Err(Error::Config(format!(
                    "diffusive regime needs delta = eps^p with p > 1, got p = {exponent}"
                )));
            }
            let z = exponent - 1.0;
            (1u8, Some(exponent), epsilon.powf(z), Some(z))
        }
        DeltaSchedule::Resonant { zeta } => {
            if !(gamma.is_finite() && gamma >= 0.0) {
                return Err(Error::Config(format!(
                    "resonant schedule needs a finite gamma >= 0, got {gamma}"
                )));
            }
            if gamma == 0.0 && zeta.is_none() {
                return Err(Error::Config(
                    "gamma = 0 needs an explicit zeta (delta = eps^(1 - zeta))".into(),
                ));
            }
            if let Some(z) = zeta {
                if !(z.is_finite() && z > 0.0) {
                    return Err(Error::Config(format!("zeta must be positive, got {z}")));
                }
                if gamma == 0.0 && z >= 1.0 {
                    return Err(Error::Config(format!(
                        "gamma = 0 requires zeta < 1 so that delta -> 0, got {z}"
                    )));
                }
            }
            (2u8, None, zeta.map_or(0.0, |z| epsilon.powf(z)), zeta)
        }
    };
    let delta = schedule.delta(epsilon, gamma);
    let m = 0.5_f64.min(a1 / 2.0).min(a2 / 2.0);
    let ell = match zeta {
        None => Ell::Infinite,
        Some(z) if same(m, z) => Ell::Finite(1.0),
        // ε^m / ε^ζ = ε^{m−ζ}
        Some(z) if m > z => Ell::Zero,
        Some(_) => Ell::Infinite,
    };
    let beta = if ell.is_zero() {
        theta
    } else {
        epsilon.powf(m)
    };
    let nonzero = !ell.is_zero();
    let active_terms = ActiveTerms {
        j_drift: !ell.is_infinite(),
        psi_drift: nonzero && same(m, a1 / 2.0),
        noise: nonzero && same(m, 0.5),
        initial_perturbation: nonzero && same(m, a2 / 2.0),
    };
    let j_coefficient = match ell {
        Ell::Zero => 1.0,
        Ell::Finite(l) => 1.0 / l,
        Ell::Infinite => 0.0,
    };
    Ok(RegimeClassification {
        regime_index,
        epsilon,
        delta,
        delta_exponent,
        gamma,
        a1,
        a2,
        theta,
        m,
        ell,
        beta,
        zeta,
        active_terms,
        j_coefficient,
    })
}
