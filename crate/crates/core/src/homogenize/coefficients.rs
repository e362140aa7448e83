//! Coefficient sets of the multiscale SDE and the numerical tolerances shared
//! by the homogenization pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ext_f64, Field};

/// The fields `b, c, σ, Ψ` of
/// `dX = [(ε/δ) b(X, X/δ) + c(X, X/δ) + ε^{a₁/2} Ψ(X, X/δ)] dt + √ε σ(X, X/δ) dW`,
/// all ρ-periodic in the fast argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCoefficientSet {
    #[serde(default = "one_usize")]
    pub dimension: usize,
    pub period: f64,
    #[serde(default)]
    pub b: Field,
    #[serde(default)]
    pub c: Field,
    pub sigma: Field,
    /// Perturbation used in the simulated dynamics.
    #[serde(default)]
    pub psi: Field,
    /// Limit of the perturbation; defaults to `psi` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_limit: Option<Field>,
    /// Regime parameter γ (`"inf"` for the diffusive regime ε/δ → ∞).
    #[serde(with = "ext_f64", default = "infinite")]
    pub gamma: f64,
}

fn one_usize() -> usize {
    1
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl PeriodicCoefficientSet {
    /// Langevin dynamics in the rough potential `V(x) + εQ(x/δ)`:
    /// `b = −Q′`, `c = −V′`, `σ = √(2D)`.
    pub fn langevin(v: &Field, q: &Field, d: f64, period: f64) -> Self {
        Self {
            dimension: 1,
            period,
            b: q.derivative_y().scaled(-1.0),
            c: v.derivative_x().scaled(-1.0),
            sigma: Field::constant((2.0 * d).sqrt()),
            psi: Field::zero(),
            psi_limit: None,
            gamma: f64::INFINITY,
        }
    }

    pub fn psi_limit(&self) -> &Field {
        self.psi_limit.as_ref().unwrap_or(&self.psi)
    }

    /// Regime index implied by γ: 1 for γ = ∞, 2 otherwise.
    pub fn regime_index(&self) -> u8 {
        if self.gamma.is_infinite() {
            1
        } else {
            2
        }
    }

    /// Structural checks plus nondegeneracy and periodicity on sample points.
    pub fn validate(&self, xs: &[f64], tol: &Tolerances) -> Result<()> {
        if self.dimension != 1 {
            return Err(Error::Config(format!(
                "numerical solvers are one-dimensional; got dimension {}",
                self.dimension
            )));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::Config(format!(
                "period must be positive, got {}",
                self.period
            )));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::Config(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        for (name, f) in self.named_fields() {
            f.validate()
                .map_err(|e| Error::Config(format!("field {name}: {e}")))?;
            let defect = f.periodicity_defect(self.period, xs, 64);
            if defect > tol.periodicity {
                return Err(Error::InvalidField(format!(
                    "field {name} is not {}-periodic in y (mismatch {defect:e})",
                    self.period
                )));
            }
        }
        let n_y = 256;
        for &x in xs {
            for k in 0..n_y {
                let y = k as f64 * self.period / n_y as f64;
                let s = self.sigma.eval(x, y);
                if !(s * s >= tol.sigma_min * tol.sigma_min) {
                    return Err(Error::Precondition(format!(
                        "sigma is degenerate at (x, y) = ({x}, {y}): sigma = {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn named_fields(&self) -> Vec<(&'static str, &Field)> {
        vec![
            ("b", &self.b),
            ("c", &self.c),
            ("sigma", &self.sigma),
            ("psi", &self.psi),
            ("psi_limit", self.psi_limit()),
        ]
    }
}

/// Numerical tolerances, stated once and echoed in every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// relative residual of every cell / auxiliary solve
    pub residual: f64,
    /// `|ρ·⟨μ⟩ − 1|`
    pub normalization: f64,
    /// centering residual `|∮ b dμ|` in the diffusive regime
    pub centering: f64,
    /// `|∮ χ dμ|`, `|∮ Ξ dμ|`
    pub mu_mean: f64,
    /// minimal `|λ̄(z)|` at an exit point
    pub transversality_floor: f64,
    /// wrap-around mismatch of coefficient fields
    pub periodicity: f64,
    /// lower bound on `|σ|`
    pub sigma_min: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual: 1e-8,
            normalization: 1e-10,
            centering: 1e-8,
            mu_mean: 1e-8,
            transversality_floor: 1e-6,
            periodicity: 1e-10,
            sigma_min: 1e-8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn langevin_fields() {
        let v = Field::poly(vec![0.0, 0.0, 0.5]);
        let q = Field::trig(1.0, 0.0, vec![1.0], vec![]);
        let c = PeriodicCoefficientSet::langevin(&v, &q, 0.5, 1.0);
        assert_eq!(c.regime_index(), 1);
        assert!((c.c.eval(2.0, 0.3) + 2.0).abs() < 1e-15);
        let y = 0.1;
        let expect = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * y).sin();
        assert!((c.b.eval(0.0, y) - expect).abs() < 1e-12);
        assert!((c.sigma.eval(0.0, 0.0) - 1.0).abs() < 1e-15);
        c.validate(&[0.0, 1.0], &Tolerances::default()).unwrap();
    }

    #[test]
    fn degenerate_sigma_rejected() {
        let mut c = PeriodicCoefficientSet::langevin(
            &Field::poly(vec![0.0, 0.0, 0.5]),
            &Field::zero(),
            0.5,
            1.0,
        );
        c.sigma = Field::trig(1.0, 0.0, vec![1.0], vec![]);
        assert!(matches!(
            c.validate(&[0.0], &Tolerances::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn non_periodic_field_rejected() {
        let mut c = PeriodicCoefficientSet::langevin(
            &Field::poly(vec![0.0, 0.0, 0.5]),
            &Field::zero(),
            0.5,
            1.0,
        );
        c.b = Field::trig(0.8, 0.0, vec![1.0], vec![]);
        assert!(matches!(
            c.validate(&[0.0], &Tolerances::default()),
            Err(Error::InvalidField(_))
        ));
    }

    #[test]
    fn json_round_trip_with_infinite_gamma() {
        let c = PeriodicCoefficientSet::langevin(
            &Field::poly(vec![0.0, 0.0, 0.5]),
            &Field::trig(1.0, 0.0, vec![1.0], vec![]),
            1.0,
            1.0,
        );
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains(r#""gamma":"inf""#));
        let back: PeriodicCoefficientSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
