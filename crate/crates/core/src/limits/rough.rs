//! Langevin dynamics in a rough potential `V(x) + ε Q(x/δ)`:
//! `dX = −[V′(X) + (ε/δ) Q′(X/δ)] dt + √(2εD) dW`.
//!
//! Gibbs constants of the fast ripple and the limiting conditional exit law
//! on the rare endpoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exit::{Endpoint, ExitProblemSpec};
use crate::fields::Field;
use crate::homogenize::PeriodicCoefficientSet;
use crate::quad::adaptive_gk;

/// Number of sample points used to check convexity and monotonicity of `V`.
const SHAPE_CHECK_POINTS: usize = 513;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughPotentialSpec {
    /// Slow potential `V(x)`.
    pub v: Field,
    /// Fast ripple `Q(y)`, periodic with period `period`.
    pub q: Field,
    /// Temperature `D > 0`.
    pub d: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    pub interval: ExitProblemSpec,
    pub x0: f64,
}

fn default_period() -> f64 {
    1.0
}

/// Evaluators for `V`, its derivatives and `Q`, `Q′`.
#[derive(Debug, Clone)]
pub struct RoughPotential {
    pub spec: RoughPotentialSpec,
    dv: Field,
    d2v: Field,
    dq: Field,
}

impl RoughPotentialSpec {
    pub fn compile(&self) -> RoughPotential {
        let dv = self.v.derivative_x();
        let d2v = dv.derivative_x();
        RoughPotential {
            spec: self.clone(),
            dv,
            d2v,
            dq: self.q.derivative_y(),
        }
    }

    /// Structural checks and the shape assumptions on `V`: strictly convex on
    /// the closed interval, with its minimum strictly below the lower end (so
    /// `V′ > 0` throughout), and `x₀` strictly inside.
    pub fn validate(&self) -> Result<()> {
        self.v.validate()?;
        self.q.validate()?;
        if self.v.depends_on_y() {
            return Err(Error::Config(
                "V must not depend on the fast variable".into(),
            ));
        }
        if self.q.depends_on_x() {
            return Err(Error::Config(
                "Q must not depend on the slow variable".into(),
            ));
        }
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::Config(format!("D must be positive, got {}", self.d)));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::Config(format!(
                "period must be positive, got {}",
                self.period
            )));
        }
        let defect = self.q.periodicity_defect(self.period, &[0.0], 64);
        if defect > 1e-10 {
            return Err(Error::InvalidField(format!(
                "Q is not {}-periodic (defect {defect:e})",
                self.period
            )));
        }
        self.interval.validate()?;
        if !(self.interval.lower.is_finite() && self.interval.upper.is_finite()) {
            return Err(Error::Config("the exit interval must be bounded".into()));
        }
        self.interval.require_inside(self.x0)?;
        self.rare_endpoint()?;
        let p = self.compile();
        let (a, b) = (self.interval.lower, self.interval.upper);
        for k in 0..SHAPE_CHECK_POINTS {
            let x = a + (b - a) * k as f64 / (SHAPE_CHECK_POINTS - 1) as f64;
            if !(p.d2v(x) > 0.0) {
                return Err(Error::Precondition(format!(
                    "V must be strictly convex on [{a}, {b}]; V''({x}) = {}",
                    p.d2v(x)
                )));
            }
        }
        if !(p.dv(a) > 0.0) {
            return Err(Error::Precondition(format!(
                "the minimum of V must lie below the interval: V'({a}) = {}",
                p.dv(a)
            )));
        }
        Ok(())
    }

    /// The endpoint the conditioned dynamics aim for: the one opposite to the
    /// deterministic flow `−V′`, which under the shape assumptions is the
    /// upper end. An explicitly configured lower endpoint is rejected.
    pub fn rare_endpoint(&self) -> Result<Endpoint> {
        match self.interval.rare_endpoint {
            None | Some(Endpoint::Upper) => Ok(Endpoint::Upper),
            Some(Endpoint::Lower) => Err(Error::Config(
                "the rare endpoint must be the upper one: the flow -V' points towards the lower \
                 end, so only an exit at the upper end is a rare event"
                    .into(),
            )),
        }
    }

    /// The Langevin coefficient set `b = −Q′`, `c = −V′`, `σ = √(2D)`.
    pub fn coefficients(&self) -> PeriodicCoefficientSet {
        PeriodicCoefficientSet::langevin(&self.v, &self.q, self.d, self.period)
    }
}

impl RoughPotential {
    pub fn v(&self, x: f64) -> f64 {
        self.spec.v.eval(x, 0.0)
    }

    pub fn dv(&self, x: f64) -> f64 {
        self.dv.eval(x, 0.0)
    }

    pub fn d2v(&self, x: f64) -> f64 {
        self.d2v.eval(x, 0.0)
    }

    pub fn q(&self, y: f64) -> f64 {
        self.spec.q.eval(0.0, y)
    }

    pub fn dq(&self, y: f64) -> f64 {
        self.dq.eval(0.0, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConstants {
    /// `K = ∮ e^{−Q/D}`
    pub k: f64,
    /// `K̂ = ∮ e^{Q/D}`
    pub k_hat: f64,
    /// `⟨e^{−Q/D}⟩⟨e^{Q/D}⟩ = K K̂ / ρ²`
    pub enhancement: f64,
}

/// Gibbs constants of the ripple by the periodic trapezoid rule on `n`
/// points, which converges geometrically for analytic `Q`.
///
/// Both integrals are computed with the common factor `e^{±Qmax/D}` pulled
/// out, so large `Q/D` cannot overflow.
pub fn gibbs_constants(rough: &RoughPotentialSpec, n: usize) -> Result<GibbsConstants> {
    if n < 128 {
        return Err(Error::Config(format!("gibbs grid needs n >= 128, got {n}")));
    }
    if !(rough.d > 0.0 && rough.period > 0.0) {
        return Err(Error::Config("D and the period must be positive".into()));
    }
    let h = rough.period / n as f64;
    let qs: Vec<f64> = (0..n)
        .map(|k| rough.q.eval(0.0, k as f64 * h) / rough.d)
        .collect();
    let q_max = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let q_min = qs.iter().cloned().fold(f64::INFINITY, f64::min);
    let sum_neg: f64 = qs.iter().map(|q| (q_min - q).exp()).sum();
    let sum_pos: f64 = qs.iter().map(|q| (q - q_max).exp()).sum();
    let k = h * sum_neg * (-q_min).exp();
    let k_hat = h * sum_pos * q_max.exp();
    // ⟨e^{−Q/D}⟩⟨e^{Q/D}⟩ formed from the scaled sums to keep it finite
    let enhancement = (sum_neg / n as f64) * (sum_pos / n as f64) * (q_max - q_min).exp();
    Ok(GibbsConstants {
        k,
        k_hat,
        enhancement,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalExitStats {
    /// The endpoint the integrals run to.
    pub rare_endpoint: Endpoint,
    pub x_rare: f64,
    pub enhancement: f64,
    /// `T(x₀) = e ∫_{x₀}^{x_rare} dy / V′(y)`
    pub t: f64,
    /// `2D e² ∫_{x₀}^{x_rare} dz / V′(z)³`
    pub limit_variance: f64,
}

/// Deterministic exit time and limiting variance of the conditioned exit
/// time, for a given enhancement factor.
pub fn conditional_exit_stats_with(
    rough: &RoughPotentialSpec,
    enhancement: f64,
) -> Result<ConditionalExitStats> {
    rough.validate()?;
    let p = rough.compile();
    let rare = rough.rare_endpoint()?;
    let x_rare = rough.interval.boundary(rare);
    let check = |x: f64| -> Result<f64> {
        let s = p.dv(x);
        if s.abs() < 1e-12 {
            Err(Error::SingularIntegrand { at: x })
        } else {
            Ok(s)
        }
    };
    check(rough.x0)?;
    check(x_rare)?;
    let time = adaptive_gk(|y| 1.0 / p.dv(y), rough.x0, x_rare, 1e-14, 1e-13)?;
    let cube = adaptive_gk(|z| p.dv(z).powi(-3), rough.x0, x_rare, 1e-14, 1e-13)?;
    Ok(ConditionalExitStats {
        rare_endpoint: rare,
        x_rare,
        enhancement,
        t: enhancement * time,
        limit_variance: 2.0 * rough.d * enhancement * enhancement * cube,
    })
}

/// [`conditional_exit_stats_with`] at the enhancement of the ripple `Q`.
pub fn conditional_exit_stats(rough: &RoughPotentialSpec) -> Result<ConditionalExitStats> {
    let g = gibbs_constants(rough, 4096)?;
    conditional_exit_stats_with(rough, g.enhancement)
}

/// Extra drift of the Langevin fluctuation limit by direct nested
/// quadrature:
/// `J̄(x) = −ρ V′(x)²/(K K̂ D) ∮ (1 − ρe^{Q(y)/D}/K̂) ∫₀ʸ (1 − ρe^{−Q(z)/D}/K) dz dy`.
///
/// Independent of the torus solver; used to cross-check it.
pub fn langevin_j_bar_nested(rough: &RoughPotentialSpec, x: f64) -> Result<f64> {
    let g = gibbs_constants(rough, 4096)?;
    let p = rough.compile();
    let (rho, d) = (rough.period, rough.d);
    let inner = |y: f64| -> f64 {
        adaptive_gk(
            |z| 1.0 - rho * (-p.q(z) / d).exp() / g.k,
            0.0,
            y,
            1e-15,
            1e-13,
        )
        .unwrap_or(f64::NAN)
    };
    let outer = adaptive_gk(
        |y| (1.0 - rho * (p.q(y) / d).exp() / g.k_hat) * inner(y),
        0.0,
        rho,
        1e-14,
        1e-12,
    )?;
    let dv = p.dv(x);
    Ok(-rho * dv * dv / (g.k * g.k_hat * d) * outer)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quadratic(q: Field, d: f64) -> RoughPotentialSpec {
        RoughPotentialSpec {
            v: Field::poly(vec![0.0, 0.0, 0.5]),
            q,
            d,
            period: 1.0,
            interval: ExitProblemSpec::new(0.5, 2.0).unwrap(),
            x0: 1.0,
        }
    }

    fn cosine() -> Field {
        Field::trig(1.0, 0.0, vec![1.0], vec![])
    }

    #[test]
    fn flat_gibbs() {
        let g = gibbs_constants(&quadratic(Field::zero(), 1.0), 128).unwrap();
        assert_eq!((g.k, g.k_hat, g.enhancement), (1.0, 1.0, 1.0));
    }

    #[test]
    fn cosine_gibbs_against_bessel_series() {
        // I₀(z) = Σ (z/2)^{2k} / (k!)²
        let i0 = |z: f64| {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..60 {
                term *= (z / 2.0).powi(2) / (k as f64).powi(2);
                sum += term;
            }
            sum
        };
        for d in [0.5, 1.0] {
            let g = gibbs_constants(&quadratic(cosine(), d), 256).unwrap();
            assert!((g.k - i0(1.0 / d)).abs() < 1e-12);
            assert!((g.k_hat - i0(1.0 / d)).abs() < 1e-12);
            assert!((g.enhancement - i0(1.0 / d).powi(2)).abs() < 1e-11);
        }
    }

    #[test]
    fn flat_conditional_exit() {
        let s = conditional_exit_stats(&quadratic(Field::zero(), 1.0)).unwrap();
        assert_eq!(s.rare_endpoint, Endpoint::Upper);
        assert!((s.t - std::f64::consts::LN_2).abs() < 1e-13);
        assert!((s.limit_variance - 0.75).abs() < 1e-13);
    }

    #[test]
    fn enhancement_squares_into_variance() {
        let flat = conditional_exit_stats_with(&quadratic(Field::zero(), 1.0), 1.0).unwrap();
        let e = 1.7;
        let rough = conditional_exit_stats_with(&quadratic(Field::zero(), 1.0), e).unwrap();
        assert!((rough.limit_variance / flat.limit_variance - e * e).abs() < 1e-12);
        assert!((rough.t / flat.t - e).abs() < 1e-12);
    }

    #[test]
    fn variance_decreases_with_start() {
        let mut spec = quadratic(Field::zero(), 1.0);
        let mut last = f64::INFINITY;
        for k in 1..30 {
            spec.x0 = 0.5 + 1.5 * k as f64 / 30.0;
            let v = conditional_exit_stats_with(&spec, 1.0)
                .unwrap()
                .limit_variance;
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn nested_j_bar_matches_torus_solver() {
        use crate::homogenize::{averaged_coefficients, Tolerances};
        use crate::torus::TorusGrid;
        let q = Field::trig(1.0, 0.0, vec![1.0], vec![0.0, 0.5]);
        let spec = quadratic(q, 0.5);
        let coeffs = spec.coefficients();
        for x in [0.5, 1.0, 1.5] {
            let nested = langevin_j_bar_nested(&spec, x).unwrap();
            let grid = TorusGrid::new(1.0, 512).unwrap();
            let solver = averaged_coefficients(&coeffs, 1, x, grid, &Tolerances::default())
                .unwrap()
                .j_bar;
            assert!(
                nested.abs() > 1e-3,
                "asymmetric ripple gives a nonzero extra drift"
            );
            assert!((nested - solver).abs() < 1e-6, "{x}: {nested} vs {solver}");
        }
        // an even ripple has no extra drift
        let even = quadratic(Field::trig(1.0, 0.0, vec![1.0], vec![]), 0.5);
        assert!(langevin_j_bar_nested(&even, 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn shape_assumptions() {
        let mut s = quadratic(Field::zero(), 1.0);
        s.interval = ExitProblemSpec::new(-0.5, 2.0).unwrap();
        assert!(matches!(s.validate(), Err(Error::Precondition(_))));
        let mut s = quadratic(Field::zero(), 1.0);
        s.v = Field::poly(vec![0.0, 1.0, 0.0, -1.0]);
        assert!(matches!(s.validate(), Err(Error::Precondition(_))));
        let mut s = quadratic(Field::zero(), 1.0);
        s.interval.rare_endpoint = Some(Endpoint::Lower);
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = quadratic(Field::zero(), 1.0);
        s.x0 = 3.0;
        assert!(matches!(s.validate(), Err(Error::Precondition(_))));
    }
}
