//! Feller scale and speed functions.
//!
//! For a generator `a f″ + B f′` the scale `u` and speed `v` satisfy
//! `u′ = exp(−∫ B/a)` and `v′ = 1/(a u′)`, so that the generator equals
//! `D_v D_u`. For the conditioned rough-potential dynamics both are written
//! in terms of `L = log ∫₀ˣ h`, normalized so that `u(x₋) = 0`, `u(x₊) = 1`.

use serde::{Deserialize, Serialize};

use super::conditioned::{logaddexp, ConditionedDrift};
use crate::error::{Error, Result};
use crate::limits::{gibbs_constants, RoughPotentialSpec};
use crate::quad::{adaptive_gk, GaussLegendre};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpeed {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl ScaleSpeed {
    /// `max_i |u_i − other.u_i|` on a common grid.
    pub fn scale_distance(&self, other: &ScaleSpeed) -> Result<f64> {
        if self.x != other.x {
            return Err(Error::Config(
                "scale functions live on different grids".into(),
            ));
        }
        Ok(self
            .u
            .iter()
            .zip(&other.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn check_grid(x_grid: &[f64]) -> Result<()> {
    if x_grid.len() < 2 || x_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(
            "grid must hold at least two increasing points".into(),
        ));
    }
    Ok(())
}

/// Scale and speed of a generator `a f″ + B f′`, with `u = v = 0` at the
/// first grid point. Integrals by adaptive Gauss–Kronrod between grid
/// points.
pub fn feller_scale_speed(
    drift: impl Fn(f64) -> f64,
    diffusion: impl Fn(f64) -> f64,
    x_grid: &[f64],
) -> Result<ScaleSpeed> {
    check_grid(x_grid)?;
    let ratio = |y: f64| drift(y) / diffusion(y);
    // exponent φ(y) = ∫_{x₀}^y B/a, accumulated from the left grid point
    let mut phi_left = 0.0;
    let (mut u, mut v) = (vec![0.0], vec![0.0]);
    for w in x_grid.windows(2) {
        let (l, r) = (w[0], w[1]);
        let phi = |y: f64| -> f64 {
            phi_left + adaptive_gk(&ratio, l, y, 1e-15, 1e-13).unwrap_or(f64::NAN)
        };
        let du = adaptive_gk(|y| (-phi(y)).exp(), l, r, 1e-15, 1e-12)?;
        let dv = adaptive_gk(|y| phi(y).exp() / diffusion(y), l, r, 1e-15, 1e-12)?;
        u.push(u.last().unwrap() + du);
        v.push(v.last().unwrap() + dv);
        phi_left = phi(r);
        if !phi_left.is_finite() {
            return Err(Error::SingularIntegrand { at: r });
        }
    }
    Ok(ScaleSpeed {
        x: x_grid.to_vec(),
        u,
        v,
    })
}

/// Scale and speed of the conditioned dynamics on `x_grid ⊂ [x₋, x₊]`.
///
/// With `δ` given, from the exact conditioned drift; with `δ = None`, the
/// `δ → 0` limit: the scale function of the ripple-free profile, and its
/// speed multiplied by the enhancement `⟨e^{−Q/D}⟩⟨e^{Q/D}⟩`, which is the
/// time change induced by homogenizing the ripple.
pub fn scale_speed_functions(
    rough: &RoughPotentialSpec,
    epsilon: f64,
    delta: Option<f64>,
    x_grid: &[f64],
) -> Result<ScaleSpeed> {
    check_grid(x_grid)?;
    let (a, b) = (rough.interval.lower, rough.interval.upper);
    if x_grid[0] < a || *x_grid.last().unwrap() > b {
        return Err(Error::Domain(format!("grid must lie inside [{a}, {b}]")));
    }
    let cd = ConditionedDrift::new(rough, epsilon, delta)?;
    let speed_factor = match delta {
        Some(_) => 1.0,
        None => gibbs_constants(rough, 4096)?.enhancement,
    };
    let la = cd.log_integral(a)?;
    let lb = cd.log_integral(b)?;
    let norm = -(la - lb).exp_m1();
    let mut u = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        u.push(-(la - cd.log_integral(x)?).exp_m1() / norm);
    }

    // log ∫_a^x exp(2L − log h − L(a)) accumulated over sub-cells no wider
    // than the L table spacing
    let gl = GaussLegendre::new(4);
    let log_integrand =
        |y: f64| -> Result<f64> { Ok(2.0 * cd.log_integral(y)? - cd.log_h(y) - la) };
    let d = rough.d;
    let prefactor = norm / (epsilon * d) * speed_factor;
    let mut acc = f64::NEG_INFINITY;
    let mut left = a;
    let mut v = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        if x > left {
            let n_sub = ((x - left) / cd.step()).ceil().max(1.0) as usize;
            let h = (x - left) / n_sub as f64;
            for k in 0..n_sub {
                let mid = left + (k as f64 + 0.5) * h;
                for (t, w) in gl.nodes.iter().zip(&gl.weights) {
                    let term = (0.5 * h * w).ln() + log_integrand(mid + 0.5 * h * t)?;
                    acc = logaddexp(acc, term);
                }
            }
            left = x;
        }
        let val = prefactor * acc.exp();
        if !val.is_finite() {
            return Err(Error::Domain(format!(
                "speed function overflows at x = {x} (log value {acc})"
            )));
        }
        v.push(val);
    }
    Ok(ScaleSpeed {
        x: x_grid.to_vec(),
        u,
        v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exit::ExitProblemSpec;
    use crate::fields::Field;

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
    }

    fn spec(q: Field) -> RoughPotentialSpec {
        RoughPotentialSpec {
            v: Field::poly(vec![0.0, 0.0, 0.5]),
            q,
            d: 1.0,
            period: 1.0,
            interval: ExitProblemSpec::new(0.5, 2.0).unwrap(),
            x0: 1.0,
        }
    }

    #[test]
    fn zero_drift_constant_diffusion() {
        let (eps, d) = (0.1, 1.0);
        let xs = grid(0.0, 1.0, 10);
        let s = feller_scale_speed(|_| 0.0, |_| eps * d, &xs).unwrap();
        for (x, (u, v)) in xs.iter().zip(s.u.iter().zip(&s.v)) {
            assert!((u - x).abs() < 1e-13);
            assert!((v - x / (eps * d)).abs() < 1e-11);
        }
    }

    #[test]
    fn ou_scale_function() {
        // B = −x, a = 1/2: u′ = exp(x²)
        let xs = grid(0.0, 1.0, 8);
        let s = feller_scale_speed(|x| -x, |_| 0.5, &xs).unwrap();
        for (x, u) in xs.iter().zip(&s.u) {
            let want = adaptive_gk(|y| (y * y).exp(), 0.0, *x, 1e-15, 1e-14).unwrap();
            assert!((u - want).abs() < 1e-11);
        }
    }

    #[test]
    fn conditioned_scale_agrees_with_generic_formula() {
        let r = spec(Field::zero());
        let eps = 0.2;
        let xs = grid(0.5, 2.0, 15);
        let cd = ConditionedDrift::new(&r, eps, None).unwrap();
        let generic = feller_scale_speed(|x| cd.drift(x).unwrap(), |_| eps * r.d, &xs).unwrap();
        let ours = scale_speed_functions(&r, eps, Some(0.1), &xs).unwrap();
        let un = generic.u.last().unwrap();
        for k in 0..xs.len() {
            assert!((ours.u[k] - generic.u[k] / un).abs() < 1e-8, "{k}");
            assert!(
                (ours.v[k] - generic.v[k] * un).abs() < 1e-7 * ours.v[k].max(1.0),
                "{k}"
            );
        }
    }

    #[test]
    fn monotone_and_normalized() {
        let q = Field::trig(1.0, 0.0, vec![1.0], vec![0.3]);
        let xs = grid(0.5, 2.0, 30);
        for delta in [Some(1e-2), None] {
            let s = scale_speed_functions(&spec(q.clone()), 0.05, delta, &xs).unwrap();
            assert!(s.u[0].abs() < 1e-14 && (s.u[30] - 1.0).abs() < 1e-12);
            assert!(s.u.windows(2).all(|w| w[1] > w[0]));
            assert!(s.v.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn rough_scale_converges_as_delta_shrinks() {
        let q = Field::trig(1.0, 0.0, vec![1.0], vec![]);
        let xs = grid(0.5, 2.0, 60);
        let limit = scale_speed_functions(&spec(q.clone()), 0.05, None, &xs).unwrap();
        let mut last = f64::INFINITY;
        for delta in [1e-2, 1e-3] {
            let s = scale_speed_functions(&spec(q.clone()), 0.05, Some(delta), &xs).unwrap();
            let d = s.scale_distance(&limit).unwrap();
            assert!(d < last, "{delta}: {d}");
            last = d;
        }
    }
}
