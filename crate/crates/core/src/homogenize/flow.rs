//! The effective flow `dX̄/dt = λ̄(X̄)` together with its linearization
//! `dΦ/dt = Dλ̄(X̄) Φ`, `Φ(0) = 1`, and deterministic exit times.

use serde::{Deserialize, Serialize};

use super::model::AveragedField;
use crate::error::{Error, Result};
use crate::exit::{Endpoint, ExitProblemSpec};

/// A scalar vector field with its derivative.
pub trait Drift1d: Sync {
    fn value(&self, x: f64) -> Result<f64>;
    fn derivative(&self, x: f64) -> Result<f64>;
}

impl<T: AveragedField> Drift1d for T {
    fn value(&self, x: f64) -> Result<f64> {
        self.lambda_bar(x)
    }

    fn derivative(&self, x: f64) -> Result<f64> {
        self.d_lambda_bar(x)
    }
}

/// Drift given by closures (closed-form test fields, conditioned flows).
pub struct FnDrift<F, G> {
    pub f: F,
    pub df: G,
}

impl<F, G> Drift1d for FnDrift<F, G>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    fn value(&self, x: f64) -> Result<f64> {
        Ok((self.f)(x))
    }

    fn derivative(&self, x: f64) -> Result<f64> {
        Ok((self.df)(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTrajectory {
    pub start: f64,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// λ̄(X̄_t), kept for Hermite interpolation of the states
    pub velocities: Vec<f64>,
    pub linearization: Vec<f64>,
    /// Dλ̄(X̄_t)
    pub jacobians: Vec<f64>,
}

fn rk4_step(drift: &dyn Drift1d, x: f64, phi: f64, h: f64) -> Result<(f64, f64)> {
    let f =
        |x: f64, p: f64| -> Result<(f64, f64)> { Ok((drift.value(x)?, drift.derivative(x)? * p)) };
    let (k1x, k1p) = f(x, phi)?;
    let (k2x, k2p) = f(x + 0.5 * h * k1x, phi + 0.5 * h * k1p)?;
    let (k3x, k3p) = f(x + 0.5 * h * k2x, phi + 0.5 * h * k2p)?;
    let (k4x, k4p) = f(x + h * k3x, phi + h * k3p)?;
    Ok((
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        phi + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    ))
}

/// Classical RK4 for `(X̄, Φ)` on a uniform grid covering `[0, horizon]`;
/// the step is shrunk so that the grid ends exactly at the horizon.
pub fn effective_flow(
    drift: &dyn Drift1d,
    x0: f64,
    horizon: f64,
    step: f64,
) -> Result<EffectiveTrajectory> {
    if !(horizon > 0.0 && step > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!(
            "flow needs positive horizon and step, got {horizon} and {step}"
        )));
    }
    let n = (horizon / step).ceil().max(1.0) as usize;
    let h = horizon / n as f64;
    let mut traj = EffectiveTrajectory {
        start: x0,
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        velocities: Vec::with_capacity(n + 1),
        linearization: Vec::with_capacity(n + 1),
        jacobians: Vec::with_capacity(n + 1),
    };
    let (mut x, mut phi) = (x0, 1.0);
    for k in 0..=n {
        traj.times.push(k as f64 * h);
        traj.states.push(x);
        traj.velocities.push(drift.value(x)?);
        traj.linearization.push(phi);
        traj.jacobians.push(drift.derivative(x)?);
        if k < n {
            (x, phi) = rk4_step(drift, x, phi, h)?;
        }
    }
    Ok(traj)
}

impl EffectiveTrajectory {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    pub fn step(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("time {t} outside [0, {horizon}]")));
        }
        let h = self.step();
        if h == 0.0 {
            return Ok((0, 0.0));
        }
        let s = (t / h).min((self.times.len() - 1) as f64);
        let k = (s.floor() as usize).min(self.times.len() - 2);
        Ok((k, s - k as f64))
    }

    /// `X̄_t` by cubic Hermite interpolation using the stored velocities.
    pub fn state_at(&self, t: f64) -> Result<f64> {
        let (k, s) = self.locate(t)?;
        if self.times.len() == 1 {
            return Ok(self.states[0]);
        }
        let h = self.step();
        Ok(hermite(
            s,
            h,
            self.states[k],
            self.velocities[k],
            self.states[k + 1],
            self.velocities[k + 1],
        ))
    }

    /// `Φ(t)` by cubic Hermite interpolation using `Φ′ = Dλ̄ Φ`.
    pub fn linearization_at(&self, t: f64) -> Result<f64> {
        let (k, s) = self.locate(t)?;
        if self.times.len() == 1 {
            return Ok(self.linearization[0]);
        }
        let h = self.step();
        let d = |i: usize| self.jacobians[i] * self.linearization[i];
        Ok(hermite(
            s,
            h,
            self.linearization[k],
            d(k),
            self.linearization[k + 1],
            d(k + 1),
        ))
    }
}

fn hermite(t: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

/// First crossing of the interval boundary by the flow: `(T, z, endpoint)`.
///
/// The bracketing step is located on the stored grid; the crossing inside it
/// is refined by bisection on the length of a single RK4 step from the
/// left grid point, which is the integrator's own dense output.
pub fn hitting_time_deterministic(
    traj: &EffectiveTrajectory,
    exit: &ExitProblemSpec,
    drift: &dyn Drift1d,
    transversality_floor: f64,
) -> Result<(f64, f64, Endpoint)> {
    exit.validate()?;
    exit.require_inside(traj.start)?;
    let n = traj.states.len();
    for k in 0..n.saturating_sub(1) {
        let Some(side) = exit.side(traj.states[k + 1]) else {
            continue;
        };
        let z = exit.boundary(side);
        let (x, phi) = (traj.states[k], traj.linearization[k]);
        let g = |s: f64| -> Result<f64> { Ok(rk4_step(drift, x, phi, s)?.0 - z) };
        let (mut lo, mut hi) = (0.0, traj.step());
        let g_lo = g(lo)?;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let gm = g(mid)?;
            if (gm > 0.0) == (g_lo > 0.0) && gm != 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = traj.times[k] + 0.5 * (lo + hi);
        let speed = drift.value(z)?;
        if !(speed.abs() > transversality_floor) {
            return Err(Error::Tangency {
                speed: speed.abs(),
                floor: transversality_floor,
            });
        }
        return Ok((t, z, side));
    }
    Err(Error::NoExit {
        horizon: traj.horizon(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: f64) -> FnDrift<impl Fn(f64) -> f64 + Sync, impl Fn(f64) -> f64 + Sync> {
        FnDrift {
            f: move |x: f64| a * x,
            df: move |_| a,
        }
    }

    #[test]
    fn zero_field_is_stationary() {
        let d = FnDrift {
            f: |_| 0.0,
            df: |_| 0.0,
        };
        let t = effective_flow(&d, 0.7, 1.0, 0.1).unwrap();
        assert!(t.states.iter().all(|x| *x == 0.7));
        assert!(t.linearization.iter().all(|p| *p == 1.0));
    }

    #[test]
    fn exponential_decay() {
        let t = effective_flow(&linear(-1.0), 1.0, 2.0, 1e-3).unwrap();
        assert_eq!(t.states[0], 1.0);
        assert_eq!(t.linearization[0], 1.0);
        for (s, (x, p)) in t.times.iter().zip(t.states.iter().zip(&t.linearization)) {
            assert!((x - (-s).exp()).abs() < 1e-8);
            assert!((p - (-s).exp()).abs() < 1e-8);
        }
        assert!((t.state_at(0.12345).unwrap() - (-0.12345f64).exp()).abs() < 1e-8);
        assert!((t.linearization_at(1.5555).unwrap() - (-1.5555f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn hitting_times() {
        let unit = FnDrift {
            f: |_| 1.0,
            df: |_| 0.0,
        };
        let t = effective_flow(&unit, 0.0, 3.0, 0.01).unwrap();
        let exit = ExitProblemSpec::new(f64::NEG_INFINITY, 1.0).unwrap();
        let (tt, z, side) = hitting_time_deterministic(&t, &exit, &unit, 1e-6).unwrap();
        assert!((tt - 1.0).abs() < 1e-12 && z == 1.0 && side == Endpoint::Upper);

        let decay = linear(-1.0);
        let t = effective_flow(&decay, 1.0, 3.0, 0.01).unwrap();
        let exit = ExitProblemSpec::new(0.5, 2.0).unwrap();
        let (tt, z, side) = hitting_time_deterministic(&t, &exit, &decay, 1e-6).unwrap();
        assert!((tt - std::f64::consts::LN_2).abs() < 1e-10);
        assert_eq!((z, side), (0.5, Endpoint::Lower));
    }

    #[test]
    fn hitting_errors() {
        let decay = linear(-1.0);
        let t = effective_flow(&decay, 1.0, 0.5, 0.01).unwrap();
        let exit = ExitProblemSpec::new(0.5, 2.0).unwrap();
        assert!(matches!(
            hitting_time_deterministic(&t, &exit, &decay, 1e-6),
            Err(Error::NoExit { .. })
        ));
        // crossing speed below the transversality floor
        let slow = FnDrift {
            f: |_| 1e-8,
            df: |_| 0.0,
        };
        let t = effective_flow(&slow, 0.0, 2e8, 1e6).unwrap();
        let exit = ExitProblemSpec::new(-1.0, 1.0).unwrap();
        assert!(matches!(
            hitting_time_deterministic(&t, &exit, &slow, 1e-6),
            Err(Error::Tangency { .. })
        ));
    }

    #[test]
    fn linearization_stays_positive() {
        let d = FnDrift {
            f: |x: f64| -x.powi(3) + x.sin(),
            df: |x: f64| -3.0 * x * x + x.cos(),
        };
        let t = effective_flow(&d, 2.0, 5.0, 1e-3).unwrap();
        assert!(t.linearization.iter().all(|p| *p > 0.0));
    }
}
