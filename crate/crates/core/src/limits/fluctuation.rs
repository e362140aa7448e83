//! The limiting fluctuation process
//! `dη̄ = [Dλ̄(X̄)η̄ + κ J̄(X̄) + 1_Ψ Ψ̄(X̄)] dt + 1_W q̄(X̄)^{1/2} dW`,
//! `η̄₀ = 1_ξ ξ⁰`, with `κ = ℓ⁻¹` for `ℓ ∈ (0, ∞]` and `κ = 1` for `ℓ = 0`,
//! and the projection of `η̄_T` onto the exit time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenize::{AveragedField, EffectiveTrajectory, RegimeClassification};
use crate::quad::{simpson_uniform, GaussLegendre};
use crate::sde::{NormalStream, XiDistribution};

/// Averaged coefficients with affine `λ̄(x) = λ₀ + λ₁x` and constant `q̄, J̄,
/// Ψ̄`; closed-form benchmarks and tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineAverages {
    pub lambda0: f64,
    pub lambda1: f64,
    pub q: f64,
    pub j: f64,
    pub psi: f64,
}

impl AveragedField for AffineAverages {
    fn lambda_bar(&self, x: f64) -> Result<f64> {
        Ok(self.lambda0 + self.lambda1 * x)
    }

    fn d_lambda_bar(&self, _x: f64) -> Result<f64> {
        Ok(self.lambda1)
    }

    fn q_bar(&self, _x: f64) -> Result<f64> {
        Ok(self.q)
    }

    fn j_bar(&self, _x: f64) -> Result<f64> {
        Ok(self.j)
    }

    fn psi_bar(&self, _x: f64) -> Result<f64> {
        Ok(self.psi)
    }
}

/// Inputs of the limit process.
pub struct LimitProcessSpec<'a> {
    pub model: &'a dyn AveragedField,
    pub regime: RegimeClassification,
    pub traj: EffectiveTrajectory,
    pub xi0: XiDistribution,
}

/// Relative tolerance for "the trajectory was generated by this model".
const CONSISTENCY_TOL: f64 = 1e-8;

impl<'a> LimitProcessSpec<'a> {
    pub fn new(
        model: &'a dyn AveragedField,
        regime: RegimeClassification,
        traj: EffectiveTrajectory,
        xi0: XiDistribution,
    ) -> Result<Self> {
        for (x, v) in traj.states.iter().zip(&traj.velocities) {
            let l = model.lambda_bar(*x)?;
            if (l - v).abs() > CONSISTENCY_TOL * (1.0 + l.abs()) {
                return Err(Error::Config(format!(
                    "trajectory does not follow the model drift at x = {x}: {v} vs {l}"
                )));
            }
        }
        Ok(Self {
            model,
            regime,
            traj,
            xi0,
        })
    }

    fn j_coefficient(&self) -> f64 {
        if self.regime.active_terms.j_drift {
            self.regime.j_coefficient
        } else {
            0.0
        }
    }

    /// `∫₀ᵗ g(s) ds` for `g` given at arbitrary times: Simpson on the
    /// trajectory nodes, Gauss–Legendre on the trailing partial step.
    fn integrate(&self, t: f64, g: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        let h = self.traj.step();
        let n_full = if h > 0.0 {
            ((t / h).floor() as usize).min(self.traj.times.len() - 1)
        } else {
            0
        };
        let nodes: Vec<f64> = (0..=n_full)
            .map(|k| g(self.traj.times[k]))
            .collect::<Result<_>>()?;
        let mut total = simpson_uniform(&nodes, h);
        let t0 = self.traj.times[n_full];
        if t > t0 {
            let gl = GaussLegendre::new(4);
            let mut tail = 0.0;
            for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                tail += w * g(t0 + 0.5 * (t - t0) * (1.0 + x))?;
            }
            total += 0.5 * (t - t0) * tail;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of `η̄_t`:
/// mean `= κ H(t) + 1_Ψ Φ(t)∫₀ᵗΦ⁻¹Ψ̄ + 1_ξ Φ(t) E ξ⁰` with `H(t) = Φ(t)∫₀ᵗΦ⁻¹J̄`,
/// variance `= 1_W Φ(t)²∫₀ᵗΦ⁻²q̄ + 1_ξ Φ(t)² Var ξ⁰`.
pub fn limit_fluctuation_moments(spec: &LimitProcessSpec, t: f64) -> Result<FluctuationMoments> {
    let traj = &spec.traj;
    let phi_t = traj.linearization_at(t)?;
    let active = spec.regime.active_terms;
    let at = |s: f64| -> Result<(f64, f64)> { Ok((traj.linearization_at(s)?, traj.state_at(s)?)) };
    let mut mean = 0.0;
    let kappa = spec.j_coefficient();
    if kappa != 0.0 {
        let i = spec.integrate(t, |s| {
            let (p, x) = at(s)?;
            Ok(spec.model.j_bar(x)? / p)
        })?;
        mean += kappa * phi_t * i;
    }
    if active.psi_drift {
        let i = spec.integrate(t, |s| {
            let (p, x) = at(s)?;
            Ok(spec.model.psi_bar(x)? / p)
        })?;
        mean += phi_t * i;
    }
    let mut variance = 0.0;
    if active.initial_perturbation {
        mean += phi_t * spec.xi0.mean();
        variance += phi_t * phi_t * spec.xi0.variance();
    }
    if active.noise {
        let i = spec.integrate(t, |s| {
            let (p, x) = at(s)?;
            Ok(spec.model.q_bar(x)? / (p * p))
        })?;
        variance += phi_t * phi_t * i;
    }
    Ok(FluctuationMoments { mean, variance })
}

/// Terminal samples `η̄_{t_end}` by the Euler scheme on the trajectory
/// grid; sample `i` uses stream `i` of `seed`.
pub fn simulate_limit_ou(
    spec: &LimitProcessSpec,
    t_end: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let traj = &spec.traj;
    if !(t_end >= 0.0 && t_end <= traj.horizon() * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!(
            "t_end = {t_end} outside [0, {}]",
            traj.horizon()
        )));
    }
    let active = spec.regime.active_terms;
    let kappa = spec.j_coefficient();
    let h = traj.step();
    let n_full = if h > 0.0 {
        ((t_end / h).floor() as usize).min(traj.times.len() - 1)
    } else {
        0
    };
    // drift offsets and noise amplitudes at the left end of each step
    let mut times: Vec<f64> = traj.times[..=n_full].to_vec();
    if t_end > times[n_full] * (1.0 + 1e-15) + 1e-300 {
        times.push(t_end);
    }
    let mut jac = Vec::with_capacity(times.len());
    let mut offset = Vec::with_capacity(times.len());
    let mut noise = Vec::with_capacity(times.len());
    for &s in &times {
        let x = traj.state_at(s)?;
        jac.push(spec.model.d_lambda_bar(x)?);
        let mut o = 0.0;
        if kappa != 0.0 {
            o += kappa * spec.model.j_bar(x)?;
        }
        if active.psi_drift {
            o += spec.model.psi_bar(x)?;
        }
        offset.push(o);
        noise.push(if active.noise {
            spec.model.q_bar(x)?.max(0.0).sqrt()
        } else {
            0.0
        });
    }
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut normals = NormalStream::new(seed, i);
            let mut eta = if active.initial_perturbation {
                spec.xi0.sample(&mut normals)
            } else {
                0.0
            };
            for k in 0..times.len() - 1 {
                let dt = times[k + 1] - times[k];
                let dw = if noise[k] != 0.0 {
                    dt.sqrt() * normals.next()
                } else {
                    0.0
                };
                eta += (jac[k] * eta + offset[k]) * dt + noise[k] * dw;
            }
            eta
        })
        .collect();
    Ok(samples)
}

/// Law of `η̄_T` handed to the exit projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EtaLaw {
    Moments { mean: f64, variance: f64 },
    Samples { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitLawPrediction {
    /// Deterministic exit time.
    pub t: f64,
    /// Exit point.
    pub z: f64,
    /// `λ̄(z)`
    pub exit_speed: f64,
    /// Mean of the time correction `−η̄_T/λ̄(z)`, signed.
    pub mean_shift: f64,
    /// `Var(η̄_T)/λ̄(z)²`
    pub time_correction_var: f64,
    /// The exit-location correction, identically zero in one dimension.
    pub location_correction: f64,
    /// `−v/λ̄(z)` for every sample `v` when samples were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_correction_samples: Option<Vec<f64>>,
}

/// Limit law of `(τ − T)/β`: in one dimension the projection along the flow
/// is `v ↦ v/λ̄(z)` and the transverse projection vanishes, so
/// `(τ − T)/β → −η̄_T/λ̄(z)` and the exit location has no correction.
pub fn exit_law_projection(
    spec: &LimitProcessSpec,
    t: f64,
    z: f64,
    eta_t: &EtaLaw,
    transversality_floor: f64,
) -> Result<ExitLawPrediction> {
    if spec.regime.ell.is_infinite() {
        return Err(Error::UnsupportedRegime(
            "the exit-time law needs a finite l = lim eps^m/theta; with l = inf only the \
             fluctuation CLT applies"
                .into(),
        ));
    }
    if spec.regime.zeta.is_none() {
        return Err(Error::UnsupportedRegime(
            "the exit-time law needs theta = eps^zeta".into(),
        ));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "exit time must be positive, got {t}"
        )));
    }
    let speed = spec.model.lambda_bar(z)?;
    if !(speed.abs() > transversality_floor) {
        return Err(Error::Tangency {
            speed: speed.abs(),
            floor: transversality_floor,
        });
    }
    let (mean, variance, samples) = match eta_t {
        EtaLaw::Moments { mean, variance } => (*mean, *variance, None),
        EtaLaw::Samples { values } => {
            let n = values.len() as f64;
            let m = values.iter().sum::<f64>() / n;
            let v = if values.len() > 1 {
                values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (m, v, Some(values.iter().map(|v| -v / speed).collect()))
        }
    };
    Ok(ExitLawPrediction {
        t,
        z,
        exit_speed: speed,
        mean_shift: -mean / speed,
        time_correction_var: variance / (speed * speed),
        location_correction: 0.0,
        time_correction_samples: samples,
    })
}
