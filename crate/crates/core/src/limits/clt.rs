//! Monte Carlo check of the conditional exit-time CLT: conditioned paths are
//! simulated, `(τ − T(x₀))/√ε` is compared with the centred Gaussian of the
//! limiting variance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rough::{
    conditional_exit_stats, conditional_exit_stats_with, ConditionalExitStats, RoughPotentialSpec,
};
use crate::error::{Error, Result};
use crate::exit::{Endpoint, ExitRecord};
use crate::harness::stats::{ks_band, ks_statistic, normal_cdf, MomentSummary, Moments};
use crate::sde::{ConditionedDrift, ConditionedSimulator, PathEnd, Scheme, LANES};

/// Largest tolerated fraction of paths without an exit.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltSettings {
    pub n_paths: u64,
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub seed: u64,
    /// Index of the first path stream, for splitting an ensemble.
    #[serde(default)]
    pub first_path: u64,
    /// Paths are integrated up to this multiple of `T(x₀)`.
    #[serde(default = "default_horizon_factor")]
    pub horizon_factor: f64,
}

fn default_horizon_factor() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCltReport {
    pub epsilon: f64,
    /// `None` for the ripple-free profile.
    pub delta: Option<f64>,
    pub rare_endpoint: Endpoint,
    pub x_rare: f64,
    pub enhancement: f64,
    pub predicted_t: f64,
    pub predicted_variance: f64,
    pub n_paths: u64,
    pub n_exited: u64,
    pub n_rare: u64,
    pub n_failures: u64,
    /// `n_rare / n_exited`
    pub rare_fraction: f64,
    /// False when more than 1% of the paths failed to exit.
    pub valid: bool,
    pub summary: MomentSummary,
    pub ks: f64,
    pub ks_band: f64,
    /// Normalized samples `(τ − T)/√ε` in path order.
    #[serde(skip)]
    pub samples: Vec<f64>,
    #[serde(skip)]
    pub moments: Moments,
}

/// Exits of conditioned paths `first_path..first_path + n_paths`, in path
/// order (`None` for a path still inside at the horizon), together with the
/// limit prediction they are compared with. `delta = None` runs the
/// ripple-free dynamics and uses the enhancement-free prediction.
pub fn conditioned_exit_samples(
    rough: &RoughPotentialSpec,
    epsilon: f64,
    delta: Option<f64>,
    settings: &CltSettings,
) -> Result<(ConditionalExitStats, Vec<Option<ExitRecord>>)> {
    // without δ the ripple is dropped from the dynamics, so from the
    // prediction as well
    let stats = match delta {
        Some(_) => conditional_exit_stats(rough)?,
        None => conditional_exit_stats_with(rough, 1.0)?,
    };
    let drift = ConditionedDrift::new(rough, epsilon, delta)?;
    let sim = ConditionedSimulator::new(
        drift,
        settings.dt,
        settings.horizon_factor * stats.t,
        settings.scheme,
        settings.seed,
        u64::MAX,
    )?;
    let indices: Vec<u64> = (settings.first_path..settings.first_path + settings.n_paths).collect();
    let chunks: Vec<Vec<PathEnd>> = indices
        .par_chunks(LANES)
        .map(|chunk| {
            sim.run_ends(chunk).map_err(|e| {
                let path = match e {
                    Error::BlowUp { path, .. } => path,
                    _ => chunk[0],
                };
                e.in_ensemble(epsilon, path)
            })
        })
        .collect::<Result<_>>()?;
    let exits = chunks.into_iter().flatten().map(|p| p.exit).collect();
    Ok((stats, exits))
}

/// Simulate conditioned paths and compare `(τ − T(x₀))/√ε` with
/// `N(0, 2D e² ∫ dz/V′³)`. `delta = None` runs the ripple-free dynamics
/// and compares with the enhancement-free prediction.
pub fn conditional_exit_clt_check(
    rough: &RoughPotentialSpec,
    epsilon: f64,
    delta: Option<f64>,
    settings: &CltSettings,
) -> Result<ConditionalCltReport> {
    let (stats, exits) = conditioned_exit_samples(rough, epsilon, delta, settings)?;
    let scale = epsilon.sqrt();
    let mut samples = Vec::with_capacity(exits.len());
    let mut n_rare = 0;
    for e in exits.iter().flatten() {
        if e.endpoint == stats.rare_endpoint {
            n_rare += 1;
        }
        samples.push((e.tau - stats.t) / scale);
    }
    let n_exited = samples.len() as u64;
    let n_failures = settings.n_paths - n_exited;
    let moments = Moments::from_samples(&samples);
    let summary = moments.summary()?;
    let ks = ks_statistic(&samples, normal_cdf(0.0, stats.limit_variance))?;
    Ok(ConditionalCltReport {
        epsilon,
        delta,
        rare_endpoint: stats.rare_endpoint,
        x_rare: stats.x_rare,
        enhancement: stats.enhancement,
        predicted_t: stats.t,
        predicted_variance: stats.limit_variance,
        n_paths: settings.n_paths,
        n_exited,
        n_rare,
        n_failures,
        rare_fraction: n_rare as f64 / n_exited as f64,
        valid: (n_failures as f64) <= MAX_FAILURE_FRACTION * settings.n_paths as f64,
        summary,
        ks,
        ks_band: ks_band(samples.len()),
        samples,
        moments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exit::ExitProblemSpec;
    use crate::fields::Field;

    #[test]
    fn flat_clt_smoke() {
        let rough = RoughPotentialSpec {
            v: Field::poly(vec![0.0, 0.0, 0.5]),
            q: Field::zero(),
            d: 1.0,
            period: 1.0,
            interval: ExitProblemSpec::new(0.5, 2.0).unwrap(),
            x0: 1.0,
        };
        let settings = CltSettings {
            n_paths: 400,
            dt: 1e-4,
            scheme: Scheme::Heun,
            seed: 5,
            first_path: 0,
            horizon_factor: 4.0,
        };
        let r = conditional_exit_clt_check(&rough, 0.02, None, &settings).unwrap();
        assert!(r.valid);
        assert_eq!(r.n_rare, 400);
        assert!((r.predicted_variance - 0.75).abs() < 1e-12);
        // loose: 400 paths give the variance to about ±7%
        let rel = r.summary.variance / 0.75 - 1.0;
        assert!(rel.abs() < 0.35, "{}", r.summary.variance);
    }
}
