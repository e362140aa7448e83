//! Experiment configuration: one JSON document with a `kind` discriminator.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exit::ExitProblemSpec;
use crate::fields::{ext_f64, Field};
use crate::homogenize::{DeltaSchedule, HomogenizationSettings, PeriodicCoefficientSet};
use crate::limits::RoughPotentialSpec;
use crate::sde::{Scheme, XiDistribution, DEFAULT_STEP_BUDGET};

/// Smallest ensemble for which statistical checks are evaluated.
pub const MIN_STATISTICAL_PATHS: u64 = 100;

/// Coefficients given either as a Langevin potential pair or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSpec {
    /// `b = −Q′(y)`, `c = −V′(x)`, `σ = √(2D)` in the diffusive regime.
    Langevin {
        v: Field,
        q: Field,
        d: f64,
        #[serde(default = "one")]
        period: f64,
    },
    General(PeriodicCoefficientSet),
}

fn one() -> f64 {
    1.0
}

impl CoefficientSpec {
    pub fn coefficients(&self) -> PeriodicCoefficientSet {
        match self {
            CoefficientSpec::Langevin { v, q, d, period } => {
                PeriodicCoefficientSet::langevin(v, q, *d, *period)
            }
            CoefficientSpec::General(c) => c.clone(),
        }
    }
}

/// Time step of the simulated paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum DtPolicy {
    Explicit {
        dt: f64,
    },
    /// `dt = fast_step · δ²/ε`.
    Auto {
        fast_step: f64,
    },
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy::Auto { fast_step: 0.01 }
    }
}

impl DtPolicy {
    pub fn resolve(&self, epsilon: f64, delta: Option<f64>) -> Result<f64> {
        let dt = match (*self, delta) {
            (DtPolicy::Explicit { dt }, _) => dt,
            (DtPolicy::Auto { fast_step }, Some(d)) => fast_step * d * d / epsilon,
            (DtPolicy::Auto { .. }, None) => {
                return Err(Error::Config(
                    "automatic dt needs a fast scale; give an explicit dt".into(),
                ))
            }
        };
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        Ok(dt)
    }
}

/// Statistical acceptance thresholds of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatChecks {
    /// `|Var_emp − Var_pred| ≤ tol · Var_pred`.
    #[serde(default)]
    pub variance_rel_tol: Option<f64>,
    /// `|mean_emp − mean_pred| ≤ k · SE + mean_abs_tol`.
    #[serde(default)]
    pub mean_se_factor: Option<f64>,
    #[serde(default)]
    pub mean_abs_tol: f64,
    /// `KS ≤ k · 1.63/√N`.
    #[serde(default)]
    pub ks_factor: Option<f64>,
    /// Minimal fraction of exits at the rare endpoint (conditioned runs).
    #[serde(default)]
    pub rare_fraction_min: Option<f64>,
}

impl Default for StatChecks {
    fn default() -> Self {
        Self::standard(0.1)
    }
}

impl StatChecks {
    pub fn standard(variance_rel_tol: f64) -> Self {
        Self {
            variance_rel_tol: Some(variance_rel_tol),
            mean_se_factor: Some(3.0),
            mean_abs_tol: 0.0,
            ks_factor: Some(1.0),
            rare_fraction_min: None,
        }
    }
}

fn default_scheme() -> Scheme {
    Scheme::Heun
}

fn inf() -> f64 {
    f64::INFINITY
}

fn default_flow_step() -> f64 {
    1e-3
}

fn default_budget() -> u64 {
    DEFAULT_STEP_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizeExperiment {
    pub coefficients: CoefficientSpec,
    pub homogenization: HomogenizationSettings,
    /// For Langevin coefficients: bound on the relative deviation of λ̄ from
    /// the Gibbs closed form `−ρ²V′/(K K̂)`.
    #[serde(default)]
    pub closed_form_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationExperiment {
    pub coefficients: CoefficientSpec,
    pub schedule: DeltaSchedule,
    #[serde(with = "ext_f64", default = "inf")]
    pub a1: f64,
    #[serde(with = "ext_f64", default = "inf")]
    pub a2: f64,
    pub x0: f64,
    #[serde(default)]
    pub xi: XiDistribution,
    pub horizon: f64,
    pub epsilons: Vec<f64>,
    pub n_paths: u64,
    #[serde(default)]
    pub first_path: u64,
    #[serde(default)]
    pub dt: DtPolicy,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_budget")]
    pub step_budget: u64,
    pub homogenization: HomogenizationSettings,
    #[serde(default = "default_flow_step")]
    pub flow_step: f64,
    #[serde(default)]
    pub checks: StatChecks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitExperiment {
    pub coefficients: CoefficientSpec,
    pub schedule: DeltaSchedule,
    #[serde(with = "ext_f64", default = "inf")]
    pub a1: f64,
    #[serde(with = "ext_f64", default = "inf")]
    pub a2: f64,
    pub x0: f64,
    #[serde(default)]
    pub xi: XiDistribution,
    pub interval: ExitProblemSpec,
    /// Horizon of both the effective flow and the simulated paths.
    pub horizon: f64,
    pub epsilons: Vec<f64>,
    pub n_paths: u64,
    #[serde(default)]
    pub first_path: u64,
    #[serde(default)]
    pub dt: DtPolicy,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_budget")]
    pub step_budget: u64,
    pub homogenization: HomogenizationSettings,
    #[serde(default = "default_flow_step")]
    pub flow_step: f64,
    #[serde(default)]
    pub checks: StatChecks,
}

/// Choice of δ for each ε of a conditioned sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DeltaRule {
    /// Ripple removed from the dynamics (δ irrelevant).
    Flat,
    Fixed {
        delta: f64,
    },
    /// `δ = min(ε^power, cap)`.
    Sweep {
        power: f64,
        cap: f64,
    },
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::Sweep {
            power: 3.0,
            cap: 1e-4,
        }
    }
}

impl DeltaRule {
    pub fn delta(&self, epsilon: f64) -> Option<f64> {
        match *self {
            DeltaRule::Flat => None,
            DeltaRule::Fixed { delta } => Some(delta),
            DeltaRule::Sweep { power, cap } => Some(epsilon.powf(power).min(cap)),
        }
    }
}

fn default_horizon_factor() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalExitExperiment {
    pub rough: RoughPotentialSpec,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub delta: DeltaRule,
    pub n_paths: u64,
    #[serde(default)]
    pub first_path: u64,
    #[serde(default)]
    pub dt: DtPolicy,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_horizon_factor")]
    pub horizon_factor: f64,
    #[serde(default)]
    pub checks: StatChecks,
}

fn default_grid_points() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpeedExperiment {
    pub rough: RoughPotentialSpec,
    pub epsilon: f64,
    /// Decreasing δ values compared against the δ → 0 limit.
    pub deltas: Vec<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Homogenize(HomogenizeExperiment),
    Fluctuation(FluctuationExperiment),
    Exit(ExitExperiment),
    ConditionalExit(ConditionalExitExperiment),
    ScaleSpeed(ScaleSpeedExperiment),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Homogenize(_) => "homogenize",
            Experiment::Fluctuation(_) => "fluctuation",
            Experiment::Exit(_) => "exit",
            Experiment::ConditionalExit(_) => "conditional_exit",
            Experiment::ScaleSpeed(_) => "scale_speed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn check_sweep(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::Config("epsilon sweep is empty".into()));
    }
    if epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::Config("every epsilon must lie in (0, 1)".into()));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config(
            "epsilon sweep must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

fn check_paths(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("n_paths must be positive".into()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.experiment {
            Experiment::Homogenize(_) => Ok(()),
            Experiment::Fluctuation(f) => {
                check_sweep(&f.epsilons)?;
                check_paths(f.n_paths)
            }
            Experiment::Exit(e) => {
                check_sweep(&e.epsilons)?;
                e.interval.validate()?;
                check_paths(e.n_paths)
            }
            Experiment::ConditionalExit(c) => {
                check_sweep(&c.epsilons)?;
                c.rough.validate()?;
                check_paths(c.n_paths)
            }
            Experiment::ScaleSpeed(s) => {
                s.rough.validate()?;
                if s.deltas.windows(2).any(|w| !(w[1] < w[0])) {
                    return Err(Error::Config(
                        "delta sweep must be strictly decreasing".into(),
                    ));
                }
                if s.grid_points < 2 {
                    return Err(Error::Config("scale-speed grid needs >= 2 points".into()));
                }
                Ok(())
            }
        }
    }

    /// The path range `[first, first + n)` of a statistical experiment.
    pub fn path_range(&self) -> Option<(u64, u64)> {
        match &self.experiment {
            Experiment::Fluctuation(f) => Some((f.first_path, f.n_paths)),
            Experiment::Exit(e) => Some((e.first_path, e.n_paths)),
            Experiment::ConditionalExit(c) => Some((c.first_path, c.n_paths)),
            _ => None,
        }
    }

    /// Restrict a statistical experiment to `n` paths starting at `first`.
    pub fn with_path_range(&self, first: u64, n: u64) -> Self {
        let mut c = self.clone();
        match &mut c.experiment {
            Experiment::Fluctuation(f) => (f.first_path, f.n_paths) = (first, n),
            Experiment::Exit(e) => (e.first_path, e.n_paths) = (first, n),
            Experiment::ConditionalExit(x) => (x.first_path, x.n_paths) = (first, n),
            _ => {}
        }
        c
    }

    /// SHA-256 of the canonical JSON of the configuration with the master
    /// seed, the path range and the output location removed, so that runs
    /// over different seeds or path ranges of one experiment share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.with_path_range(0, 0);
        c.master_seed = 0;
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("configurations always serialize");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLUCT: &str = r#"{
        "kind": "fluctuation",
        "coefficients": {"langevin": {
            "v": {"type": "poly", "coeffs": [0, 0, 0.5]},
            "q": {"type": "trig", "cos": [1]},
            "d": 0.5
        }},
        "schedule": {"type": "power", "exponent": 2},
        "x0": 1.0,
        "horizon": 1.0,
        "epsilons": [0.1, 0.05],
        "n_paths": 200,
        "homogenization": {"x_min": 0.0, "x_max": 1.5},
        "master_seed": 11
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_json(FLUCT).unwrap();
        assert_eq!(c.experiment.kind(), "fluctuation");
        assert_eq!(c.master_seed, 11);
        let again: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
        let Experiment::Fluctuation(f) = &c.experiment else {
            panic!()
        };
        assert!(f.a1.is_infinite());
        assert_eq!(f.dt, DtPolicy::Auto { fast_step: 0.01 });
        assert_eq!(f.scheme, Scheme::Heun);
    }

    #[test]
    fn hash_ignores_seed_and_path_range() {
        let c = ExperimentConfig::from_json(FLUCT).unwrap();
        let mut d = c.with_path_range(100, 100);
        d.master_seed = 99;
        assert_eq!(c.hash(), d.hash());
        assert_eq!(c.hash().len(), 64);
        let mut e = c.clone();
        if let Experiment::Fluctuation(f) = &mut e.experiment {
            f.horizon = 2.0;
        }
        assert_ne!(c.hash(), e.hash());
    }

    #[test]
    fn rejects_bad_sweeps() {
        let bad = FLUCT.replace("[0.1, 0.05]", "[0.05, 0.1]");
        assert!(matches!(
            ExperimentConfig::from_json(&bad),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json("{"),
            Err(Error::Json(_))
        ));
        let unknown = FLUCT.replace("\"fluctuation\"", "\"nonsense\"");
        assert!(ExperimentConfig::from_json(&unknown).is_err());
    }

    #[test]
    fn dt_policies() {
        assert_eq!(
            DtPolicy::Explicit { dt: 1e-3 }.resolve(0.1, None).unwrap(),
            1e-3
        );
        let auto = DtPolicy::Auto { fast_step: 0.1 };
        assert!((auto.resolve(0.01, Some(1e-2)).unwrap() - 1e-3).abs() < 1e-18);
        assert!(auto.resolve(0.01, None).is_err());
        assert_eq!(DeltaRule::default().delta(0.1), Some(1e-4));
        assert!((DeltaRule::default().delta(0.01).unwrap() - 1e-6).abs() < 1e-20);
    }
}
