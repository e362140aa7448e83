//! Running a configured experiment end to end.
//!
//! Every ε of a sweep gets its own seed derived from the master seed, and
//! path `i` always draws from stream `i` of that seed, so an ensemble split
//! into adjacent path ranges reproduces the single run exactly.

use std::time::Instant;

use rayon::prelude::*;

use super::config::{
    CoefficientSpec, ConditionalExitExperiment, DtPolicy, ExitExperiment, Experiment,
    ExperimentConfig, FluctuationExperiment, HomogenizeExperiment, ScaleSpeedExperiment,
    StatChecks,
};
use super::report::{
    Check, CheckCategory, EndpointTallies, EnsembleReport, EpsilonBlock, Prediction, Table,
};
use super::stats::Moments;
use crate::error::{Error, Result};
use crate::exit::{Endpoint, ExitProblemSpec, ExitRecord};
use crate::homogenize::{
    classify_regime, effective_flow, hitting_time_deterministic, HomogenizedModel,
    PeriodicCoefficientSet, RegimeClassification,
};
use crate::limits::{
    conditioned_exit_samples, exit_law_projection, gibbs_constants, limit_fluctuation_moments,
    CltSettings, EtaLaw, LimitProcessSpec, RoughPotentialSpec,
};
use crate::sde::{
    scale_speed_functions, PathEnd, SimulationSpec, Simulator, DEFAULT_RESOLUTION_FACTOR, LANES,
};

/// Increment between the seeds of consecutive ε (the 64-bit golden ratio).
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of the `index`-th ε of a sweep.
pub fn derived_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add(SEED_STRIDE.wrapping_mul(index as u64))
}

/// Run the experiment described by `config`.
pub fn run_ensemble(config: &ExperimentConfig) -> Result<EnsembleReport> {
    config.validate()?;
    let start = Instant::now();
    let mut report = EnsembleReport {
        kind: config.experiment.kind().to_string(),
        config_hash: config.hash(),
        master_seed: config.master_seed,
        criteria: None,
        blocks: vec![],
        checks: vec![],
        values: vec![],
        notes: vec![],
        table: None,
        wall_time_seconds: 0.0,
        model: None,
    };
    match &config.experiment {
        Experiment::Homogenize(h) => run_homogenize(h, &mut report)?,
        Experiment::Fluctuation(f) => run_fluctuation(f, config.master_seed, &mut report)?,
        Experiment::Exit(e) => run_exit(e, config.master_seed, &mut report)?,
        Experiment::ConditionalExit(c) => run_conditional(c, config.master_seed, &mut report)?,
        Experiment::ScaleSpeed(s) => run_scale_speed(s, &mut report)?,
    }
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Worst value of every torus-solve diagnostic over the x-grid.
fn model_checks(model: &HomogenizedModel) -> Vec<Check> {
    let tol = model.settings.tolerances;
    let inv = CheckCategory::Invariant;
    let reports: Vec<_> = model.snapshots.iter().map(|s| s.report).collect();
    let worst = |f: &dyn Fn(&crate::homogenize::CellReport) -> Option<f64>| {
        reports
            .iter()
            .filter_map(|r| f(r).map(f64::abs))
            .reduce(|a, b| {
                if a.is_nan() || b.is_nan() {
                    f64::NAN
                } else {
                    a.max(b)
                }
            })
    };
    let mut checks = Vec::new();
    let mut push = |name: &str, v: Option<f64>, t: f64| {
        if let Some(v) = v {
            checks.push(Check::at_most(name, inv, v, t));
        }
    };
    push(
        "max centering residual",
        worst(&|r| r.centering_residual),
        tol.centering,
    );
    push(
        "max cell residual",
        worst(&|r| r.chi_residual),
        tol.residual,
    );
    push("max cell mu-mean", worst(&|r| r.chi_mu_mean), tol.mu_mean);
    push(
        "max auxiliary residual",
        worst(&|r| Some(r.xi_residual)),
        tol.residual,
    );
    push(
        "max auxiliary mu-mean",
        worst(&|r| Some(r.xi_mu_mean)),
        tol.mu_mean,
    );
    push(
        "max density normalization error",
        worst(&|r| Some(r.normalization_error)),
        tol.normalization,
    );
    let min_density = reports
        .iter()
        .map(|r| r.min_density)
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least(
        "min invariant density",
        inv,
        min_density,
        0.0,
    ));
    checks
}

fn build_model(
    spec: &CoefficientSpec,
    settings: &crate::homogenize::HomogenizationSettings,
) -> Result<(PeriodicCoefficientSet, HomogenizedModel)> {
    let coeffs = spec.coefficients();
    let model = HomogenizedModel::build(&coeffs, coeffs.regime_index(), settings)?;
    Ok((coeffs, model))
}

fn run_homogenize(h: &HomogenizeExperiment, report: &mut EnsembleReport) -> Result<()> {
    let (_, model) = build_model(&h.coefficients, &h.homogenization)?;
    report.checks = model_checks(&model);
    if let CoefficientSpec::Langevin { v, q, d, period } = &h.coefficients {
        let s = &h.homogenization;
        let rough = RoughPotentialSpec {
            v: v.clone(),
            q: q.clone(),
            d: *d,
            period: *period,
            interval: ExitProblemSpec::new(s.x_min, s.x_max)?,
            x0: s.x_min,
        };
        let g = gibbs_constants(&rough, 4096)?;
        report.values.push(("K".into(), g.k));
        report.values.push(("K_hat".into(), g.k_hat));
        report.values.push(("enhancement".into(), g.enhancement));
        if let Some(tol) = h.closed_form_tol {
            // λ̄ = −ρ²V′/(K K̂) and q̄ = 2Dρ²/(K K̂); deviations relative to
            // the sup norm of the closed form
            let dv = v.derivative_x();
            let scale = period * period / (g.k * g.k_hat);
            let mut lam = (0.0f64, 0.0f64);
            let mut qb = (0.0f64, 0.0f64);
            for snap in &model.snapshots {
                let want_l = -scale * dv.eval(snap.x, 0.0);
                let want_q = 2.0 * d * scale;
                lam.0 = lam.0.max((snap.averages.lambda_bar - want_l).abs());
                lam.1 = lam.1.max(want_l.abs());
                qb.0 = qb.0.max((snap.averages.q_bar - want_q).abs());
                qb.1 = qb.1.max(want_q.abs());
            }
            let inv = CheckCategory::Invariant;
            let rel = |(dev, sup): (f64, f64)| if sup > 0.0 { dev / sup } else { dev };
            report.checks.push(Check::at_most(
                "lambda_bar vs Gibbs closed form",
                inv,
                rel(lam),
                tol,
            ));
            report.checks.push(Check::at_most(
                "q_bar vs Gibbs closed form",
                inv,
                rel(qb),
                tol,
            ));
        }
    }
    let violations = model.violations();
    if !violations.is_empty() {
        report.notes.extend(violations);
    }
    report.model = Some(model.document());
    Ok(())
}

/// Everything the fluctuation and exit pipelines share for one ε.
struct EpsilonSetup {
    regime: RegimeClassification,
    simulator: Simulator,
    seed: u64,
}

fn setup_epsilon(
    coeffs: &PeriodicCoefficientSet,
    f: &SweepCommon,
    epsilon: f64,
    index: usize,
    master_seed: u64,
) -> Result<EpsilonSetup> {
    let regime = classify_regime(epsilon, f.schedule, coeffs.gamma, f.a1, f.a2)?;
    let dt = f.dt.resolve(epsilon, Some(regime.delta))?;
    let seed = derived_seed(master_seed, index);
    let spec = SimulationSpec {
        coeffs: coeffs.clone(),
        regime: regime.clone(),
        x0: f.x0,
        xi: f.xi,
        dt,
        horizon: f.horizon,
        seed,
        scheme: f.scheme,
        resolution_factor: DEFAULT_RESOLUTION_FACTOR,
        step_budget: f.step_budget,
    };
    Ok(EpsilonSetup {
        regime,
        simulator: Simulator::new(&spec)?,
        seed,
    })
}

/// Fields common to the fluctuation and exit experiments.
struct SweepCommon {
    schedule: crate::homogenize::DeltaSchedule,
    a1: f64,
    a2: f64,
    x0: f64,
    xi: crate::sde::XiDistribution,
    horizon: f64,
    dt: DtPolicy,
    scheme: crate::sde::Scheme,
    step_budget: u64,
}

fn new_block(
    setup: &EpsilonSetup,
    first_path: u64,
    n_paths: u64,
    prediction: Prediction,
) -> EpsilonBlock {
    EpsilonBlock {
        epsilon: setup.regime.epsilon,
        delta: Some(setup.regime.delta),
        beta: setup.regime.beta,
        dt: setup.simulator.dt(),
        seed: setup.seed,
        first_path,
        n_paths,
        prediction,
        summary: None,
        ks: None,
        ks_band: 0.0,
        tallies: EndpointTallies::default(),
        checks: vec![],
        samples: vec![],
        moments: Moments::new(),
    }
}

fn run_fluctuation(
    f: &FluctuationExperiment,
    master_seed: u64,
    report: &mut EnsembleReport,
) -> Result<()> {
    let (coeffs, model) = build_model(&f.coefficients, &f.homogenization)?;
    report.checks = model_checks(&model);
    report.criteria = Some(f.checks);
    let common = SweepCommon {
        schedule: f.schedule,
        a1: f.a1,
        a2: f.a2,
        x0: f.x0,
        xi: f.xi,
        horizon: f.horizon,
        dt: f.dt,
        scheme: f.scheme,
        step_budget: f.step_budget,
    };
    let traj = effective_flow(&model, f.x0, f.horizon, f.flow_step)?;
    let x_bar = *traj.states.last().expect("flows hold at least one state");
    for (index, &epsilon) in f.epsilons.iter().enumerate() {
        let setup = setup_epsilon(&coeffs, &common, epsilon, index, master_seed)?;
        let spec = LimitProcessSpec::new(&model, setup.regime.clone(), traj.clone(), f.xi)?;
        let moments = limit_fluctuation_moments(&spec, f.horizon)?;
        let prediction = Prediction {
            mean: moments.mean,
            variance: moments.variance,
            exit_time: None,
            exit_point: None,
        };
        let beta = setup.regime.beta;
        let sim = &setup.simulator;
        let samples: Vec<f64> = simulate_ends(sim, f.first_path, f.n_paths, None, epsilon)?
            .iter()
            .map(|p| (p.state - x_bar) / beta)
            .collect();
        let mut block = new_block(&setup, f.first_path, f.n_paths, prediction);
        block.samples = samples;
        block.evaluate(&f.checks);
        report.blocks.push(block);
    }
    report.model = Some(model.document());
    Ok(())
}

/// End states of paths `first..first + n`, advanced `LANES` at a time.
fn simulate_ends(
    sim: &Simulator,
    first: u64,
    n: u64,
    exit: Option<&ExitProblemSpec>,
    epsilon: f64,
) -> Result<Vec<PathEnd>> {
    let indices: Vec<u64> = (first..first + n).collect();
    let chunks: Vec<Vec<PathEnd>> = indices
        .par_chunks(LANES)
        .map(|chunk| {
            sim.run_ends(chunk, exit).map_err(|e| {
                let path = match e {
                    Error::BlowUp { path, .. } => path,
                    _ => chunk[0],
                };
                e.in_ensemble(epsilon, path)
            })
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Tally exits by endpoint and normalize the exit times.
fn tally_exits(exits: &[Option<ExitRecord>], t: f64, beta: f64) -> (EndpointTallies, Vec<f64>) {
    let mut tallies = EndpointTallies::default();
    let mut samples = Vec::with_capacity(exits.len());
    for e in exits {
        match e {
            None => tallies.no_exit += 1,
            Some(r) => {
                match r.endpoint {
                    Endpoint::Lower => tallies.lower += 1,
                    Endpoint::Upper => tallies.upper += 1,
                }
                samples.push((r.tau - t) / beta);
            }
        }
    }
    (tallies, samples)
}

fn run_exit(e: &ExitExperiment, master_seed: u64, report: &mut EnsembleReport) -> Result<()> {
    let (coeffs, model) = build_model(&e.coefficients, &e.homogenization)?;
    report.checks = model_checks(&model);
    report.criteria = Some(e.checks);
    let floor = model.settings.tolerances.transversality_floor;
    let common = SweepCommon {
        schedule: e.schedule,
        a1: e.a1,
        a2: e.a2,
        x0: e.x0,
        xi: e.xi,
        horizon: e.horizon,
        dt: e.dt,
        scheme: e.scheme,
        step_budget: e.step_budget,
    };
    let traj = effective_flow(&model, e.x0, e.horizon, e.flow_step)?;
    let (t, z, side) = hitting_time_deterministic(&traj, &e.interval, &model, floor)?;
    report.values.push(("deterministic exit time".into(), t));
    report.values.push(("exit point".into(), z));
    report.notes.push(format!(
        "the effective flow leaves through the {side} endpoint"
    ));
    for (index, &epsilon) in e.epsilons.iter().enumerate() {
        let setup = setup_epsilon(&coeffs, &common, epsilon, index, master_seed)?;
        let spec = LimitProcessSpec::new(&model, setup.regime.clone(), traj.clone(), e.xi)?;
        let m = limit_fluctuation_moments(&spec, t)?;
        let law = EtaLaw::Moments {
            mean: m.mean,
            variance: m.variance,
        };
        let p = exit_law_projection(&spec, t, z, &law, floor)?;
        let prediction = Prediction {
            mean: p.mean_shift,
            variance: p.time_correction_var,
            exit_time: Some(t),
            exit_point: Some(z),
        };
        let sim = &setup.simulator;
        let exits: Vec<Option<ExitRecord>> =
            simulate_ends(sim, e.first_path, e.n_paths, Some(&e.interval), epsilon)?
                .iter()
                .map(|p| p.exit)
                .collect();
        let (tallies, samples) = tally_exits(&exits, t, setup.regime.beta);
        let mut block = new_block(&setup, e.first_path, e.n_paths, prediction);
        block.tallies = tallies;
        block.samples = samples;
        block.evaluate(&e.checks);
        report.blocks.push(block);
    }
    report.model = Some(model.document());
    Ok(())
}

fn run_conditional(
    c: &ConditionalExitExperiment,
    master_seed: u64,
    report: &mut EnsembleReport,
) -> Result<()> {
    let checks: StatChecks = c.checks;
    report.criteria = Some(checks);
    for (index, &epsilon) in c.epsilons.iter().enumerate() {
        let delta = c.delta.delta(epsilon);
        let dt = c.dt.resolve(epsilon, delta)?;
        let seed = derived_seed(master_seed, index);
        let settings = CltSettings {
            n_paths: c.n_paths,
            dt,
            scheme: c.scheme,
            seed,
            first_path: c.first_path,
            horizon_factor: c.horizon_factor,
        };
        let (stats, exits) = conditioned_exit_samples(&c.rough, epsilon, delta, &settings)?;
        if index == 0 {
            report
                .values
                .push(("enhancement".into(), stats.enhancement));
            report
                .values
                .push(("deterministic exit time".into(), stats.t));
            report
                .values
                .push(("limit variance".into(), stats.limit_variance));
            report.notes.push(format!(
                "rare endpoint: {} at x = {}",
                stats.rare_endpoint, stats.x_rare
            ));
        }
        let beta = epsilon.sqrt();
        let (tallies, samples) = tally_exits(&exits, stats.t, beta);
        let mut block = EpsilonBlock {
            epsilon,
            delta,
            beta,
            dt,
            seed,
            first_path: c.first_path,
            n_paths: c.n_paths,
            prediction: Prediction {
                mean: 0.0,
                variance: stats.limit_variance,
                exit_time: Some(stats.t),
                exit_point: Some(stats.x_rare),
            },
            summary: None,
            ks: None,
            ks_band: 0.0,
            tallies,
            checks: vec![],
            samples,
            moments: Moments::new(),
        };
        block.evaluate(&checks);
        report.blocks.push(block);
    }
    Ok(())
}

fn run_scale_speed(s: &ScaleSpeedExperiment, report: &mut EnsembleReport) -> Result<()> {
    let (a, b) = (s.rough.interval.lower, s.rough.interval.upper);
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Config("scale-speed needs a bounded interval".into()));
    }
    let n = s.grid_points;
    let grid: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 == n {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let limit = scale_speed_functions(&s.rough, s.epsilon, None, &grid)?;
    let v_sup = limit.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut distances = Vec::with_capacity(s.deltas.len());
    let mut rows = Vec::with_capacity(s.deltas.len());
    for &delta in &s.deltas {
        let ss = scale_speed_functions(&s.rough, s.epsilon, Some(delta), &grid)?;
        let du = ss.scale_distance(&limit)?;
        let dv =
            ss.v.iter()
                .zip(&limit.v)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
                / v_sup;
        report
            .values
            .push((format!("scale distance delta={delta}"), du));
        report
            .values
            .push((format!("relative speed distance delta={delta}"), dv));
        distances.push(du);
        rows.push(vec![delta, du, dv]);
    }
    report.table = Some(Table {
        header: vec![
            "delta".into(),
            "scale_distance".into(),
            "relative_speed_distance".into(),
        ],
        rows,
    });
    if distances.len() >= 2 {
        // along the decreasing δ sweep the distance must shrink
        let worst_increase = distances
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        report.checks.push(Check::at_most(
            "scale distance decreases with delta",
            CheckCategory::Invariant,
            worst_increase,
            0.0,
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_across_epsilons() {
        assert_eq!(derived_seed(7, 0), 7);
        assert_ne!(derived_seed(7, 1), derived_seed(7, 2));
        assert_ne!(derived_seed(7, 1), derived_seed(8, 1));
    }

    #[test]
    fn tallies_and_normalization() {
        let rec = |tau, endpoint| {
            Some(ExitRecord {
                tau,
                exit_state: 0.0,
                endpoint,
            })
        };
        let exits = vec![rec(1.5, Endpoint::Upper), None, rec(0.5, Endpoint::Lower)];
        let (t, s) = tally_exits(&exits, 1.0, 0.5);
        assert_eq!(
            t,
            EndpointTallies {
                lower: 1,
                upper: 1,
                no_exit: 1
            }
        );
        assert_eq!(s, vec![1.0, -1.0]);
    }

    #[test]
    fn homogenize_run_reports_closed_form() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "kind": "homogenize",
                "coefficients": {"langevin": {
                    "v": {"type": "poly", "coeffs": [0, 0, 0.5]},
                    "q": {"type": "trig", "cos": [1]},
                    "d": 1.0
                }},
                "homogenization": {"x_min": 0.5, "x_max": 1.5, "x_points": 5, "n_points": 256},
                "closed_form_tol": 1e-6
            }"#,
        )
        .unwrap();
        let r = run_ensemble(&cfg).unwrap();
        assert!(r.passed(), "{:#?}", r.check_lines());
        let k = r.values.iter().find(|(n, _)| n == "K").unwrap().1;
        assert!((k - 1.266_065_877_752_008).abs() < 1e-12);
        assert!(r.model.is_some());
    }
}
