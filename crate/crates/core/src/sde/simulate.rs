//! Time stepping of the multiscale SDE
//! `dX = [(ε/δ) b(X, X/δ) + c(X, X/δ) + ε^{a₁/2} Ψ(X, X/δ)] dt + √ε σ(X, X/δ) dW`,
//! `X₀ = x₀ + ε^{a₂/2} ξ`, with on-the-fly exit detection.

use serde::{Deserialize, Serialize};

use super::rng::NormalStream;
use crate::error::{Error, Result};
use crate::exit::{ExitProblemSpec, ExitRecord};
use crate::fields::CompiledField;
use crate::homogenize::{EffectiveTrajectory, PeriodicCoefficientSet, RegimeClassification};

/// Law of the initial perturbation ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum XiDistribution {
    #[default]
    None,
    PointMass {
        value: f64,
    },
    Gaussian {
        mean: f64,
        std: f64,
    },
}

impl XiDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            XiDistribution::None => 0.0,
            XiDistribution::PointMass { value } => value,
            XiDistribution::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            XiDistribution::Gaussian { std, .. } => std * std,
            _ => 0.0,
        }
    }

    pub fn sample(&self, normals: &mut NormalStream) -> f64 {
        match *self {
            XiDistribution::None => 0.0,
            XiDistribution::PointMass { value } => value,
            XiDistribution::Gaussian { mean, std } => mean + std * normals.next(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler–Maruyama.
    #[default]
    EulerMaruyama,
    /// Predictor–corrector on the drift (trapezoidal average of the drift at
    /// the start and Euler-predicted end point) with the noise coefficient
    /// frozen at the start of the step. Consistent with the Itô equation and
    /// far more accurate than Euler–Maruyama for the stiff fast drift.
    Heun,
}

/// Default ceiling on `dt / (δ²/ε)`.
pub const DEFAULT_RESOLUTION_FACTOR: f64 = 0.1;
/// Default ceiling on the number of steps of a single path.
pub const DEFAULT_STEP_BUDGET: u64 = 2_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub coeffs: PeriodicCoefficientSet,
    pub regime: RegimeClassification,
    pub x0: f64,
    #[serde(default)]
    pub xi: XiDistribution,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_resolution")]
    pub resolution_factor: f64,
    #[serde(default = "default_budget")]
    pub step_budget: u64,
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION_FACTOR
}

fn default_budget() -> u64 {
    DEFAULT_STEP_BUDGET
}

impl SimulationSpec {
    /// Characteristic time step `δ²/ε` of the fast drift.
    pub fn fast_time(&self) -> f64 {
        self.regime.delta.powi(2) / self.regime.epsilon
    }

    pub fn n_steps(&self) -> u64 {
        (self.horizon / self.dt).ceil().max(1.0) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "dt and horizon must be positive, got {} and {}",
                self.dt, self.horizon
            )));
        }
        // without oscillating coefficients there is no fast scale to resolve
        let c = &self.coeffs;
        let oscillating = [&c.b, &c.c, &c.sigma, &c.psi]
            .iter()
            .any(|f| f.depends_on_y());
        let ceiling = self.resolution_factor * self.fast_time();
        if oscillating && self.dt > ceiling * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "dt = {:e} does not resolve the fast drift: needs dt <= {} * delta^2/eps = {:e}",
                self.dt, self.resolution_factor, ceiling
            )));
        }
        let steps = self.n_steps();
        if steps > self.step_budget {
            return Err(Error::Budget {
                steps,
                budget: self.step_budget,
            });
        }
        Ok(())
    }
}

/// A simulated path, sampled every `record_stride` steps (plus the final state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub seed: u64,
    pub path_index: u64,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub exit: Option<ExitRecord>,
}

impl PathRecord {
    pub fn final_state(&self) -> f64 {
        *self
            .states
            .last()
            .expect("paths always hold the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("paths always hold the initial time")
    }
}

/// Number of paths advanced together by [`Simulator::run_ends`].
pub const LANES: usize = 8;

/// Final state of a path (the state just past the boundary for an exited
/// path) and its exit, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEnd {
    pub path_index: u64,
    pub state: f64,
    pub exit: Option<ExitRecord>,
}

/// Compiled stepping kernel for one [`SimulationSpec`]; cheap to share
/// between threads.
#[derive(Debug, Clone)]
pub struct Simulator {
    b: CompiledField,
    c: CompiledField,
    sigma: CompiledField,
    psi: CompiledField,
    fast: f64,
    inv_delta: f64,
    noise: f64,
    psi_scale: f64,
    init_scale: f64,
    x0: f64,
    xi: XiDistribution,
    dt: f64,
    n_steps: u64,
    scheme: Scheme,
    seed: u64,
}

impl Simulator {
    pub fn new(spec: &SimulationSpec) -> Result<Self> {
        spec.validate()?;
        let r = &spec.regime;
        let rho = spec.coeffs.period;
        let n_steps = spec.n_steps();
        let pow_half = |a: f64| {
            if a.is_infinite() {
                0.0
            } else {
                r.epsilon.powf(a / 2.0)
            }
        };
        Ok(Self {
            b: CompiledField::new(&spec.coeffs.b, rho),
            c: CompiledField::new(&spec.coeffs.c, rho),
            sigma: CompiledField::new(&spec.coeffs.sigma, rho),
            psi: CompiledField::new(&spec.coeffs.psi, rho),
            fast: r.epsilon / r.delta,
            inv_delta: 1.0 / r.delta,
            noise: r.epsilon.sqrt(),
            psi_scale: pow_half(r.a1),
            init_scale: pow_half(r.a2),
            x0: spec.x0,
            xi: spec.xi,
            dt: spec.horizon / n_steps as f64,
            n_steps,
            scheme: spec.scheme,
            seed: spec.seed,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> u64 {
        self.n_steps
    }

    #[inline]
    fn drift(&self, x: f64) -> f64 {
        let y = x * self.inv_delta;
        let mut d = self.fast * self.b.eval(x, y) + self.c.eval(x, y);
        if !self.psi.is_zero() {
            d += self.psi_scale * self.psi.eval(x, y);
        }
        d
    }

    #[inline]
    fn diffusion(&self, x: f64) -> f64 {
        self.noise * self.sigma.eval(x, x * self.inv_delta)
    }

    /// One step from `x` with Brownian increment `dw`.
    #[inline(always)]
    fn step(&self, x: f64, dw: f64) -> f64 {
        let dt = self.dt;
        let f0 = self.drift(x);
        let g0 = self.diffusion(x);
        match self.scheme {
            Scheme::EulerMaruyama => x + f0 * dt + g0 * dw,
            Scheme::Heun => {
                let pred = x + f0 * dt + g0 * dw;
                x + 0.5 * (f0 + self.drift(pred)) * dt + g0 * dw
            }
        }
    }

    /// Starting point of path `path_index`, drawing the initial
    /// perturbation from its stream when one is active.
    fn start(&self, normals: &mut NormalStream) -> f64 {
        let xi = if self.init_scale != 0.0 {
            self.xi.sample(normals)
        } else {
            0.0
        };
        self.x0 + self.init_scale * xi
    }

    /// End points of the given paths, bit-identical to [`Simulator::run`].
    ///
    /// Paths are advanced [`LANES`] at a time in lockstep: a single path is
    /// one long chain of dependent operations, and interleaving independent
    /// chains lets them overlap.
    pub fn run_ends(
        &self,
        path_indices: &[u64],
        exit: Option<&ExitProblemSpec>,
    ) -> Result<Vec<PathEnd>> {
        let mut out = Vec::with_capacity(path_indices.len());
        for chunk in path_indices.chunks(LANES) {
            let m = chunk.len();
            let mut normals: Vec<NormalStream> = chunk
                .iter()
                .map(|&i| NormalStream::new(self.seed, i))
                .collect();
            let mut x = [0.0; LANES];
            let mut ends: [Option<ExitRecord>; LANES] = [None; LANES];
            let mut live = m;
            for l in 0..m {
                x[l] = self.start(&mut normals[l]);
                if let Some(e) = exit {
                    e.require_inside(x[l])?;
                }
            }
            let sqrt_dt = self.dt.sqrt();
            let mut done = [false; LANES];
            for k in 0..self.n_steps {
                for l in 0..m {
                    if done[l] {
                        continue;
                    }
                    let x_new = self.step(x[l], sqrt_dt * normals[l].next());
                    if !x_new.is_finite() {
                        return Err(Error::BlowUp {
                            time: (k + 1) as f64 * self.dt,
                            path: chunk[l],
                        });
                    }
                    if let Some(e) = exit {
                        if let Some(side) = e.side(x_new) {
                            let z = e.boundary(side);
                            let frac = (z - x[l]) / (x_new - x[l]);
                            ends[l] = Some(ExitRecord {
                                tau: k as f64 * self.dt + frac.clamp(0.0, 1.0) * self.dt,
                                exit_state: z,
                                endpoint: side,
                            });
                            x[l] = x_new;
                            done[l] = true;
                            live -= 1;
                            continue;
                        }
                    }
                    x[l] = x_new;
                }
                if live == 0 {
                    break;
                }
            }
            out.extend((0..m).map(|l| PathEnd {
                path_index: chunk[l],
                state: x[l],
                exit: ends[l],
            }));
        }
        Ok(out)
    }

    /// Simulate path `path_index` with its own RNG stream.
    pub fn run(
        &self,
        path_index: u64,
        exit: Option<&ExitProblemSpec>,
        record_stride: u64,
    ) -> Result<PathRecord> {
        let mut normals = NormalStream::new(self.seed, path_index);
        let x_start = self.start(&mut normals);
        let mut rec = self.integrate(x_start, exit, record_stride, || normals.next())?;
        rec.path_index = path_index;
        Ok(rec)
    }

    /// Integrate from `x_start` with caller-supplied standard normals.
    pub fn integrate(
        &self,
        x_start: f64,
        exit: Option<&ExitProblemSpec>,
        record_stride: u64,
        mut normal: impl FnMut() -> f64,
    ) -> Result<PathRecord> {
        let dt = self.dt;
        let sqrt_dt = dt.sqrt();
        let stride = record_stride.max(1);
        let mut times = vec![0.0];
        let mut states = vec![x_start];
        let mut x = x_start;
        let mut exit_rec = None;
        let mut countdown = stride;
        if let Some(e) = exit {
            e.require_inside(x_start)?;
        }
        for k in 0..self.n_steps {
            let x_new = self.step(x, sqrt_dt * normal());
            let t_new = (k + 1) as f64 * dt;
            if !x_new.is_finite() {
                return Err(Error::BlowUp {
                    time: t_new,
                    path: 0,
                });
            }
            if let Some(e) = exit {
                if let Some(side) = e.side(x_new) {
                    let z = e.boundary(side);
                    let frac = (z - x) / (x_new - x);
                    let tau = k as f64 * dt + frac.clamp(0.0, 1.0) * dt;
                    times.push(t_new);
                    states.push(x_new);
                    exit_rec = Some(ExitRecord {
                        tau,
                        exit_state: z,
                        endpoint: side,
                    });
                    break;
                }
            }
            x = x_new;
            countdown -= 1;
            if countdown == 0 || k + 1 == self.n_steps {
                countdown = stride;
                times.push(t_new);
                states.push(x);
            }
        }
        Ok(PathRecord {
            seed: self.seed,
            path_index: 0,
            times,
            states,
            exit: exit_rec,
        })
    }
}

/// Simulate one path of the spec's stream 0 (see [`Simulator::run`] for
/// ensembles).
pub fn simulate_path(spec: &SimulationSpec, exit: Option<&ExitProblemSpec>) -> Result<PathRecord> {
    Simulator::new(spec)?.run(0, exit, 1)
}

/// First exit of a recorded path from the open interval, with the crossing
/// time obtained by linear interpolation inside the bracketing step.
pub fn detect_exit(path: &PathRecord, exit: &ExitProblemSpec) -> Option<ExitRecord> {
    for k in 1..path.states.len() {
        let (x0, x1) = (path.states[k - 1], path.states[k]);
        if let Some(side) = exit.side(x1) {
            let z = exit.boundary(side);
            let (t0, t1) = (path.times[k - 1], path.times[k]);
            let frac = if x1 != x0 { (z - x0) / (x1 - x0) } else { 1.0 };
            return Some(ExitRecord {
                tau: t0 + frac.clamp(0.0, 1.0) * (t1 - t0),
                exit_state: z,
                endpoint: side,
            });
        }
    }
    None
}

/// `η_t = (X_t − X̄_t)/β` at the recorded times.
pub fn extract_fluctuation(
    path: &PathRecord,
    traj: &EffectiveTrajectory,
    beta: f64,
) -> Result<Vec<f64>> {
    path.times
        .iter()
        .zip(&path.states)
        .map(|(&t, &x)| Ok((x - traj.state_at(t)?) / beta))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exit::Endpoint;
    use crate::fields::Field;
    use crate::homogenize::{classify_regime, effective_flow, DeltaSchedule, FnDrift};

    fn coeffs(c: f64, sigma: f64) -> PeriodicCoefficientSet {
        PeriodicCoefficientSet {
            dimension: 1,
            period: 1.0,
            b: Field::zero(),
            c: Field::constant(c),
            sigma: Field::constant(sigma),
            psi: Field::zero(),
            psi_limit: None,
            gamma: f64::INFINITY,
        }
    }

    fn spec(c: f64, sigma: f64, eps: f64, dt: f64, horizon: f64) -> SimulationSpec {
        let regime = classify_regime(
            eps,
            DeltaSchedule::Power { exponent: 1.5 },
            f64::INFINITY,
            f64::INFINITY,
            f64::INFINITY,
        )
        .unwrap();
        SimulationSpec {
            coeffs: coeffs(c, sigma),
            regime,
            x0: 0.0,
            xi: XiDistribution::None,
            dt,
            horizon,
            seed: 1,
            scheme: Scheme::EulerMaruyama,
            resolution_factor: 1e9,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    #[test]
    fn no_dynamics_means_constant_path() {
        let mut s = spec(0.0, 0.0, 0.01, 1e-3, 1.0);
        s.x0 = 0.4;
        let p = simulate_path(&s, None).unwrap();
        assert!(p.states.iter().all(|x| *x == 0.4));
        assert!(detect_exit(&p, &ExitProblemSpec::new(0.0, 1.0).unwrap()).is_none());
    }

    #[test]
    fn deterministic_transport() {
        let s = spec(1.0, 0.0, 0.01, 1e-3, 2.0);
        let p = simulate_path(&s, None).unwrap();
        for (t, x) in p.times.iter().zip(&p.states) {
            assert!((t - x).abs() < 1e-12);
        }
        let e = detect_exit(&p, &ExitProblemSpec::new(-1.0, 1.0).unwrap()).unwrap();
        assert!((e.tau - 1.0).abs() < 1e-9);
        assert_eq!(e.endpoint, Endpoint::Upper);
        let on_the_fly = simulate_path(&s, Some(&ExitProblemSpec::new(-1.0, 1.0).unwrap()))
            .unwrap()
            .exit
            .unwrap();
        assert!((on_the_fly.tau - 1.0).abs() < 1e-9);
    }

    #[test]
    fn resolution_and_budget_guards() {
        let mut s = spec(1.0, 1.0, 0.01, 1e-3, 1.0);
        s.resolution_factor = 0.1;
        // constant coefficients have no fast scale to resolve
        assert!(Simulator::new(&s).is_ok());
        s.coeffs.b = Field::trig(1.0, 0.0, vec![], vec![1.0]);
        assert!(matches!(Simulator::new(&s), Err(Error::Config(_))));
        let mut s = spec(1.0, 1.0, 0.01, 1e-6, 1.0);
        s.step_budget = 1000;
        assert!(matches!(Simulator::new(&s), Err(Error::Budget { .. })));
    }

    #[test]
    fn reproducible_paths() {
        let s = spec(0.3, 1.0, 0.1, 1e-3, 1.0);
        let sim = Simulator::new(&s).unwrap();
        assert_eq!(sim.run(5, None, 7).unwrap(), sim.run(5, None, 7).unwrap());
        assert_ne!(sim.run(5, None, 7).unwrap(), sim.run(6, None, 7).unwrap());
    }

    #[test]
    fn lockstep_ends_match_single_paths() {
        let mut s = spec(0.3, 1.0, 0.1, 1e-3, 1.0);
        s.coeffs.b = Field::trig(1.0, 0.0, vec![], vec![1.0]);
        s.regime.a2 = 1.0;
        s.xi = XiDistribution::Gaussian {
            mean: 0.1,
            std: 0.5,
        };
        for scheme in [Scheme::EulerMaruyama, Scheme::Heun] {
            s.scheme = scheme;
            let sim = Simulator::new(&s).unwrap();
            let exit = ExitProblemSpec::new(-0.4, 0.6).unwrap();
            // 11 paths: one full chunk of lanes and a ragged one
            let idx: Vec<u64> = (3..14).collect();
            for e in [None, Some(&exit)] {
                let ends = sim.run_ends(&idx, e).unwrap();
                for (i, end) in idx.iter().zip(&ends) {
                    let p = sim.run(*i, e, u64::MAX).unwrap();
                    assert_eq!(end.path_index, *i);
                    assert_eq!(end.exit, p.exit);
                    assert_eq!(end.state, p.final_state());
                }
                if e.is_some() {
                    assert!(ends.iter().any(|p| p.exit.is_some()));
                }
            }
        }
    }

    #[test]
    fn strong_refinement_with_shared_increments() {
        // multiplicative noise so that EM has a genuine strong error
        let mut s = spec(0.0, 1.0, 0.5, 1e-2, 1.0);
        s.coeffs.c = Field::poly(vec![0.0, -1.0]);
        s.coeffs.sigma = Field::poly(vec![1.0, 0.5]);
        s.x0 = 0.5;
        let coarse = Simulator::new(&s).unwrap();
        s.dt = 5e-3;
        let fine = Simulator::new(&s).unwrap();
        s.dt = 2.5e-3;
        let finer = Simulator::new(&s).unwrap();
        let mut err_a = 0.0;
        let mut err_b = 0.0;
        for seed in 0..100u64 {
            let mut st = NormalStream::new(seed, 0);
            let z: Vec<f64> = (0..400).map(|_| st.next()).collect();
            let pair = |z: &[f64]| -> Vec<f64> {
                z.chunks(2)
                    .map(|c| (c[0] + c[1]) / std::f64::consts::SQRT_2)
                    .collect()
            };
            let z_f = pair(&z);
            let z_c = pair(&z_f);
            let run = |sim: &Simulator, zs: &[f64]| {
                let mut it = zs.iter();
                sim.integrate(0.5, None, 1, || *it.next().unwrap()).unwrap()
            };
            let (pc, pf, pff) = (run(&coarse, &z_c), run(&fine, &z_f), run(&finer, &z));
            let sup = |a: &PathRecord, b: &PathRecord, step: usize| {
                a.states
                    .iter()
                    .enumerate()
                    .map(|(k, x)| (x - b.states[k * step]).abs())
                    .fold(0.0, f64::max)
            };
            err_a += sup(&pc, &pff, 4);
            err_b += sup(&pf, &pff, 2);
        }
        // O(dt^{1/2}) or better: halving dt shrinks the error by at least √2/1.2
        assert!(err_b < err_a / 1.15, "{err_a} {err_b}");
        assert!(err_a / 100.0 < 0.1);
    }

    #[test]
    fn second_moment_of_pure_noise() {
        let eps = 0.1;
        let s = spec(0.0, 1.0, eps, 1e-2, 1.0);
        let sim = Simulator::new(&s).unwrap();
        let n = 10_000u64;
        let xs: Vec<f64> = (0..n)
            .map(|i| sim.run(i, None, 1000).unwrap().final_state())
            .collect();
        let m2: f64 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x * x - m2).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!((m2 - eps).abs() < 3.0 * se, "{m2} vs {eps} (se {se})");
    }

    #[test]
    fn fluctuation_extraction() {
        let s = spec(1.0, 0.0, 0.01, 1e-3, 1.0);
        let p = simulate_path(&s, None).unwrap();
        let d = FnDrift {
            f: |_| 1.0,
            df: |_| 0.0,
        };
        let traj = effective_flow(&d, 0.0, 1.0, 1e-2).unwrap();
        let eta = extract_fluctuation(&p, &traj, 0.1).unwrap();
        assert!(eta.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn initial_perturbation_is_applied() {
        let mut s = spec(0.0, 0.0, 0.04, 1e-3, 0.01);
        s.regime.a2 = 1.0;
        s.xi = XiDistribution::PointMass { value: 2.0 };
        let p = simulate_path(&s, None).unwrap();
        assert!((p.states[0] - 0.4).abs() < 1e-15);
    }
}
