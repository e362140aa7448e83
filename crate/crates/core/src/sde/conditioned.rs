//! The rough-potential Langevin dynamics conditioned on exiting at the rare
//! (upper) endpoint, via the Doob h-transform.
//!
//! With `log h(x) = (Q(x/δ) − Q(0))/D + (V(x) − V(0))/(εD)` and
//! `L(x) = log ∫₀ˣ h`, the conditioned drift is
//! `−(ε/δ)Q′(x/δ) − V′(x) + 2εD·exp(log h(x) − L(x))`
//! and the diffusion coefficient is `√(2εD)`. `h` spans hundreds of orders
//! of magnitude at small ε, so `L` is tabulated in log space only.

use super::rng::NormalStream;
use super::simulate::{PathEnd, PathRecord, Scheme, LANES};
use crate::error::{Error, Result};
use crate::exit::{ExitProblemSpec, ExitRecord};
use crate::fields::CompiledField;
use crate::limits::{RoughPotential, RoughPotentialSpec};
use crate::quad::GaussLegendre;

/// Table cells per ripple period.
const CELLS_PER_PERIOD: f64 = 32.0;
/// Table cells per slow length scale `εD / max V′`.
const CELLS_PER_SLOW_SCALE: f64 = 64.0;
/// Upper bound on the table size.
const MAX_TABLE: usize = 50_000_000;

pub(crate) fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-space tabulation of the h-transform for one `(ε, δ)`; `δ = None`
/// gives the flat profile with the ripple removed.
#[derive(Debug, Clone)]
pub struct ConditionedDrift {
    potential: RoughPotential,
    epsilon: f64,
    delta: Option<f64>,
    q: CompiledField,
    dq: CompiledField,
    v: CompiledField,
    dv: CompiledField,
    q0: f64,
    v0: f64,
    x_max: f64,
    step: f64,
    /// `L` at `k·step`, `k = 0..`
    log_integral: Vec<f64>,
    /// `L′ = exp(log h − L)` at the same nodes
    slopes: Vec<f64>,
}

impl ConditionedDrift {
    pub fn new(rough: &RoughPotentialSpec, epsilon: f64, delta: Option<f64>) -> Result<Self> {
        rough.validate()?;
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if let Some(d) = delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("delta must be positive, got {d}")));
            }
        }
        let (lo, hi) = (rough.interval.lower, rough.interval.upper);
        if !(lo > 0.0) {
            return Err(Error::Precondition(format!(
                "the h-transform integrates from 0, so the interval must lie in (0, inf); \
                 lower end is {lo}"
            )));
        }
        let potential = rough.compile();
        let dv_max = (0..=256)
            .map(|k| potential.dv(k as f64 / 256.0 * hi * 1.25).abs())
            .fold(0.0, f64::max);
        let mut step = rough.d * epsilon / (CELLS_PER_SLOW_SCALE * dv_max.max(1e-300));
        if let Some(d) = delta {
            if rough.q.depends_on_y() {
                step = step.min(rough.period * d / CELLS_PER_PERIOD);
            }
        }
        let x_max = hi + 0.25 * (hi - lo);
        let n = (x_max / step).ceil() as usize;
        if n > MAX_TABLE {
            return Err(Error::Budget {
                steps: n as u64,
                budget: MAX_TABLE as u64,
            });
        }
        let step = x_max / n as f64;
        let mut me = Self {
            q: CompiledField::new(&potential.spec.q, rough.period),
            dq: CompiledField::new(&potential.spec.q.derivative_y(), rough.period),
            v: CompiledField::new(&potential.spec.v, rough.period),
            dv: CompiledField::new(&potential.spec.v.derivative_x(), rough.period),
            q0: 0.0,
            v0: potential.v(0.0),
            potential,
            epsilon,
            delta,
            x_max,
            step,
            log_integral: Vec::new(),
            slopes: Vec::new(),
        };
        me.q0 = me.q.eval(0.0, 0.0);
        let gl = GaussLegendre::new(4);
        let log_w: Vec<f64> = gl.weights.iter().map(|w| (0.5 * step * w).ln()).collect();
        let mut table = Vec::with_capacity(n + 1);
        let mut acc = f64::NEG_INFINITY;
        table.push(acc);
        for k in 0..n {
            let mid = (k as f64 + 0.5) * step;
            let terms: Vec<f64> = gl
                .nodes
                .iter()
                .zip(&log_w)
                .map(|(t, lw)| lw + me.log_h(mid + 0.5 * step * t))
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let cell = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
            acc = logaddexp(acc, cell);
            table.push(acc);
        }
        me.slopes = table
            .iter()
            .enumerate()
            .map(|(k, l)| (me.log_h(k as f64 * step) - l).exp())
            .collect();
        me.log_integral = table;
        Ok(me)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    /// Spacing of the `L` table.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn potential(&self) -> &RoughPotential {
        &self.potential
    }

    fn ripple(&self, x: f64) -> f64 {
        match self.delta {
            Some(d) => (self.q.eval(x, x / d) - self.q0) / self.potential.spec.d,
            None => 0.0,
        }
    }

    /// `log h(x)`.
    pub fn log_h(&self, x: f64) -> f64 {
        let d = self.potential.spec.d;
        self.ripple(x) + (self.v.eval(x, 0.0) - self.v0) / (self.epsilon * d)
    }

    /// `L(x) = log ∫₀ˣ h`, by cubic Hermite interpolation with the exact
    /// slope `L′ = exp(log h − L)`.
    pub fn log_integral(&self, x: f64) -> Result<f64> {
        let s = x / self.step;
        let n = self.log_integral.len() - 1;
        if !(s >= 1.0 && x <= self.x_max) {
            return Err(Error::Extrapolation {
                state: x,
                min: self.step,
                max: self.x_max,
            });
        }
        let k = (s.floor() as usize).min(n - 1);
        let t = s - k as f64;
        let (l0, l1) = (self.log_integral[k], self.log_integral[k + 1]);
        let (d0, d1) = (self.slopes[k], self.slopes[k + 1]);
        let h = self.step;
        let (t2, t3) = (t * t, t * t * t);
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * l0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * l1
            + (t3 - t2) * h * d1)
    }

    /// The unconditioned drift `−(ε/δ)Q′(x/δ) − V′(x)`.
    #[inline]
    pub fn unconditioned(&self, x: f64) -> f64 {
        let fast = match self.delta {
            Some(d) => self.epsilon / d * self.dq.eval(x, x / d),
            None => 0.0,
        };
        -fast - self.dv.eval(x, 0.0)
    }

    /// The h-transform correction `2εD·h(x)/∫₀ˣh`.
    #[inline]
    pub fn correction(&self, x: f64) -> Result<f64> {
        let d = self.potential.spec.d;
        Ok(2.0 * self.epsilon * d * (self.log_h(x) - self.log_integral(x)?).exp())
    }

    #[inline]
    pub fn drift(&self, x: f64) -> Result<f64> {
        Ok(self.unconditioned(x) + self.correction(x)?)
    }

    pub fn diffusion(&self) -> f64 {
        (2.0 * self.epsilon * self.potential.spec.d).sqrt()
    }
}

/// Time stepper for the conditioned dynamics.
#[derive(Debug, Clone)]
pub struct ConditionedSimulator {
    drift: ConditionedDrift,
    interval: ExitProblemSpec,
    x0: f64,
    dt: f64,
    n_steps: u64,
    scheme: Scheme,
    seed: u64,
}

impl ConditionedSimulator {
    /// `dt` must resolve the fast drift (`dt ≤ 0.1·δ²/ε` when `Q` is not
    /// constant); paths are integrated up to `horizon`.
    pub fn new(
        drift: ConditionedDrift,
        dt: f64,
        horizon: f64,
        scheme: Scheme,
        seed: u64,
        step_budget: u64,
    ) -> Result<Self> {
        let spec = &drift.potential.spec;
        if !(dt > 0.0 && horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!(
                "dt and horizon must be positive, got {dt} and {horizon}"
            )));
        }
        if let Some(d) = drift.delta {
            if spec.q.depends_on_y() {
                let ceiling = super::simulate::DEFAULT_RESOLUTION_FACTOR * d * d / drift.epsilon;
                if dt > ceiling * (1.0 + 1e-12) {
                    return Err(Error::Config(format!(
                        "dt = {dt:e} does not resolve the ripple: needs dt <= {ceiling:e}"
                    )));
                }
            }
        }
        let n_steps = (horizon / dt).ceil().max(1.0) as u64;
        if n_steps > step_budget {
            return Err(Error::Budget {
                steps: n_steps,
                budget: step_budget,
            });
        }
        Ok(Self {
            interval: spec.interval,
            x0: spec.x0,
            dt: horizon / n_steps as f64,
            drift,
            n_steps,
            scheme,
            seed,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn drift(&self) -> &ConditionedDrift {
        &self.drift
    }

    #[inline(always)]
    fn step(&self, x: f64, dw: f64) -> Result<f64> {
        let dt = self.dt;
        let f0 = self.drift.drift(x)?;
        Ok(match self.scheme {
            Scheme::EulerMaruyama => x + f0 * dt + dw,
            Scheme::Heun => {
                let pred = x + f0 * dt + dw;
                // a predictor outside the table only happens far beyond
                // the boundary, where the step exits anyway
                match self.drift.drift(pred) {
                    Ok(f1) => x + 0.5 * (f0 + f1) * dt + dw,
                    Err(_) => pred,
                }
            }
        })
    }

    /// End states of the given paths, advanced `LANES` at a time in
    /// lockstep; identical to the final states and exits of [`Self::run`].
    pub fn run_ends(&self, path_indices: &[u64]) -> Result<Vec<PathEnd>> {
        let g = self.drift.diffusion() * self.dt.sqrt();
        let mut out = Vec::with_capacity(path_indices.len());
        for chunk in path_indices.chunks(LANES) {
            let m = chunk.len();
            let mut normals: Vec<NormalStream> = chunk
                .iter()
                .map(|&i| NormalStream::new(self.seed, i))
                .collect();
            let mut x = [self.x0; LANES];
            let mut ends: [Option<ExitRecord>; LANES] = [None; LANES];
            let mut done = [false; LANES];
            let mut live = m;
            for k in 0..self.n_steps {
                for l in 0..m {
                    if done[l] {
                        continue;
                    }
                    let x_new = self.step(x[l], g * normals[l].next())?;
                    if !x_new.is_finite() {
                        return Err(Error::BlowUp {
                            time: (k + 1) as f64 * self.dt,
                            path: chunk[l],
                        });
                    }
                    if let Some(side) = self.interval.side(x_new) {
                        let z = self.interval.boundary(side);
                        let frac = ((z - x[l]) / (x_new - x[l])).clamp(0.0, 1.0);
                        ends[l] = Some(ExitRecord {
                            tau: k as f64 * self.dt + frac * self.dt,
                            exit_state: z,
                            endpoint: side,
                        });
                        done[l] = true;
                        live -= 1;
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

    /// Path `path_index`, stopped at the first exit from the interval.
    pub fn run(&self, path_index: u64, record_stride: u64) -> Result<PathRecord> {
        let mut normals = NormalStream::new(self.seed, path_index);
        let dt = self.dt;
        let g = self.drift.diffusion() * dt.sqrt();
        let stride = record_stride.max(1);
        let mut times = vec![0.0];
        let mut states = vec![self.x0];
        let mut x = self.x0;
        let mut exit = None;
        let mut countdown = stride;
        for k in 0..self.n_steps {
            let x_new = self.step(x, g * normals.next())?;
            let t_new = (k + 1) as f64 * dt;
            if !x_new.is_finite() {
                return Err(Error::BlowUp {
                    time: t_new,
                    path: path_index,
                });
            }
            if let Some(side) = self.interval.side(x_new) {
                let z = self.interval.boundary(side);
                let frac = ((z - x) / (x_new - x)).clamp(0.0, 1.0);
                times.push(t_new);
                states.push(x_new);
                exit = Some(ExitRecord {
                    tau: k as f64 * dt + frac * dt,
                    exit_state: z,
                    endpoint: side,
                });
                break;
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
            path_index,
            times,
            states,
            exit,
        })
    }
}

/// One conditioned path (stream 0 of `seed`) with Euler–Maruyama steps,
/// integrated until exit or a generous horizon of ten deterministic exit
/// times.
pub fn simulate_conditioned_path(
    rough: &RoughPotentialSpec,
    epsilon: f64,
    delta: Option<f64>,
    dt: f64,
    seed: u64,
) -> Result<PathRecord> {
    let drift = ConditionedDrift::new(rough, epsilon, delta)?;
    let stats = crate::limits::conditional_exit_stats(rough)?;
    let sim = ConditionedSimulator::new(
        drift,
        dt,
        10.0 * stats.t,
        Scheme::EulerMaruyama,
        seed,
        super::simulate::DEFAULT_STEP_BUDGET,
    )?;
    sim.run(0, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exit::Endpoint;
    use crate::fields::Field;

    fn spec(q: Field, d: f64) -> RoughPotentialSpec {
        RoughPotentialSpec {
            v: Field::poly(vec![0.0, 0.0, 0.5]),
            q,
            d,
            period: 1.0,
            interval: ExitProblemSpec::new(0.5, 2.0).unwrap(),
            x0: 1.0,
        }
    }

    #[test]
    fn log_integral_matches_closed_form() {
        // Q ≡ 0, V = x²/2: ∫₀ˣ e^{y²/(2εD)} dy has no elementary form; compare
        // with adaptive quadrature of the scaled integrand instead.
        for eps in [0.1, 0.01] {
            let c = ConditionedDrift::new(&spec(Field::zero(), 1.0), eps, None).unwrap();
            for x in [0.5, 1.0, 1.7, 2.0] {
                let scale = x * x / (2.0 * eps);
                let i = crate::quad::adaptive_gk(
                    |y| (y * y / (2.0 * eps) - scale).exp(),
                    0.0,
                    x,
                    1e-300,
                    1e-14,
                )
                .unwrap();
                let want = scale + i.ln();
                let got = c.log_integral(x).unwrap();
                assert!(
                    (got - want).abs() < 1e-9 * want.abs().max(1.0),
                    "{x}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn flat_conditioned_drift_flips_sign() {
        // direct quadrature of h/∫₀ˣh for Q ≡ 0, V = x²/2, scaled by h(x)
        for eps in [0.1, 0.01] {
            let c = ConditionedDrift::new(&spec(Field::zero(), 1.0), eps, None).unwrap();
            for k in 0..=10 {
                let x = 0.8 + 0.12 * k as f64;
                let scale = x * x / (2.0 * eps);
                let ratio_inv = crate::quad::adaptive_gk(
                    |y| (y * y / (2.0 * eps) - scale).exp(),
                    0.0,
                    x,
                    1e-300,
                    1e-14,
                )
                .unwrap();
                let want = -x + 2.0 * eps / ratio_inv;
                let b = c.drift(x).unwrap();
                assert!(
                    (b - want).abs() < 1e-8 * want.abs(),
                    "eps {eps}, x {x}: {b} vs {want}"
                );
                // Laplace: ∫₀ˣh ≈ h(x)·εD/V′(x)·(1 + εD/x² + …), so the
                // drift is +V′ up to a relative O(εD/x²) correction
                assert!(
                    (b / x - 1.0).abs() < 3.0 * eps / (x * x),
                    "eps {eps}, x {x}: {b}"
                );
            }
        }
    }

    #[test]
    fn h_transform_pushes_against_the_flow() {
        let c = ConditionedDrift::new(&spec(Field::zero(), 1.0), 0.05, None).unwrap();
        for k in 0..=40 {
            let x = 0.5 + 1.5 * k as f64 / 40.0;
            let diff = c.drift(x).unwrap() - c.unconditioned(x);
            assert!(diff > 0.0);
            assert!((diff - c.correction(x).unwrap()).abs() < 1e-12 * diff);
        }
    }

    #[test]
    fn rough_drift_includes_fast_ripple() {
        let q = Field::trig(1.0, 0.0, vec![1.0], vec![]);
        let c = ConditionedDrift::new(&spec(q, 1.0), 0.05, Some(1e-3)).unwrap();
        let x = 1.0001;
        let want =
            -0.05 / 1e-3 * (-std::f64::consts::TAU * (std::f64::consts::TAU * x / 1e-3).sin()) - x;
        assert!((c.unconditioned(x) - want).abs() < 1e-4 * want.abs());
    }

    #[test]
    fn conditioned_paths_exit_at_the_rare_end() {
        let c = ConditionedDrift::new(&spec(Field::zero(), 1.0), 0.02, None).unwrap();
        let sim = ConditionedSimulator::new(c, 1e-4, 20.0, Scheme::Heun, 3, u64::MAX).unwrap();
        let mut upper = 0;
        let mut mean_tau = 0.0;
        let n = 200;
        for i in 0..n {
            let e = sim.run(i, 1000).unwrap().exit.unwrap();
            if e.endpoint == Endpoint::Upper {
                upper += 1;
            }
            mean_tau += e.tau / n as f64;
        }
        assert_eq!(upper, n);
        // concentrates near ∫₁² dy/y = ln 2
        assert!(
            (mean_tau - std::f64::consts::LN_2).abs() < 0.05,
            "{mean_tau}"
        );
    }

    #[test]
    fn lockstep_ends_match_single_paths() {
        let q = Field::trig(1.0, 0.0, vec![0.3], vec![]);
        for scheme in [Scheme::EulerMaruyama, Scheme::Heun] {
            let c = ConditionedDrift::new(&spec(q.clone(), 1.0), 0.05, Some(0.05)).unwrap();
            // short horizon so that some paths are still inside
            let sim = ConditionedSimulator::new(c, 5e-4, 0.7, scheme, 11, u64::MAX).unwrap();
            let idx: Vec<u64> = (0..11).collect();
            let ends = sim.run_ends(&idx).unwrap();
            let mut exited = 0;
            for (i, end) in idx.iter().zip(&ends) {
                let p = sim.run(*i, u64::MAX).unwrap();
                assert_eq!(end.path_index, *i);
                assert_eq!(end.exit, p.exit);
                assert_eq!(end.state.to_bits(), p.final_state().to_bits());
                exited += p.exit.is_some() as usize;
            }
            assert!(exited > 0 && exited < idx.len(), "{exited}");
        }
    }

    #[test]
    fn table_requires_positive_interval() {
        let mut s = spec(Field::zero(), 1.0);
        s.v = Field::poly(vec![0.0, 2.0, 0.5]);
        s.interval = ExitProblemSpec::new(-0.5, 2.0).unwrap();
        s.x0 = 0.0;
        assert!(matches!(
            ConditionedDrift::new(&s, 0.1, None),
            Err(Error::Precondition(_))
        ));
    }
}
