//! Frozen-x homogenization and the tabulated homogenized model.
//!
//! For each slow state `x` the fast generator is frozen and the torus
//! problems are solved:
//!
//! * diffusive regime (`L¹ = b∂ + ½σ²∂²`): invariant density, corrector χ with
//!   `L¹χ = −b`, and Ξ₁ with `L¹Ξ₁ = −(λ₁ − λ̄₁)`, where `λ₁ = (1+χ′)c`,
//!   `q₁ = (1+χ′)²σ²`, `J₁ = cΞ₁′`, `Ψ₁ = (1+χ′)Ψ`;
//! * resonant regime (`L² = (γb+c)∂ + (γσ²/2)∂²`): invariant density and Ξ₂
//!   with `L²Ξ₂ = −(λ₂ − λ̄₂)`, where `λ₂ = γb + c`, `q₂ = (1+Ξ₂′)²σ²`,
//!   `J₂ = b(1+Ξ₂′) + ½σ²Ξ₂″`, `Ψ₂ = (1+Ξ₂′)Ψ`. For γ = 0 the generator is
//!   pure transport by `c` and the density is proportional to `1/c`.
//!
//! Averages over the invariant density are then tabulated on a uniform
//! x-grid and interpolated by cubic Hermite splines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{CellGrid, CellOperator, CellSolution, Sampled, TransportOperator};
use super::coefficients::{PeriodicCoefficientSet, Tolerances};
use crate::error::{Error, Result};
use crate::fields::ext_f64;
use crate::torus::{PeriodicField, TorusGrid};

/// Gauss–Legendre points per grid cell used when none is configured.
pub const DEFAULT_GL_ORDER: usize = 8;

/// Averaged coefficients at one slow state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub lambda_bar: f64,
    pub q_bar: f64,
    pub j_bar: f64,
    pub psi_bar: f64,
}

/// Diagnostics of the torus solves at one slow state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CellReport {
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centering_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_mu_mean: Option<f64>,
    pub xi_residual: f64,
    pub xi_mu_mean: f64,
    pub normalization_error: f64,
    pub min_density: f64,
}

impl CellReport {
    /// Names and values of every invariant that fails its tolerance.
    pub fn violations(&self, tol: &Tolerances) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, v: Option<f64>, t: f64| {
            if let Some(v) = v {
                if !(v.abs() <= t) {
                    out.push(format!("{name} = {v:e} at x = {} exceeds {t:e}", self.x));
                }
            }
        };
        check("centering residual", self.centering_residual, tol.centering);
        check("cell residual", self.chi_residual, tol.residual);
        check("chi mu-mean", self.chi_mu_mean, tol.mu_mean);
        check("auxiliary residual", Some(self.xi_residual), tol.residual);
        check("xi mu-mean", Some(self.xi_mu_mean), tol.mu_mean);
        check(
            "density normalization",
            Some(self.normalization_error),
            tol.normalization,
        );
        if self.min_density < 0.0 {
            out.push(format!(
                "negative density {} at x = {}",
                self.min_density, self.x
            ));
        }
        out
    }
}

/// Everything computed at one frozen slow state.
#[derive(Debug, Clone)]
pub struct CellSnapshot {
    pub x: f64,
    pub regime_index: u8,
    pub mu: PeriodicField,
    /// corrector χ (diffusive regime only)
    pub chi: Option<PeriodicField>,
    pub chi_derivative: Option<PeriodicField>,
    pub xi: PeriodicField,
    pub xi_derivative: PeriodicField,
    /// pointwise λᵢ, qᵢ, Jᵢ, Ψᵢ at the nodes
    pub lambda: PeriodicField,
    pub q: PeriodicField,
    pub j: PeriodicField,
    pub psi: PeriodicField,
    pub averages: Averages,
    pub report: CellReport,
}

fn field(grid: TorusGrid, v: Vec<f64>) -> Result<PeriodicField> {
    PeriodicField::new(grid, v)
}

/// Solve all torus problems at slow state `x`.
///
/// In the diffusive regime a centering residual above tolerance is an
/// [`Error::Unsolvable`]: no periodic corrector exists.
pub fn homogenize_at(
    coeffs: &PeriodicCoefficientSet,
    regime_index: u8,
    x: f64,
    grid: &CellGrid,
    tol: &Tolerances,
) -> Result<CellSnapshot> {
    let torus = grid.torus;
    if (torus.period() - coeffs.period).abs() > 1e-12 * coeffs.period {
        return Err(Error::Config(format!(
            "torus period {} differs from coefficient period {}",
            torus.period(),
            coeffs.period
        )));
    }
    let b = grid.sample(|y| coeffs.b.eval(x, y));
    let c = grid.sample(|y| coeffs.c.eval(x, y));
    let sigma2 = grid.sample(|y| coeffs.sigma.eval(x, y).powi(2));
    let psi = grid.sample(|y| coeffs.psi_limit().eval(x, y));

    match regime_index {
        1 => {
            let op = CellOperator::new(
                grid.clone(),
                |y| 0.5 * coeffs.sigma.eval(x, y).powi(2),
                |y| coeffs.b.eval(x, y),
            )?;
            let centering = op.mean(&b.nodes);
            if !(centering.abs() <= tol.centering) {
                return Err(Error::Unsolvable {
                    residual: centering,
                    tolerance: tol.centering,
                });
            }
            let chi = op.solve(&b)?;
            let one_chi = chi.first.map(|v| 1.0 + v);
            let lambda = one_chi.zip(&c, |a, c| a * c);
            let lambda_bar = op.mean(&lambda.nodes);
            let g = lambda.map(|v| v - lambda_bar);
            let xi = relative_to(op.solve(&g)?, &g, lambda.max_abs());
            let q = one_chi.zip(&sigma2, |a, s| a * a * s);
            let j = c.zip(&xi.first, |c, d| c * d);
            let psi_i = one_chi.zip(&psi, |a, p| a * p);
            let averages = Averages {
                lambda_bar,
                q_bar: op.mean(&q.nodes),
                j_bar: op.mean(&j.nodes),
                psi_bar: op.mean(&psi_i.nodes),
            };
            let mut report = base_report(x, op.density(), grid, &xi);
            report.centering_residual = Some(centering);
            report.chi_residual = Some(chi.residual);
            report.chi_mu_mean = Some(chi.mu_mean);
            Ok(CellSnapshot {
                x,
                regime_index,
                mu: field(torus, op.density().to_vec())?,
                chi: Some(field(torus, chi.values.clone())?),
                chi_derivative: Some(field(torus, chi.first.nodes.clone())?),
                xi: field(torus, xi.values.clone())?,
                xi_derivative: field(torus, xi.first.nodes.clone())?,
                lambda: field(torus, lambda.nodes)?,
                q: field(torus, q.nodes)?,
                j: field(torus, j.nodes)?,
                psi: field(torus, psi_i.nodes)?,
                averages,
                report,
            })
        }
        2 => {
            let gamma = coeffs.gamma;
            if !(gamma.is_finite() && gamma >= 0.0) {
                return Err(Error::Config(format!(
                    "resonant regime needs a finite gamma >= 0, got {gamma}"
                )));
            }
            let lambda = b.zip(&c, |b, c| gamma * b + c);
            let (mu, lambda_bar, xi) = if gamma > 0.0 {
                let op = CellOperator::new(
                    grid.clone(),
                    |y| 0.5 * gamma * coeffs.sigma.eval(x, y).powi(2),
                    |y| gamma * coeffs.b.eval(x, y) + coeffs.c.eval(x, y),
                )?;
                let lambda_bar = op.mean(&lambda.nodes);
                let g = lambda.map(|v| v - lambda_bar);
                let xi = relative_to(op.solve(&g)?, &g, lambda.max_abs());
                (op.density().to_vec(), lambda_bar, xi)
            } else {
                let op = TransportOperator::new(grid.clone(), |y| coeffs.c.eval(x, y))?;
                let lambda_bar = op.mean(&lambda.nodes);
                let c_y = coeffs.c.derivative_y();
                let cy = grid.sample(|y| c_y.eval(x, y));
                let g = lambda.map(|v| v - lambda_bar);
                let xi = relative_to(op.solve(&g, &cy, &cy)?, &g, lambda.max_abs());
                (op.density().to_vec(), lambda_bar, xi)
            };
            let one_xi = xi.first.map(|v| 1.0 + v);
            let q = one_xi.zip(&sigma2, |a, s| a * a * s);
            let j = Sampled {
                nodes: (0..grid.n())
                    .map(|i| {
                        b.nodes[i] * one_xi.nodes[i] + 0.5 * sigma2.nodes[i] * xi.second.nodes[i]
                    })
                    .collect(),
                sub: Vec::new(),
            };
            let psi_i = one_xi.zip(&psi, |a, p| a * p);
            let mean = |v: &[f64]| grid.integrate_nodes(v, &mu);
            let averages = Averages {
                lambda_bar,
                q_bar: mean(&q.nodes),
                j_bar: mean(&j.nodes),
                psi_bar: mean(&psi_i.nodes),
            };
            let report = base_report(x, &mu, grid, &xi);
            Ok(CellSnapshot {
                x,
                regime_index,
                mu: field(torus, mu)?,
                chi: None,
                chi_derivative: None,
                xi: field(torus, xi.values.clone())?,
                xi_derivative: field(torus, xi.first.nodes.clone())?,
                lambda: field(torus, lambda.nodes)?,
                q: field(torus, q.nodes)?,
                j: field(torus, j.nodes)?,
                psi: field(torus, psi_i.nodes)?,
                averages,
                report,
            })
        }
        other => Err(Error::Config(format!(
            "regime index must be 1 or 2, got {other}"
        ))),
    }
}

/// Re-express the residual of a solve with right-hand side `g` relative to
/// `reference`, the size of the data `g` was centered from: when the
/// centering cancels to round-off, a residual relative to `g` itself is
/// meaningless.
fn relative_to(mut sol: CellSolution, g: &Sampled, reference: f64) -> CellSolution {
    let gm = g.max_abs();
    if reference > gm {
        sol.residual *= gm / reference;
    }
    sol
}

fn base_report(x: f64, mu: &[f64], grid: &CellGrid, xi: &CellSolution) -> CellReport {
    let mass = grid.h() * mu.iter().sum::<f64>();
    CellReport {
        x,
        xi_residual: xi.residual,
        xi_mu_mean: xi.mu_mean,
        normalization_error: (mass - 1.0).abs(),
        min_density: mu.iter().cloned().fold(f64::INFINITY, f64::min),
        ..Default::default()
    }
}

fn default_cell_grid(grid: TorusGrid) -> Result<CellGrid> {
    CellGrid::new(grid, DEFAULT_GL_ORDER)
}

/// Invariant density of the frozen fast generator at `x`.
pub fn invariant_measure(
    coeffs: &PeriodicCoefficientSet,
    regime_index: u8,
    x: f64,
    grid: TorusGrid,
) -> Result<PeriodicField> {
    let cg = default_cell_grid(grid)?;
    let mu = match regime_index {
        1 => CellOperator::new(
            cg,
            |y| 0.5 * coeffs.sigma.eval(x, y).powi(2),
            |y| coeffs.b.eval(x, y),
        )?
        .density()
        .to_vec(),
        2 if coeffs.gamma > 0.0 && coeffs.gamma.is_finite() => {
            let g = coeffs.gamma;
            CellOperator::new(
                cg,
                |y| 0.5 * g * coeffs.sigma.eval(x, y).powi(2),
                |y| g * coeffs.b.eval(x, y) + coeffs.c.eval(x, y),
            )?
            .density()
            .to_vec()
        }
        2 if coeffs.gamma == 0.0 => TransportOperator::new(cg, |y| coeffs.c.eval(x, y))?
            .density()
            .to_vec(),
        2 => {
            return Err(Error::Config(format!(
                "resonant regime needs a finite gamma >= 0, got {}",
                coeffs.gamma
            )))
        }
        other => {
            return Err(Error::Config(format!(
                "regime index must be 1 or 2, got {other}"
            )))
        }
    };
    PeriodicField::new(grid, mu)
}

/// `∮ b(x, y) μ(dy)`, the solvability residual of the diffusive cell problem.
pub fn check_centering(coeffs: &PeriodicCoefficientSet, x: f64, mu: &PeriodicField) -> f64 {
    let g = *mu.grid();
    let b = PeriodicField::from_fn(g, |y| coeffs.b.eval(x, y));
    match b {
        Ok(b) => b.integrate_against(mu).unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    }
}

/// Corrector χ of the diffusive regime: `L¹χ = −b`, `∮ χ dμ = 0`.
pub fn solve_cell_problem(
    coeffs: &PeriodicCoefficientSet,
    x: f64,
    mu: &PeriodicField,
    grid: TorusGrid,
    tol: &Tolerances,
) -> Result<PeriodicField> {
    let residual = check_centering(coeffs, x, mu);
    if !(residual.abs() <= tol.centering) {
        return Err(Error::Unsolvable {
            residual,
            tolerance: tol.centering,
        });
    }
    let snap = homogenize_at(coeffs, 1, x, &default_cell_grid(grid)?, tol)?;
    Ok(snap.chi.expect("diffusive regime always has a corrector"))
}

/// Ξᵢ: `LⁱΞᵢ = −(λᵢ − λ̄ᵢ)`, `∮ Ξᵢ dμ = 0`.
pub fn solve_auxiliary_pde(
    coeffs: &PeriodicCoefficientSet,
    regime_index: u8,
    x: f64,
    grid: TorusGrid,
    tol: &Tolerances,
) -> Result<PeriodicField> {
    Ok(homogenize_at(coeffs, regime_index, x, &default_cell_grid(grid)?, tol)?.xi)
}

/// `(λ̄, q̄, J̄, Ψ̄)` at `x`.
pub fn averaged_coefficients(
    coeffs: &PeriodicCoefficientSet,
    regime_index: u8,
    x: f64,
    grid: TorusGrid,
    tol: &Tolerances,
) -> Result<Averages> {
    Ok(homogenize_at(coeffs, regime_index, x, &default_cell_grid(grid)?, tol)?.averages)
}

/// Piecewise-cubic Hermite interpolant on a uniform grid, with node slopes
/// from four-point Lagrange stencils (exact for cubics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tabulated {
    pub x_min: f64,
    pub x_max: f64,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl Tabulated {
    pub fn new(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 4 || !(x_max > x_min) {
            return Err(Error::Config(format!(
                "tabulation needs >= 4 points on a nondegenerate range, got {n} on [{x_min}, {x_max}]"
            )));
        }
        let h = (x_max - x_min) / (n - 1) as f64;
        let slopes = (0..n)
            .map(|i| {
                let s = i.saturating_sub(1).min(n - 4);
                let f = &values[s..s + 4];
                let d = match i - s {
                    0 => -11.0 * f[0] + 18.0 * f[1] - 9.0 * f[2] + 2.0 * f[3],
                    1 => -2.0 * f[0] - 3.0 * f[1] + 6.0 * f[2] - f[3],
                    2 => f[0] - 6.0 * f[1] + 3.0 * f[2] + 2.0 * f[3],
                    _ => -2.0 * f[0] + 9.0 * f[1] - 18.0 * f[2] + 11.0 * f[3],
                };
                d / (6.0 * h)
            })
            .collect();
        Ok(Self {
            x_min,
            x_max,
            values,
            slopes,
        })
    }

    fn locate(&self, x: f64) -> Result<(usize, f64, f64)> {
        let n = self.values.len();
        let h = (self.x_max - self.x_min) / (n - 1) as f64;
        let slack = 1e-12 * h;
        if !(x >= self.x_min - slack && x <= self.x_max + slack) {
            return Err(Error::Extrapolation {
                state: x,
                min: self.x_min,
                max: self.x_max,
            });
        }
        let s = ((x - self.x_min) / h).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        Ok((k, s - k as f64, h))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (k, t, h) = self.locate(x)?;
        let (t2, t3) = (t * t, t * t * t);
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * self.values[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.values[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1])
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        let (k, t, h) = self.locate(x)?;
        let t2 = t * t;
        Ok((6.0 * t2 - 6.0 * t) / h * self.values[k]
            + (3.0 * t2 - 4.0 * t + 1.0) * self.slopes[k]
            + (-6.0 * t2 + 6.0 * t) / h * self.values[k + 1]
            + (3.0 * t2 - 2.0 * t) * self.slopes[k + 1])
    }
}

/// Averaged coefficients as functions of the slow state.
pub trait AveragedField: Sync {
    fn lambda_bar(&self, x: f64) -> Result<f64>;
    fn d_lambda_bar(&self, x: f64) -> Result<f64>;
    fn q_bar(&self, x: f64) -> Result<f64>;
    fn j_bar(&self, x: f64) -> Result<f64>;
    fn psi_bar(&self, x: f64) -> Result<f64>;
}

/// Resolution of the homogenization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationSettings {
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default = "default_gl")]
    pub gl_order: usize,
    pub x_min: f64,
    pub x_max: f64,
    #[serde(default = "default_x_points")]
    pub x_points: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_n_points() -> usize {
    512
}

fn default_gl() -> usize {
    DEFAULT_GL_ORDER
}

fn default_x_points() -> usize {
    65
}

impl HomogenizationSettings {
    pub fn new(x_min: f64, x_max: f64) -> Self {
        Self {
            n_points: default_n_points(),
            gl_order: DEFAULT_GL_ORDER,
            x_min,
            x_max,
            x_points: default_x_points(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn x_grid(&self) -> Vec<f64> {
        let n = self.x_points;
        let h = (self.x_max - self.x_min) / (n - 1) as f64;
        (0..n).map(|i| self.x_min + i as f64 * h).collect()
    }
}

/// Homogenized coefficients tabulated over a slow-state range.
#[derive(Debug, Clone)]
pub struct HomogenizedModel {
    pub regime_index: u8,
    pub coefficients: PeriodicCoefficientSet,
    pub settings: HomogenizationSettings,
    pub snapshots: Vec<CellSnapshot>,
    pub lambda_bar: Tabulated,
    pub q_bar: Tabulated,
    pub j_bar: Tabulated,
    pub psi_bar: Tabulated,
}

impl HomogenizedModel {
    /// Solve the torus problems at every x-grid point (in parallel) and tabulate.
    pub fn build(
        coeffs: &PeriodicCoefficientSet,
        regime_index: u8,
        settings: &HomogenizationSettings,
    ) -> Result<Self> {
        if settings.x_points < 4 || !(settings.x_max > settings.x_min) {
            return Err(Error::Config(format!(
                "x-grid needs >= 4 points on a nondegenerate range, got {} on [{}, {}]",
                settings.x_points, settings.x_min, settings.x_max
            )));
        }
        let xs = settings.x_grid();
        coeffs.validate(&xs, &settings.tolerances)?;
        let torus = TorusGrid::new(coeffs.period, settings.n_points)?;
        let grid = CellGrid::new(torus, settings.gl_order)?;
        let snapshots: Vec<CellSnapshot> = xs
            .par_iter()
            .map(|&x| homogenize_at(coeffs, regime_index, x, &grid, &settings.tolerances))
            .collect::<Result<_>>()?;
        let tab = |f: fn(&Averages) -> f64| {
            Tabulated::new(
                settings.x_min,
                settings.x_max,
                snapshots.iter().map(|s| f(&s.averages)).collect(),
            )
        };
        Ok(Self {
            regime_index,
            coefficients: coeffs.clone(),
            settings: *settings,
            lambda_bar: tab(|a| a.lambda_bar)?,
            q_bar: tab(|a| a.q_bar)?,
            j_bar: tab(|a| a.j_bar)?,
            psi_bar: tab(|a| a.psi_bar)?,
            snapshots,
        })
    }

    pub fn x_grid(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.x).collect()
    }

    pub fn violations(&self) -> Vec<String> {
        self.snapshots
            .iter()
            .flat_map(|s| s.report.violations(&self.settings.tolerances))
            .collect()
    }

    /// Serializable summary: tables, grid metadata, tolerances and residuals.
    pub fn document(&self) -> ModelDocument {
        ModelDocument {
            regime_index: self.regime_index,
            gamma: self.coefficients.gamma,
            period: self.coefficients.period,
            n_points: self.settings.n_points,
            gl_order: self.settings.gl_order,
            tolerances: self.settings.tolerances,
            x_grid: self.x_grid(),
            lambda_bar: self.lambda_bar.values.clone(),
            q_bar: self.q_bar.values.clone(),
            j_bar: self.j_bar.values.clone(),
            psi_bar: self.psi_bar.values.clone(),
            residual_report: self.snapshots.iter().map(|s| s.report).collect(),
        }
    }
}

impl AveragedField for HomogenizedModel {
    fn lambda_bar(&self, x: f64) -> Result<f64> {
        self.lambda_bar.eval(x)
    }

    fn d_lambda_bar(&self, x: f64) -> Result<f64> {
        self.lambda_bar.derivative(x)
    }

    fn q_bar(&self, x: f64) -> Result<f64> {
        self.q_bar.eval(x)
    }

    fn j_bar(&self, x: f64) -> Result<f64> {
        self.j_bar.eval(x)
    }

    fn psi_bar(&self, x: f64) -> Result<f64> {
        self.psi_bar.eval(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub regime_index: u8,
    #[serde(with = "ext_f64")]
    pub gamma: f64,
    pub period: f64,
    pub n_points: usize,
    pub gl_order: usize,
    pub tolerances: Tolerances,
    pub x_grid: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub q_bar: Vec<f64>,
    pub j_bar: Vec<f64>,
    pub psi_bar: Vec<f64>,
    pub residual_report: Vec<CellReport>,
}
