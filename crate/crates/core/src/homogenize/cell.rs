//! Periodic cell problems `a f″ + β f′ = −g` on one period and the invariant
//! density of the generator `a ∂² + β ∂`.
//!
//! The solver uses an exact-difference scheme: writing the operator as
//! `a e^{−Φ}(e^{Φ} f′)′` with `Φ′ = β/a`, the two-point relation between
//! neighbouring nodes is obtained by integrating the ODE exactly across each
//! grid cell. The cell integrals are evaluated with Gauss–Legendre rules, so
//! the only discretization error is quadrature error, which decays
//! spectrally for smooth coefficients. Derivatives come out exactly at the
//! nodes and at the quadrature points, which the averaged coefficients need.
//!
//! Eliminating the node derivatives leaves a cyclic three-point system for
//! the node values, singular along constants. Pinning `f_0 = 0` and dropping
//! the first row makes it tridiagonal and weakly diagonally dominant, so the
//! Thomas algorithm applies; the dropped row becomes the consistency
//! (Fredholm) residual.

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;
use crate::torus::{PeriodicField, TorusGrid};

/// Node and quadrature-point sampling of one period.
#[derive(Debug, Clone)]
pub struct CellGrid {
    pub torus: TorusGrid,
    pub gl: GaussLegendre,
    smat: Vec<Vec<f64>>,
}

impl CellGrid {
    pub fn new(torus: TorusGrid, gl_order: usize) -> Result<Self> {
        if gl_order < 2 {
            return Err(Error::Domain(format!(
                "cell quadrature needs at least 2 points per cell, got {gl_order}"
            )));
        }
        let gl = GaussLegendre::new(gl_order);
        let smat = gl.integration_matrix();
        Ok(Self { torus, gl, smat })
    }

    pub fn n(&self) -> usize {
        self.torus.n_points()
    }

    pub fn q(&self) -> usize {
        self.gl.len()
    }

    pub fn h(&self) -> f64 {
        self.torus.spacing()
    }

    /// Quadrature point `j` of cell `i`.
    pub fn sub_point(&self, i: usize, j: usize) -> f64 {
        self.torus.node(i) + 0.5 * self.h() * (1.0 + self.gl.nodes[j])
    }

    /// Sample `f` at the nodes and at every quadrature point (cell-major).
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Sampled {
        let nodes = self.torus.nodes().map(&f).collect();
        let mut sub = Vec::with_capacity(self.n() * self.q());
        for i in 0..self.n() {
            for j in 0..self.q() {
                sub.push(f(self.sub_point(i, j)));
            }
        }
        Sampled { nodes, sub }
    }

    /// `∫_{y_i}^{sub(i,j)} f` for every quadrature point, from cell samples.
    fn partial_integrals(&self, cell: &[f64], out: &mut [f64]) {
        let half = 0.5 * self.h();
        for (j, o) in out.iter_mut().enumerate() {
            *o = half
                * self.smat[j]
                    .iter()
                    .zip(cell)
                    .map(|(s, v)| s * v)
                    .sum::<f64>();
        }
    }

    fn cell_integral(&self, cell: &[f64]) -> f64 {
        0.5 * self.h()
            * self
                .gl
                .weights
                .iter()
                .zip(cell)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    /// Periodic-trapezoid integral `∮ f w dy` of node samples.
    pub fn integrate_nodes(&self, f: &[f64], weight: &[f64]) -> f64 {
        self.h() * f.iter().zip(weight).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Samples of a function at nodes and quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub nodes: Vec<f64>,
    pub sub: Vec<f64>,
}

impl Sampled {
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Sampled {
        Sampled {
            nodes: self.nodes.iter().map(|&v| f(v)).collect(),
            sub: self.sub.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Sampled, f: impl Fn(f64, f64) -> f64) -> Sampled {
        Sampled {
            nodes: self
                .nodes
                .iter()
                .zip(&other.nodes)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            sub: self
                .sub
                .iter()
                .zip(&other.sub)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.nodes
            .iter()
            .chain(&self.sub)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// The frozen generator `a ∂² + β ∂` on the torus, with its precomputed
/// cell integrals and invariant density.
#[derive(Debug, Clone)]
pub struct CellOperator {
    grid: CellGrid,
    a: Sampled,
    beta: Sampled,
    /// local potential `φ(y) = ∫_{y_i}^{y} β/a` at quadrature points
    phi_sub: Vec<f64>,
    /// potential increment across each cell
    dphi: Vec<f64>,
    /// `∫_cell e^{−φ}`
    w: Vec<f64>,
    mu: Vec<f64>,
}

/// Solution of a cell problem with exact derivatives at all sample points.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub values: Vec<f64>,
    pub first: Sampled,
    pub second: Sampled,
    /// relative residual of the full cyclic system (including the dropped row)
    pub residual: f64,
    /// `∮ f dμ` after normalization
    pub mu_mean: f64,
}

impl CellOperator {
    /// Build the operator from diffusion `a > 0` and drift `β` evaluated on the cell grid.
    pub fn new(grid: CellGrid, a: impl Fn(f64) -> f64, beta: impl Fn(f64) -> f64) -> Result<Self> {
        let a = grid.sample(a);
        let beta = grid.sample(beta);
        if let Some(v) = a
            .nodes
            .iter()
            .chain(&a.sub)
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Precondition(format!(
                "diffusion coefficient must be positive and finite, found {v}"
            )));
        }
        if beta.nodes.iter().chain(&beta.sub).any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite drift sample".into()));
        }
        let (n, q) = (grid.n(), grid.q());
        let ratio: Vec<f64> = beta.sub.iter().zip(&a.sub).map(|(b, a)| b / a).collect();
        let mut phi_sub = vec![0.0; n * q];
        let mut dphi = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut tmp = vec![0.0; q];
        for i in 0..n {
            let cell = &ratio[i * q..(i + 1) * q];
            grid.partial_integrals(cell, &mut phi_sub[i * q..(i + 1) * q]);
            dphi[i] = grid.cell_integral(cell);
            for j in 0..q {
                tmp[j] = (-phi_sub[i * q + j]).exp();
            }
            w[i] = grid.cell_integral(&tmp);
        }
        let mut op = Self {
            grid,
            a,
            beta,
            phi_sub,
            dphi,
            w,
            mu: Vec::new(),
        };
        op.mu = op.compute_density()?;
        Ok(op)
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn diffusion(&self) -> &Sampled {
        &self.a
    }

    pub fn drift(&self) -> &Sampled {
        &self.beta
    }

    /// Invariant density at the nodes, normalized to unit mass over a period.
    pub fn density(&self) -> &[f64] {
        &self.mu
    }

    /// Stationary Fokker–Planck solution: the flux form `(aμ)′ − βμ = −J`
    /// integrates in closed form once `Φ` and `I(y) = ∫₀ʸ e^{−Φ}` are known,
    /// giving `aμ ∝ e^{Φ}(1 − I/I_ρ) + e^{Φ−Φ_ρ} I/I_ρ`.
    fn compute_density(&self) -> Result<Vec<f64>> {
        let n = self.grid.n();
        let mut big_phi = vec![0.0; n + 1];
        for i in 0..n {
            big_phi[i + 1] = big_phi[i] + self.dphi[i];
        }
        let shift = big_phi.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut cum = vec![0.0; n + 1];
        for i in 0..n {
            cum[i + 1] = cum[i] + (-(big_phi[i] - shift)).exp() * self.w[i];
        }
        let total = cum[n];
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::SolverFailure(
                "invariant density normalization overflowed".into(),
            ));
        }
        let phi_n = big_phi[n];
        let logs: Vec<f64> = (0..n)
            .map(|i| {
                let r = cum[i] / total;
                let t1 = big_phi[i] + (1.0 - r).ln();
                let t2 = big_phi[i] - phi_n + r.ln();
                let m = t1.max(t2);
                m + ((t1 - m).exp() + (t2 - m).exp()).ln() - self.a.nodes[i].ln()
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut mu: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let mass = self.grid.h() * mu.iter().sum::<f64>();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::SolverFailure("invariant density has no mass".into()));
        }
        mu.iter_mut().for_each(|m| *m /= mass);
        Ok(mu)
    }

    /// `∮ g dμ` of node samples.
    pub fn mean(&self, g: &[f64]) -> f64 {
        self.grid.integrate_nodes(g, &self.mu)
    }

    /// Solve `a f″ + β f′ = −g` with `∮ f dμ = 0`.
    ///
    /// The caller is responsible for the solvability condition `∮ g dμ = 0`;
    /// any violation shows up in `residual`.
    pub fn solve(&self, g: &Sampled) -> Result<CellSolution> {
        let (n, q) = (self.grid.n(), self.grid.q());
        if g.nodes.len() != n || g.sub.len() != n * q {
            return Err(Error::InvalidField(
                "right-hand side has wrong sample count".into(),
            ));
        }
        // r = (g/a) e^{φ}; Rt(y) = ∫_{y_i}^{y} r; R = Rt(y_{i+1}); s = ∫_cell Rt e^{−φ}
        let mut rt = vec![0.0; n * q];
        let mut big_r = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut r = vec![0.0; q];
        let mut tmp = vec![0.0; q];
        for i in 0..n {
            for j in 0..q {
                let k = i * q + j;
                r[j] = g.sub[k] / self.a.sub[k] * self.phi_sub[k].exp();
            }
            self.grid.partial_integrals(&r, &mut rt[i * q..(i + 1) * q]);
            big_r[i] = self.grid.cell_integral(&r);
            for j in 0..q {
                let k = i * q + j;
                tmp[j] = rt[k] * (-self.phi_sub[k]).exp();
            }
            s[i] = self.grid.cell_integral(&tmp);
        }

        // row k couples f_{k−1}, f_k, f_{k+1}
        let e = |i: usize| (-self.dphi[i]).exp();
        let lower = |k: usize| e((k + n - 1) % n) / self.w[(k + n - 1) % n];
        let upper = |k: usize| 1.0 / self.w[k];
        let rhs = |k: usize| {
            let km = (k + n - 1) % n;
            e(km) * (s[km] / self.w[km] - big_r[km]) - s[k] / self.w[k]
        };

        // pin f_0 = 0, solve rows 1..n−1 for f_1..f_{n−1} (f_n ≡ f_0 = 0)
        let m = n - 1;
        let mut cp = vec![0.0; m];
        let mut dp = vec![0.0; m];
        for idx in 0..m {
            let k = idx + 1;
            let (lo, up) = (lower(k), upper(k));
            let diag = -(lo + up);
            let sub = if idx > 0 { lo } else { 0.0 };
            let sup = if idx + 1 < m { up } else { 0.0 };
            let denom = diag - sub * if idx > 0 { cp[idx - 1] } else { 0.0 };
            if denom.abs() < 1e-300 || !denom.is_finite() {
                return Err(Error::SolverFailure(format!("zero pivot at row {k}")));
            }
            cp[idx] = sup / denom;
            let prev = if idx > 0 { dp[idx - 1] } else { 0.0 };
            dp[idx] = (rhs(k) - sub * prev) / denom;
        }
        let mut f = vec![0.0; n];
        for idx in (0..m).rev() {
            let next = if idx + 1 < m { f[idx + 2] } else { 0.0 };
            f[idx + 1] = dp[idx] - cp[idx] * next;
        }

        // full cyclic residual, including the dropped row
        let mut res_max = 0.0_f64;
        let mut scale = 0.0_f64;
        for k in 0..n {
            let (lo, up) = (lower(k), upper(k));
            let fm = f[(k + n - 1) % n];
            let fp = f[(k + 1) % n];
            let tf = lo * fm - (lo + up) * f[k] + up * fp;
            let d = rhs(k);
            res_max = res_max.max((tf - d).abs());
            scale = scale
                .max(d.abs())
                .max(lo * fm.abs() + (lo + up) * f[k].abs() + up * fp.abs());
        }
        let residual = if scale > 0.0 { res_max / scale } else { 0.0 };

        // exact derivatives at nodes and quadrature points
        let mut first = Sampled {
            nodes: vec![0.0; n],
            sub: vec![0.0; n * q],
        };
        for i in 0..n {
            let gi = (f[(i + 1) % n] - f[i] + s[i]) / self.w[i];
            first.nodes[i] = gi;
            for j in 0..q {
                let k = i * q + j;
                first.sub[k] = (gi - rt[k]) * (-self.phi_sub[k]).exp();
            }
        }
        let second = Sampled {
            nodes: (0..n)
                .map(|i| (-g.nodes[i] - self.beta.nodes[i] * first.nodes[i]) / self.a.nodes[i])
                .collect(),
            sub: (0..n * q)
                .map(|k| (-g.sub[k] - self.beta.sub[k] * first.sub[k]) / self.a.sub[k])
                .collect(),
        };

        let shift = self.mean(&f);
        f.iter_mut().for_each(|v| *v -= shift);
        let mu_mean = self.mean(&f);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure("non-finite cell solution".into()));
        }
        Ok(CellSolution {
            values: f,
            first,
            second,
            residual,
            mu_mean,
        })
    }

    pub fn density_field(&self) -> Result<PeriodicField> {
        PeriodicField::new(self.grid.torus, self.mu.clone())
    }
}

/// Pure transport `c ∂` on the torus (`c > 0`): density `∝ 1/c`, and the
/// solution of `c f′ = −g` by direct integration.
#[derive(Debug, Clone)]
pub struct TransportOperator {
    grid: CellGrid,
    c: Sampled,
    mu: Vec<f64>,
}

impl TransportOperator {
    pub fn new(grid: CellGrid, c: impl Fn(f64) -> f64) -> Result<Self> {
        let c = grid.sample(c);
        let all_pos = c
            .nodes
            .iter()
            .chain(&c.sub)
            .all(|v| v.is_finite() && *v > 0.0);
        let all_neg = c
            .nodes
            .iter()
            .chain(&c.sub)
            .all(|v| v.is_finite() && *v < 0.0);
        if !(all_pos || all_neg) {
            return Err(Error::Precondition(
                "transport velocity changes sign on the torus; no invariant density".into(),
            ));
        }
        let inv: Vec<f64> = c.nodes.iter().map(|v| 1.0 / v).collect();
        let mass = grid.h() * inv.iter().sum::<f64>();
        let mu = inv.iter().map(|v| v / mass).collect();
        Ok(Self { grid, c, mu })
    }

    pub fn density(&self) -> &[f64] {
        &self.mu
    }

    pub fn velocity(&self) -> &Sampled {
        &self.c
    }

    pub fn mean(&self, g: &[f64]) -> f64 {
        self.grid.integrate_nodes(g, &self.mu)
    }

    /// Solve `c f′ = −g`, given also `g′` and `c′` so that `f″` is exact.
    pub fn solve(&self, g: &Sampled, g_y: &Sampled, c_y: &Sampled) -> Result<CellSolution> {
        let (n, q) = (self.grid.n(), self.grid.q());
        let first = g.zip(&self.c, |g, c| -g / c);
        let mut f = vec![0.0; n + 1];
        for i in 0..n {
            f[i + 1] = f[i] + self.grid.cell_integral(&first.sub[i * q..(i + 1) * q]);
        }
        let defect = f[n];
        let scale = first.max_abs() * self.grid.torus.period();
        let residual = if scale > 0.0 {
            defect.abs() / scale
        } else {
            0.0
        };
        f.truncate(n);
        // f″ = −(g′c − g c′)/c²
        let second = Sampled {
            nodes: (0..n)
                .map(|i| {
                    let c = self.c.nodes[i];
                    -(g_y.nodes[i] * c - g.nodes[i] * c_y.nodes[i]) / (c * c)
                })
                .collect(),
            sub: (0..n * q)
                .map(|k| {
                    let c = self.c.sub[k];
                    -(g_y.sub[k] * c - g.sub[k] * c_y.sub[k]) / (c * c)
                })
                .collect(),
        };
        let shift = self.mean(&f);
        f.iter_mut().for_each(|v| *v -= shift);
        let mu_mean = self.mean(&f);
        Ok(CellSolution {
            values: f,
            first,
            second,
            residual,
            mu_mean,
        })
    }
}
