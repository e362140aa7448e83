//! Periodic-function arithmetic on the one-dimensional torus.
//!
//! A [`TorusGrid`] covers one period `[0, ρ)` with `n` equispaced nodes
//! `y_k = k·ρ/n`. A [`PeriodicField`] holds samples of a ρ-periodic function
//! on such a grid. Averages use the periodic trapezoid rule, which is
//! spectrally accurate for smooth periodic integrands; derivatives use
//! second-order centered differences with wrap-around.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of grid nodes.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    period: f64,
    n_points: usize,
}

impl TorusGrid {
    pub fn new(period: f64, n_points: usize) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Domain(format!(
                "period must be positive, got {period}"
            )));
        }
        if n_points < MIN_POINTS {
            return Err(Error::Domain(format!(
                "torus grid needs at least {MIN_POINTS} points, got {n_points}"
            )));
        }
        Ok(Self { period, n_points })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.n_points as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |k| self.node(k))
    }

    /// Reduce `y` into `[0, ρ)`.
    pub fn wrap(&self, y: f64) -> f64 {
        let r = y.rem_euclid(self.period);
        // rem_euclid can return exactly `period` for tiny negative inputs
        if r >= self.period {
            0.0
        } else {
            r
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl PeriodicField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidField(format!(
                "expected {} samples, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite sample at node {k}"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Sample `f` at the grid nodes.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().map(f).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_points()])
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Node value with wrap-around indexing.
    pub fn at(&self, k: isize) -> f64 {
        let n = self.values.len() as isize;
        self.values[k.rem_euclid(n) as usize]
    }

    /// Linear interpolation between nodes, periodic in `y`.
    pub fn eval(&self, y: f64) -> f64 {
        let h = self.grid.spacing();
        let s = self.grid.wrap(y) / h;
        let k = (s.floor() as usize).min(self.values.len() - 1);
        let t = s - k as f64;
        let a = self.values[k];
        let b = self.values[(k + 1) % self.values.len()];
        a + t * (b - a)
    }

    /// Pointwise map producing a field on the same grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidField("fields live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.grid, values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `(1/ρ) ∮ f`, periodic trapezoid rule.
    pub fn cell_average(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `∮ f·w dy` for a second field `w` (typically a density).
    pub fn integrate_against(&self, weight: &Self) -> Result<f64> {
        if self.grid != weight.grid {
            return Err(Error::InvalidField("fields live on different grids".into()));
        }
        let s: f64 = self
            .values
            .iter()
            .zip(&weight.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(s * self.grid.spacing())
    }

    /// Centered difference with wrap-around.
    pub fn derivative(&self) -> Self {
        let n = self.values.len();
        let inv = 1.0 / (2.0 * self.grid.spacing());
        let values = (0..n)
            .map(|k| (self.values[(k + 1) % n] - self.values[(k + n - 1) % n]) * inv)
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    /// `∫₀ʸ f` for `y ∈ [0, ρ]` by cumulative trapezoid on the linear interpolant.
    pub fn antiderivative(&self, y: f64) -> Result<f64> {
        let rho = self.grid.period();
        if !(0.0..=rho).contains(&y) {
            return Err(Error::Domain(format!("y = {y} outside [0, {rho}]")));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let h = self.grid.spacing();
        let n = self.values.len();
        let s = y / h;
        let full = (s.floor() as usize).min(n);
        let mut acc = 0.0;
        for k in 0..full {
            acc += 0.5 * (self.values[k] + self.values[(k + 1) % n]);
        }
        acc *= h;
        if full < n {
            let t = s - full as f64;
            let a = self.values[full];
            let b = self.values[(full + 1) % n];
            // exact integral of the linear interpolant over [0, t·h]
            acc += h * t * (a + 0.5 * t * (b - a));
        }
        Ok(acc)
    }
}

pub fn cell_average(f: &PeriodicField) -> f64 {
    f.cell_average()
}

pub fn periodic_derivative(f: &PeriodicField) -> PeriodicField {
    f.derivative()
}

pub fn antiderivative_on_period(f: &PeriodicField, y: f64) -> Result<f64> {
    f.antiderivative(y)
}
