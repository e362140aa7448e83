//! Quadrature rules used by the cell-problem solver and the limit-law
//! integrals: Gauss–Legendre nodes with their integration matrix, adaptive
//! Gauss–Kronrod (7/15) on finite intervals, and composite Simpson on
//! uniform samples.

use crate::error::{Error, Result};

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Values `P_0(t) .. P_{n}(t)` of the Legendre polynomials.
fn legendre_all(n: usize, t: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = t;
    }
    for k in 1..n {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * t * p[k] - kf * p[k - 1]) / (kf + 1.0);
    }
    p
}

impl GaussLegendre {
    /// `n`-point rule, nodes ascending; exact for polynomials of degree `2n−1`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n
            let mut t = -(std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            for _ in 0..100 {
                let p = legendre_all(n, t);
                let pn = p[n];
                let pm = p[n - 1];
                let dp = nf * (t * pn - pm) / (t * t - 1.0);
                let step = pn / dp;
                t -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let p = legendre_all(n, t);
            let dp = nf * (t * p[n] - p[n - 1]) / (t * t - 1.0);
            let w = 2.0 / ((1.0 - t * t) * dp * dp);
            nodes[i] = t;
            nodes[n - 1 - i] = -t;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Matrix `S[j][k] = ∫_{-1}^{t_j} ℓ_k(t) dt` with `ℓ_k` the Lagrange basis on
    /// the nodes, so `Σ_k S[j][k] f(t_k)` integrates the interpolant of `f`
    /// from the left end to node `j`.
    pub fn integration_matrix(&self) -> Vec<Vec<f64>> {
        let q = self.len();
        // ∫_{-1}^{t} P_m = (P_{m+1}(t) − P_{m−1}(t)) / (2m+1), and t+1 for m = 0
        let prim: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|&t| {
                let p = legendre_all(q, t);
                (0..q)
                    .map(|m| {
                        if m == 0 {
                            t + 1.0
                        } else {
                            (p[m + 1] - p[m - 1]) / (2.0 * m as f64 + 1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let basis: Vec<Vec<f64>> = self.nodes.iter().map(|&t| legendre_all(q, t)).collect();
        (0..q)
            .map(|j| {
                (0..q)
                    .map(|k| {
                        let mut s = 0.0;
                        for m in 0..q {
                            s += (2.0 * m as f64 + 1.0) / 2.0 * basis[k][m] * prim[j][m];
                        }
                        self.weights[k] * s
                    })
                    .collect()
            })
            .collect()
    }

    /// `∫_a^b f` with the rule mapped to `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum::<f64>()
            * half
    }
}

const GK15_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss–Kronrod 7/15 panel: (Kronrod estimate, |Kronrod − Gauss|).
fn gk15(a: f64, b: f64, f: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = fc * GK15_WEIGHTS[7];
    let mut gauss = fc * G7_WEIGHTS[3];
    for i in 0..7 {
        let dx = half * GK15_NODES[i];
        let s = f(mid - dx) + f(mid + dx);
        kronrod += GK15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod quadrature of `f` over `[a, b]` with global
/// bisection of the worst panel until the summed error estimate drops below
/// `max(abs_tol, rel_tol·|I|)`.
pub fn adaptive_gk(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let f: &dyn Fn(f64) -> f64 = &f;
    let (i0, e0) = gk15(a, b, f);
    let mut panels = vec![(a, b, i0, e0)];
    for _ in 0..2000 {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            let worst = panels
                .iter()
                .find(|p| !p.2.is_finite())
                .map(|p| 0.5 * (p.0 + p.1))
                .unwrap_or(a);
            return Err(Error::SingularIntegrand { at: worst });
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        let (k, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one panel");
        let (lo, hi, _, _) = panels.swap_remove(k);
        let mid = 0.5 * (lo + hi);
        let (il, el) = gk15(lo, mid, f);
        let (ir, er) = gk15(mid, hi, f);
        panels.push((lo, mid, il, el));
        panels.push((mid, hi, ir, er));
    }
    let worst = panels
        .iter()
        .max_by(|x, y| x.3.total_cmp(&y.3))
        .map(|p| 0.5 * (p.0 + p.1))
        .unwrap_or(a);
    Err(Error::SingularIntegrand { at: worst })
}

/// Composite Simpson on uniformly spaced samples `y_0..y_n` with spacing `h`.
/// An odd number of intervals is handled by closing with a 3/8 panel.
pub fn simpson_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * h * (values[0] + values[1]),
        _ => {
            let intervals = n - 1;
            let (even_end, tail) = if intervals % 2 == 0 {
                (n - 1, 0.0)
            } else if intervals >= 3 {
                let k = n - 4;
                let t = 3.0 * h / 8.0
                    * (values[k] + 3.0 * values[k + 1] + 3.0 * values[k + 2] + values[k + 3]);
                (k, t)
            } else {
                unreachable!("n >= 3 with odd interval count implies at least 3 intervals")
            };
            let mut s = values[0] + values[even_end];
            for (i, v) in values.iter().enumerate().take(even_end).skip(1) {
                s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            s * h / 3.0 + tail
        }
    }
}

/// Cumulative integral of uniform samples: trapezoid on the first interval,
/// then Simpson pairs with a midpoint-consistent update for odd indices.
pub fn cumulative_simpson(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for k in 1..n {
        out[k] = if k >= 2 {
            // integral over [k−2, k] by Simpson, added to out[k−2]
            out[k - 2] + h / 3.0 * (values[k - 2] + 4.0 * values[k - 1] + values[k])
        } else if n >= 3 {
            // first interval from the quadratic through the first three samples
            h / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2])
        } else {
            0.5 * h * (values[0] + values[1])
        };
    }
    out
}
