//! Built-in coefficient fields `f(x, y)` of a slow state `x` and a fast torus
//! variable `y`.
//!
//! Fields are described declaratively (trigonometric polynomials in `y`,
//! monomial sums in `x`, sums and products of those) so that configurations
//! stay reproducible and derivatives are exact. [`CompiledField`] turns a
//! description into a fast evaluator for the simulation hot loop.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_period() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Field {
    /// `value` everywhere.
    Constant {
        value: f64,
    },
    /// `mean + Σ_k cos[k−1]·cos(2πky/period) + sin[k−1]·sin(2πky/period)`.
    Trig {
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default)]
        mean: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    /// `Σ_k coeffs[k]·x^k`.
    Poly {
        coeffs: Vec<f64>,
    },
    Sum {
        terms: Vec<Field>,
    },
    Product {
        factors: Vec<Field>,
    },
}

impl Default for Field {
    fn default() -> Self {
        Field::zero()
    }
}

impl Field {
    pub fn zero() -> Self {
        Field::Constant { value: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        Field::Constant { value }
    }

    /// Trigonometric polynomial in `y` of the given period.
    pub fn trig(period: f64, mean: f64, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Field::Trig {
            period,
            mean,
            cos,
            sin,
        }
    }

    pub fn poly(coeffs: Vec<f64>) -> Self {
        Field::Poly { coeffs }
    }

    pub fn sum(terms: Vec<Field>) -> Self {
        Field::Sum { terms }
    }

    pub fn product(factors: Vec<Field>) -> Self {
        Field::Product { factors }
    }

    pub fn scaled(self, k: f64) -> Self {
        Field::product(vec![Field::constant(k), self])
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Field::Constant { value } => *value,
            Field::Trig {
                period,
                mean,
                cos,
                sin,
            } => eval_trig(*period, *mean, cos, sin, y),
            Field::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            Field::Sum { terms } => terms.iter().map(|t| t.eval(x, y)).sum(),
            Field::Product { factors } => factors.iter().map(|t| t.eval(x, y)).product(),
        }
    }

    pub fn depends_on_x(&self) -> bool {
        match self {
            Field::Constant { .. } | Field::Trig { .. } => false,
            Field::Poly { coeffs } => coeffs.iter().skip(1).any(|c| *c != 0.0),
            Field::Sum { terms } => terms.iter().any(Field::depends_on_x),
            Field::Product { factors } => factors.iter().any(Field::depends_on_x),
        }
    }

    pub fn depends_on_y(&self) -> bool {
        match self {
            Field::Constant { .. } | Field::Poly { .. } => false,
            Field::Trig { cos, sin, .. } => cos.iter().chain(sin).any(|c| *c != 0.0),
            Field::Sum { terms } => terms.iter().any(Field::depends_on_y),
            Field::Product { factors } => factors.iter().any(Field::depends_on_y),
        }
    }

    /// Exact partial derivative in the fast variable.
    pub fn derivative_y(&self) -> Field {
        match self {
            Field::Constant { .. } | Field::Poly { .. } => Field::zero(),
            Field::Trig {
                period, cos, sin, ..
            } => {
                let w = 2.0 * PI / period;
                let n = cos.len().max(sin.len());
                let mut dc = vec![0.0; n];
                let mut ds = vec![0.0; n];
                for k in 0..n {
                    let kw = (k as f64 + 1.0) * w;
                    dc[k] = kw * sin.get(k).copied().unwrap_or(0.0);
                    ds[k] = -kw * cos.get(k).copied().unwrap_or(0.0);
                }
                Field::trig(*period, 0.0, dc, ds)
            }
            Field::Sum { terms } => Field::sum(terms.iter().map(Field::derivative_y).collect()),
            Field::Product { factors } => product_rule(factors, Field::derivative_y),
        }
    }

    /// Exact partial derivative in the slow variable.
    pub fn derivative_x(&self) -> Field {
        match self {
            Field::Constant { .. } | Field::Trig { .. } => Field::zero(),
            Field::Poly { coeffs } => Field::poly(
                coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, c)| k as f64 * c)
                    .collect(),
            ),
            Field::Sum { terms } => Field::sum(terms.iter().map(Field::derivative_x).collect()),
            Field::Product { factors } => product_rule(factors, Field::derivative_x),
        }
    }

    /// Antiderivative in `x` for fields that do not depend on `y`, with zero
    /// value at `x = 0`. Only monomial sums (and sums/constant multiples of
    /// them) are supported.
    pub fn antiderivative_x(&self) -> Result<Field> {
        match self {
            Field::Constant { value } => Ok(Field::poly(vec![0.0, *value])),
            Field::Poly { coeffs } => {
                let mut out = vec![0.0];
                out.extend(coeffs.iter().enumerate().map(|(k, c)| c / (k as f64 + 1.0)));
                Ok(Field::poly(out))
            }
            Field::Sum { terms } => Ok(Field::sum(
                terms
                    .iter()
                    .map(Field::antiderivative_x)
                    .collect::<Result<_>>()?,
            )),
            _ => Err(Error::InvalidField(
                "antiderivative only available for polynomial fields".into(),
            )),
        }
    }

    /// Coefficients of the polynomial in `x` this field reduces to, for
    /// fields built from constants and polynomials only.
    pub fn polynomial_coeffs(&self) -> Option<Vec<f64>> {
        match self {
            Field::Constant { value } => Some(vec![*value]),
            Field::Poly { coeffs } => Some(coeffs.clone()),
            Field::Trig { .. } => None,
            Field::Sum { terms } => {
                let mut acc = vec![0.0];
                for t in terms {
                    let p = t.polynomial_coeffs()?;
                    if p.len() > acc.len() {
                        acc.resize(p.len(), 0.0);
                    }
                    acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
                }
                Some(acc)
            }
            Field::Product { factors } => {
                let mut acc = vec![1.0];
                for f in factors {
                    let p = f.polynomial_coeffs()?;
                    let mut out = vec![0.0; acc.len() + p.len() - 1];
                    for (i, a) in acc.iter().enumerate() {
                        for (j, b) in p.iter().enumerate() {
                            out[i + j] += a * b;
                        }
                    }
                    acc = out;
                }
                Some(acc)
            }
        }
    }

    /// Check finiteness of all parameters and positivity of trig periods.
    pub fn validate(&self) -> Result<()> {
        match self {
            Field::Constant { value } => finite(*value, "constant"),
            Field::Trig {
                period,
                mean,
                cos,
                sin,
            } => {
                if !(period.is_finite() && *period > 0.0) {
                    return Err(Error::InvalidField(format!(
                        "trig period must be positive, got {period}"
                    )));
                }
                finite(*mean, "trig mean")?;
                cos.iter()
                    .chain(sin)
                    .try_for_each(|c| finite(*c, "trig coefficient"))
            }
            Field::Poly { coeffs } => coeffs
                .iter()
                .try_for_each(|c| finite(*c, "poly coefficient")),
            Field::Sum { terms } => terms.iter().try_for_each(Field::validate),
            Field::Product { factors } => factors.iter().try_for_each(Field::validate),
        }
    }

    /// Largest wrap-around mismatch `|f(x, y+ρ) − f(x, y)|` over a sample set.
    pub fn periodicity_defect(&self, rho: f64, xs: &[f64], n_y: usize) -> f64 {
        let mut worst = 0.0_f64;
        for &x in xs {
            for k in 0..n_y {
                let y = k as f64 * rho / n_y as f64;
                worst = worst.max((self.eval(x, y + rho) - self.eval(x, y)).abs());
            }
        }
        worst
    }
}

fn finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidField(format!("{what} is not finite")))
    }
}

fn product_rule(factors: &[Field], d: impl Fn(&Field) -> Field) -> Field {
    let terms = (0..factors.len())
        .map(|i| {
            let mut fs: Vec<Field> = factors.to_vec();
            fs[i] = d(&factors[i]);
            Field::product(fs)
        })
        .collect();
    Field::sum(terms)
}

fn eval_trig(period: f64, mean: f64, cos: &[f64], sin: &[f64], y: f64) -> f64 {
    let n = cos.len().max(sin.len());
    if n == 0 {
        return mean;
    }
    let (s1, c1) = (2.0 * PI * y / period).sin_cos();
    // harmonics by the angle-addition recurrence
    let (mut sk, mut ck) = (s1, c1);
    let mut acc = mean;
    for k in 0..n {
        acc += cos.get(k).copied().unwrap_or(0.0) * ck + sin.get(k).copied().unwrap_or(0.0) * sk;
        let next_c = ck * c1 - sk * s1;
        let next_s = sk * c1 + ck * s1;
        ck = next_c;
        sk = next_s;
    }
    acc
}

/// Number of table nodes per period for fields that depend on `y` only.
pub const TABLE_NODES: usize = 1 << 14;

/// Evaluator specialised to the structure of a [`Field`].
#[derive(Debug, Clone)]
pub enum CompiledField {
    Zero,
    Constant(f64),
    /// Function of `y` alone, tabulated over one period with linear interpolation.
    YTable {
        period: f64,
        inv_h: f64,
        table: Vec<f64>,
    },
    /// Polynomial in `x` (coefficients in increasing degree).
    Poly(Vec<f64>),
    /// Function of `x` alone.
    X(Field),
    General(Field),
}

impl CompiledField {
    /// Compile `field`; `period` is the fast period ρ used for tabulation.
    pub fn new(field: &Field, period: f64) -> Self {
        let dx = field.depends_on_x();
        let dy = field.depends_on_y();
        match (dx, dy) {
            (false, false) => {
                let v = field.eval(0.0, 0.0);
                if v == 0.0 {
                    CompiledField::Zero
                } else {
                    CompiledField::Constant(v)
                }
            }
            (false, true) => {
                let h = period / TABLE_NODES as f64;
                let mut table: Vec<f64> = (0..TABLE_NODES)
                    .map(|k| field.eval(0.0, k as f64 * h))
                    .collect();
                table.push(table[0]);
                CompiledField::YTable {
                    period,
                    inv_h: 1.0 / h,
                    table,
                }
            }
            (true, false) => match field.polynomial_coeffs() {
                Some(c) => CompiledField::Poly(c),
                None => CompiledField::X(field.clone()),
            },
            (true, true) => CompiledField::General(field.clone()),
        }
    }

    /// Exact evaluator without tabulation.
    pub fn exact(field: &Field) -> Self {
        match (field.depends_on_x(), field.depends_on_y()) {
            (false, false) => CompiledField::Constant(field.eval(0.0, 0.0)),
            _ => CompiledField::General(field.clone()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CompiledField::Zero)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            CompiledField::Zero => 0.0,
            CompiledField::Constant(v) => *v,
            CompiledField::YTable { inv_h, table, .. } => {
                // TABLE_NODES is a power of two, so masking the cell index
                // wraps negative and large arguments alike
                let s = y * inv_h;
                let f = s.floor();
                let k = (f as i64 & (TABLE_NODES as i64 - 1)) as usize;
                let t = s - f;
                table[k] + t * (table[k + 1] - table[k])
            }
            CompiledField::Poly(c) => c.iter().rev().fold(0.0, |acc, c| acc * x + c),
            CompiledField::X(f) | CompiledField::General(f) => f.eval(x, y),
        }
    }
}

/// Serde adapter for reals that may be `±∞`, written as the strings
/// `"inf"` / `"-inf"` in JSON.
pub mod ext_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => other
                    .parse::<f64>()
                    .map_err(|_| serde::de::Error::custom(format!("not a real number: {t}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langevin_drift() -> Field {
        // b(x, y) = −Q′(y), Q = cos 2πy + 0.5 sin 4πy
        Field::trig(1.0, 0.0, vec![1.0], vec![0.0, 0.5])
            .derivative_y()
            .scaled(-1.0)
    }

    #[test]
    fn trig_derivative_matches_finite_difference() {
        let q = Field::trig(0.7, 0.3, vec![1.0, -0.2], vec![0.4, 0.5, 0.1]);
        let dq = q.derivative_y();
        for k in 0..20 {
            let y = k as f64 * 0.037;
            let h = 1e-5;
            let fd = (q.eval(0.0, y + h) - q.eval(0.0, y - h)) / (2.0 * h);
            assert!((dq.eval(0.0, y) - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn poly_calculus() {
        let v = Field::poly(vec![1.0, 0.0, 0.5, 2.0]);
        assert_eq!(v.eval(2.0, 0.3), 1.0 + 2.0 + 16.0);
        assert_eq!(v.derivative_x().eval(2.0, 0.0), 2.0 + 24.0);
        let anti = v.derivative_x().antiderivative_x().unwrap();
        assert!((anti.eval(2.0, 0.0) - (v.eval(2.0, 0.0) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn product_derivatives() {
        let f = Field::product(vec![
            Field::poly(vec![0.0, 1.0, 1.0]),
            Field::trig(1.0, 2.0, vec![1.0], vec![]),
        ]);
        let (x, y) = (0.7, 0.2);
        let h = 1e-6;
        let fx = (f.eval(x + h, y) - f.eval(x - h, y)) / (2.0 * h);
        let fy = (f.eval(x, y + h) - f.eval(x, y - h)) / (2.0 * h);
        assert!((f.derivative_x().eval(x, y) - fx).abs() < 1e-6);
        assert!((f.derivative_y().eval(x, y) - fy).abs() < 1e-6);
        assert!(f.depends_on_x() && f.depends_on_y());
    }

    #[test]
    fn table_evaluation_is_accurate_and_periodic() {
        let b = langevin_drift();
        let c = CompiledField::new(&b, 1.0);
        assert!(matches!(c, CompiledField::YTable { .. }));
        for k in 0..1000 {
            let y = -3.0 + k as f64 * 0.00731;
            assert!((c.eval(5.0, y) - b.eval(5.0, y)).abs() < 1e-5);
        }
    }

    #[test]
    fn structure_detection() {
        assert!(matches!(
            CompiledField::new(&Field::zero(), 1.0),
            CompiledField::Zero
        ));
        let linear = CompiledField::new(&Field::poly(vec![0.0, -1.0]), 1.0);
        assert!(matches!(linear, CompiledField::Poly(_)));
        assert_eq!(linear.eval(2.5, 0.3), -2.5);
        assert!(!Field::trig(1.0, 1.0, vec![0.0], vec![]).depends_on_y());
    }

    #[test]
    fn periodicity_check() {
        let f = Field::trig(0.5, 0.0, vec![1.0], vec![]);
        assert!(f.periodicity_defect(1.0, &[0.0], 32) < 1e-12);
        assert!(f.periodicity_defect(0.75, &[0.0], 32) > 0.1);
    }

    #[test]
    fn infinite_reals_round_trip() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct W {
            #[serde(with = "ext_f64")]
            a: f64,
        }
        let w: W = serde_json::from_str(r#"{"a":"inf"}"#).unwrap();
        assert_eq!(w.a, f64::INFINITY);
        assert_eq!(serde_json::to_string(&w).unwrap(), r#"{"a":"inf"}"#);
        let w: W = serde_json::from_str(r#"{"a":1.5}"#).unwrap();
        assert_eq!(w.a, 1.5);
        assert!(serde_json::from_str::<W>(r#"{"a":"x"}"#).is_err());
    }

    #[test]
    fn json_shape() {
        let f: Field = serde_json::from_str(
            r#"{"type":"sum","terms":[{"type":"poly","coeffs":[0,-1]},{"type":"trig","cos":[1]}]}"#,
        )
        .unwrap();
        assert!((f.eval(2.0, 0.0) - (-1.0)).abs() < 1e-15);
    }
}
