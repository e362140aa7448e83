//! Order-independent sample statistics.
//!
//! Power sums are accumulated exactly (as non-overlapping floating-point
//! expansions) and rounded once, so the statistics of a sample do not depend
//! on the order in which values arrive or on how partial accumulators are
//! merged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact floating-point sum: a list of non-overlapping partials whose
/// mathematical sum equals the sum of everything added so far.
///
/// The expansion is not canonical, so equality compares the represented
/// sums, not the partials.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for p in &other.partials {
            self.add(*p);
        }
    }

    /// The exact sum correctly rounded to the nearest double.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // round-half-even correction when the remaining partials push the
        // result across a rounding boundary
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl PartialEq for ExactSum {
    fn eq(&self, other: &Self) -> bool {
        let mut diff = self.clone();
        for p in &other.partials {
            diff.add(-p);
        }
        // non-overlapping partials cancel only if every one is zero
        diff.partials.iter().all(|p| *p == 0.0)
    }
}

/// Correctly rounded sum of a slice.
pub fn fsum(values: &[f64]) -> f64 {
    let mut s = ExactSum::new();
    for v in values {
        s.add(*v);
    }
    s.value()
}

/// `a·b` as an unevaluated pair `(p, e)` with `p + e = a·b` exactly.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Count and exact power sums `Σx, Σx², Σx³, Σx⁴`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    count: u64,
    sums: [ExactSum; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: u64,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub std: f64,
    /// `std/√n`
    pub mean_se: f64,
    /// `√((m₄ − m₂²)/n)`, the asymptotic standard error of the variance.
    pub variance_se: f64,
    pub skewness: f64,
    /// `√(6/n)`
    pub skewness_se: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: &[f64]) -> Self {
        let mut m = Self::new();
        for s in samples {
            m.add(*s);
        }
        m
    }

    pub fn add(&mut self, x: f64) {
        self.count += 1;
        let x2 = two_prod(x, x);
        self.sums[0].add(x);
        self.sums[1].add(x2.0);
        self.sums[1].add(x2.1);
        let x3 = x2.0 * x;
        self.sums[2].add(x3);
        self.sums[3].add(x3 * x);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.sums[0].value()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.sums[1].value()
    }

    pub fn summary(&self) -> Result<MomentSummary> {
        if self.count < 2 {
            return Err(Error::SampleSize {
                got: self.count as usize,
                min: 2,
            });
        }
        let n = self.count as f64;
        let s1 = self.sums[0].value();
        let mean = s1 / n;
        // Σ(x − m)² = Σx² − m·Σx, evaluated with one rounding of the exact
        // expansion of m·Σx
        let (p, e) = two_prod(mean, s1);
        let mut ss = self.sums[1].clone();
        ss.add(-p);
        ss.add(-e);
        let m2_sum = ss.value().max(0.0);
        let variance = m2_sum / (n - 1.0);
        // third and fourth central moments from the power sums
        let s2 = self.sums[1].value() / n;
        let s3 = self.sums[2].value() / n;
        let s4 = self.sums[3].value() / n;
        let m2 = m2_sum / n;
        let m3 = s3 - 3.0 * mean * s2 + 2.0 * mean.powi(3);
        let m4 = s4 - 4.0 * mean * s3 + 6.0 * mean * mean * s2 - 3.0 * mean.powi(4);
        let std = variance.sqrt();
        Ok(MomentSummary {
            n: self.count,
            mean,
            variance,
            std,
            mean_se: std / n.sqrt(),
            variance_se: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
            skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
            skewness_se: (6.0 / n).sqrt(),
        })
    }
}

/// Minimum sample size accepted by [`ks_statistic`].
pub const KS_MIN_SAMPLES: usize = 50;

/// Kolmogorov–Smirnov distance `sup |F_n − F|` with the two-sided step
/// evaluation `max_i max(i/n − F(x_(i)), F(x_(i)) − (i−1)/n)`.
pub fn ks_statistic(samples: &[f64], reference_cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::SampleSize {
            got: samples.len(),
            min: KS_MIN_SAMPLES,
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = reference_cdf(*x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max))
}

/// The asymptotic `α ≈ 0.01` band `1.63/√n` of the KS statistic.
pub fn ks_band(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// CDF of `N(mean, variance)`; a point mass when `variance = 0`.
pub fn normal_cdf(mean: f64, variance: f64) -> impl Fn(f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let dist = if variance > 0.0 {
        Normal::new(mean, variance.sqrt()).ok()
    } else {
        None
    };
    move |x| match &dist {
        Some(d) => d.cdf(x),
        None => {
            if x >= mean {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn exact_sum_beats_naive_summation() {
        let v = [1e100, 1.0, -1e100, 1e-3];
        assert_eq!(fsum(&v), 1.001);
        assert_eq!(fsum(&[0.1; 10]), 1.0);
        assert_eq!(fsum(&[]), 0.0);
    }

    proptest! {
        #[test]
        fn order_and_merge_invariance(
            xs in prop::collection::vec(-1e6f64..1e6, 2..200),
            split in 0usize..200,
            seed in any::<u64>(),
        ) {
            let all = Moments::from_samples(&xs);
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let k = split.min(xs.len());
            let mut left = Moments::from_samples(&shuffled[..k]);
            left.merge(&Moments::from_samples(&shuffled[k..]));
            prop_assert_eq!(all.summary().unwrap(), left.summary().unwrap());
            prop_assert_eq!(&all, &left);
        }
    }

    #[test]
    fn exact_sums_compare_by_value() {
        let mut a = ExactSum::new();
        for x in [1e100, 1.0, -1e100] {
            a.add(x);
        }
        let mut b = ExactSum::new();
        b.add(1.0);
        assert_eq!(a, b);
        b.add(1e-300);
        assert_ne!(a, b);
    }

    #[test]
    fn summary_of_known_sample() {
        let s = Moments::from_samples(&[1.0, 2.0, 3.0, 4.0])
            .summary()
            .unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!(s.skewness.abs() < 1e-15);
        let c = Moments::from_samples(&[3.0; 10]).summary().unwrap();
        assert_eq!((c.variance, c.mean_se), (0.0, 0.0));
    }

    #[test]
    fn variance_resists_cancellation() {
        let xs: Vec<f64> = (0..1000).map(|i| 1e8 + (i % 2) as f64).collect();
        let s = Moments::from_samples(&xs).summary().unwrap();
        assert!((s.variance - 0.25 * 1000.0 / 999.0).abs() < 1e-9);
    }

    #[test]
    fn ks_on_exact_quantiles() {
        let n = 999;
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d <= 1.0 / (n + 1) as f64 + 1e-15);
    }

    #[test]
    fn ks_on_degenerate_sample() {
        let d = ks_statistic(&[0.0; 100], normal_cdf(0.0, 1.0)).unwrap();
        assert!(d >= 0.5);
        assert!(matches!(
            ks_statistic(&[0.0; 10], normal_cdf(0.0, 1.0)),
            Err(Error::SampleSize { .. })
        ));
    }

    #[test]
    fn ks_on_gaussian_samples() {
        use crate::sde::NormalStream;
        let n = 10_000;
        let mut inside = 0;
        for rep in 0..100 {
            let mut s = NormalStream::new(rep, 0);
            let xs: Vec<f64> = (0..n).map(|_| s.next()).collect();
            if ks_statistic(&xs, normal_cdf(0.0, 1.0)).unwrap() < ks_band(n) {
                inside += 1;
            }
        }
        assert!(inside >= 99, "{inside}");
    }
}
