//! Ensemble reports, pass/fail checks and CSV output.

use serde::{Deserialize, Serialize};

use super::config::{StatChecks, MIN_STATISTICAL_PATHS};
use super::stats::{ks_band, ks_statistic, normal_cdf, MomentSummary, Moments, KS_MIN_SAMPLES};
use crate::error::{Error, Result};
use crate::homogenize::ModelDocument;
use crate::limits::clt::MAX_FAILURE_FRACTION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckCategory {
    /// Numerical invariants (residuals, normalizations, closed forms).
    Invariant,
    /// Monte Carlo tolerances.
    Statistical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub category: CheckCategory,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    /// `value ≤ threshold` (NaN fails).
    pub fn at_most(
        name: impl Into<String>,
        category: CheckCategory,
        value: f64,
        threshold: f64,
    ) -> Self {
        Self {
            name: name.into(),
            category,
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    /// `value ≥ threshold` (NaN fails).
    pub fn at_least(
        name: impl Into<String>,
        category: CheckCategory,
        value: f64,
        threshold: f64,
    ) -> Self {
        Self {
            name: name.into(),
            category,
            value,
            threshold,
            pass: value >= threshold,
        }
    }

    /// One grep-able line: `PASS name: value (threshold)`.
    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.6e} (threshold {:.6e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    /// Deterministic exit time, for exit experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_point: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EndpointTallies {
    pub lower: u64,
    pub upper: u64,
    pub no_exit: u64,
}

/// Statistics of one ε of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBlock {
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub beta: f64,
    pub dt: f64,
    pub seed: u64,
    pub first_path: u64,
    pub n_paths: u64,
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<MomentSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<f64>,
    pub ks_band: f64,
    pub tallies: EndpointTallies,
    pub checks: Vec<Check>,
    /// Normalized samples in path order.
    #[serde(skip)]
    pub samples: Vec<f64>,
    #[serde(skip)]
    pub moments: Moments,
}

impl EpsilonBlock {
    /// Recompute moments, KS and checks from `samples`.
    pub fn evaluate(&mut self, criteria: &StatChecks) {
        self.moments = Moments::from_samples(&self.samples);
        self.refresh(criteria);
    }

    fn refresh(&mut self, criteria: &StatChecks) {
        let n = self.samples.len();
        self.summary = self.moments.summary().ok();
        let p = self.prediction;
        self.ks = if n >= KS_MIN_SAMPLES {
            ks_statistic(&self.samples, normal_cdf(p.mean, p.variance)).ok()
        } else {
            None
        };
        self.ks_band = if n > 0 { ks_band(n) } else { f64::INFINITY };
        self.checks
            .retain(|c| c.category == CheckCategory::Invariant);
        let label = |what: &str| format!("eps={} {what}", self.epsilon);
        let stat = CheckCategory::Statistical;
        // small runs (e.g. one slice of a split ensemble) carry no verdict
        if (n as u64) < MIN_STATISTICAL_PATHS {
            return;
        }
        let Some(s) = self.summary else {
            return;
        };
        if let Some(tol) = criteria.variance_rel_tol {
            let dev = (s.variance - p.variance).abs();
            let scale = if p.variance > 0.0 { p.variance } else { 1.0 };
            self.checks.push(Check::at_most(
                label("variance relative error"),
                stat,
                dev / scale,
                tol,
            ));
        }
        if let Some(k) = criteria.mean_se_factor {
            let dev = (s.mean - p.mean).abs();
            self.checks.push(Check::at_most(
                label("mean deviation"),
                stat,
                dev,
                k * s.mean_se + criteria.mean_abs_tol,
            ));
        }
        let t = self.tallies;
        if t != EndpointTallies::default() {
            let total = (t.lower + t.upper + t.no_exit) as f64;
            self.checks.push(Check::at_most(
                label("exit failure fraction"),
                stat,
                t.no_exit as f64 / total,
                MAX_FAILURE_FRACTION,
            ));
            if let Some(min) = criteria.rare_fraction_min {
                let exited = (t.lower + t.upper) as f64;
                self.checks.push(Check::at_least(
                    label("rare endpoint fraction"),
                    stat,
                    t.upper as f64 / exited,
                    min,
                ));
            }
        }
        if let (Some(k), Some(ks)) = (criteria.ks_factor, self.ks) {
            if p.variance > 0.0 {
                self.checks.push(Check::at_most(
                    label("KS statistic"),
                    stat,
                    ks,
                    k * self.ks_band,
                ));
            }
        }
    }

    /// Pool two disjoint path ranges of the same ε; the result equals a single
    /// run over the union.
    pub fn merge(&self, other: &EpsilonBlock, criteria: &StatChecks) -> Result<EpsilonBlock> {
        // an empty block shares its start with the next one, so it goes first
        let (first, second) =
            if (self.first_path, self.n_paths) <= (other.first_path, other.n_paths) {
                (self, other)
            } else {
                (other, self)
            };
        if first.first_path + first.n_paths != second.first_path {
            return Err(Error::Config(format!(
                "path ranges [{}, {}) and [{}, {}) are not adjacent",
                first.first_path,
                first.first_path + first.n_paths,
                second.first_path,
                second.first_path + second.n_paths
            )));
        }
        if first.epsilon != second.epsilon || first.seed != second.seed || first.dt != second.dt {
            return Err(Error::Config("blocks belong to different runs".into()));
        }
        let mut merged = first.clone();
        merged.n_paths += second.n_paths;
        merged.samples.extend_from_slice(&second.samples);
        merged.moments.merge(&second.moments);
        merged.tallies = EndpointTallies {
            lower: first.tallies.lower + second.tallies.lower,
            upper: first.tallies.upper + second.tallies.upper,
            no_exit: first.tallies.no_exit + second.tallies.no_exit,
        };
        // invariant checks do not depend on the path range
        merged
            .checks
            .retain(|c| c.category == CheckCategory::Invariant);
        merged.refresh(criteria);
        Ok(merged)
    }
}

/// Rows of numbers under a header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub kind: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub criteria: Option<StatChecks>,
    pub blocks: Vec<EpsilonBlock>,
    /// Experiment-level checks (homogenization residuals, closed forms, …).
    pub checks: Vec<Check>,
    /// Named scalar results (e.g. predicted constants, scale distances).
    pub values: Vec<(String, f64)>,
    pub notes: Vec<String>,
    /// Tabular output of experiments without sample blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
    #[serde(default)]
    pub wall_time_seconds: f64,
    #[serde(skip)]
    pub model: Option<ModelDocument>,
}

impl EnsembleReport {
    pub fn all_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks
            .iter()
            .chain(self.blocks.iter().flat_map(|b| b.checks.iter()))
    }

    pub fn passed(&self) -> bool {
        self.all_checks().all(|c| c.pass)
    }

    pub fn check_lines(&self) -> Vec<String> {
        self.all_checks().map(Check::line).collect()
    }

    /// The report as JSON without the wall time: a pure function of the
    /// configuration and the master seed.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.wall_time_seconds = 0.0;
        let mut v = serde_json::to_value(&c).expect("reports always serialize");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time_seconds");
        }
        serde_json::to_string_pretty(&v).expect("reports always serialize")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Pool two runs of one experiment over disjoint, adjacent path ranges.
    pub fn merge(&self, other: &EnsembleReport) -> Result<EnsembleReport> {
        if self.config_hash != other.config_hash
            || self.master_seed != other.master_seed
            || self.blocks.len() != other.blocks.len()
        {
            return Err(Error::Config(
                "reports belong to different experiments".into(),
            ));
        }
        let criteria = self.criteria.unwrap_or_default();
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.merge(b, &criteria))
            .collect::<Result<_>>()?;
        let mut merged = self.clone();
        merged.blocks = blocks;
        merged.wall_time_seconds = self.wall_time_seconds + other.wall_time_seconds;
        Ok(merged)
    }

    /// Normalized samples, one column per ε, preceded by a `# config <hash>`
    /// line and a header row; experiments without samples write their table.
    pub fn samples_csv(&self) -> String {
        let mut out = format!("# config {}\n", self.config_hash);
        if let (true, Some(t)) = (self.blocks.is_empty(), &self.table) {
            out.push_str(&t.header.join(","));
            out.push('\n');
            for row in &t.rows {
                let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            return out;
        }
        let header: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("eps={}", b.epsilon))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        let rows = self
            .blocks
            .iter()
            .map(|b| b.samples.len())
            .max()
            .unwrap_or(0);
        for r in 0..rows {
            let row: Vec<String> = self
                .blocks
                .iter()
                .map(|b| b.samples.get(r).map(|v| format!("{v}")).unwrap_or_default())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(first: u64, samples: Vec<f64>) -> EpsilonBlock {
        let mut b = EpsilonBlock {
            epsilon: 0.1,
            delta: None,
            beta: 1.0,
            dt: 1e-3,
            seed: 1,
            first_path: first,
            n_paths: samples.len() as u64,
            prediction: Prediction {
                mean: 0.0,
                variance: 1.0,
                exit_time: None,
                exit_point: None,
            },
            summary: None,
            ks: None,
            ks_band: 0.0,
            tallies: EndpointTallies::default(),
            checks: vec![],
            samples,
            moments: Moments::new(),
        };
        b.evaluate(&StatChecks::default());
        b
    }

    #[test]
    fn merged_blocks_equal_single_run() {
        let xs: Vec<f64> = (0..300)
            .map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0)
            .collect();
        let whole = block(0, xs.clone());
        let a = block(0, xs[..60].to_vec());
        let b = block(60, xs[60..].to_vec());
        let m = b.merge(&a, &StatChecks::default()).unwrap();
        assert_eq!(m.summary, whole.summary);
        assert_eq!(m.ks, whole.ks);
        assert!(!whole.checks.is_empty());
        assert_eq!(m.checks, whole.checks);
        // the short slice alone is too small for a verdict
        assert!(a.checks.is_empty());
        assert_eq!(m.samples, whole.samples);
        let gap = block(500, xs[..10].to_vec());
        assert!(a.merge(&gap, &StatChecks::default()).is_err());
    }

    #[test]
    fn empty_blocks_merge_in_either_order() {
        let xs: Vec<f64> = (0..150).map(|i| (i as f64 * 0.37).sin()).collect();
        let whole = block(0, xs);
        let empty = block(0, vec![]);
        let c = StatChecks::default();
        assert_eq!(whole.merge(&empty, &c).unwrap(), whole);
        assert_eq!(empty.merge(&whole, &c).unwrap(), whole);
    }

    #[test]
    fn normalization_is_linear() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let a = block(0, xs.clone());
        let b = block(0, xs.iter().map(|x| 2.0 * x).collect());
        let (sa, sb) = (a.summary.unwrap(), b.summary.unwrap());
        assert_eq!(sb.mean, 2.0 * sa.mean);
        assert!((sb.variance - 4.0 * sa.variance).abs() < 1e-14);
    }

    #[test]
    fn check_lines_are_greppable() {
        let c = Check::at_most("x", CheckCategory::Statistical, 1.0, 2.0);
        assert!(c.line().starts_with("PASS x:"));
        let c = Check::at_most("y", CheckCategory::Statistical, f64::NAN, 2.0);
        assert!(c.line().starts_with("FAIL y:"));
    }

    #[test]
    fn csv_layout() {
        let r = EnsembleReport {
            kind: "fluctuation".into(),
            config_hash: "abc".into(),
            master_seed: 0,
            criteria: None,
            blocks: vec![block(0, vec![1.0, 2.0]), block(0, vec![3.0])],
            checks: vec![],
            values: vec![],
            notes: vec![],
            table: None,
            wall_time_seconds: 1.5,
            model: None,
        };
        let csv = r.samples_csv();
        assert_eq!(csv, "# config abc\neps=0.1,eps=0.1\n1,3\n2,\n");
        let t = EnsembleReport {
            blocks: vec![],
            table: Some(Table {
                header: vec!["delta".into(), "d".into()],
                rows: vec![vec![0.01, 0.5], vec![0.001, 0.05]],
            }),
            ..r.clone()
        };
        assert_eq!(
            t.samples_csv(),
            "# config abc\ndelta,d\n0.01,0.5\n0.001,0.05\n"
        );
        assert!(!r.canonical_json().contains("wall_time"));
    }
}
