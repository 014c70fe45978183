//! Experiment drivers and their reports.
//!
//! Each driver is a pure function of a [`RunConfig`]; writing the outputs is a
//! separate step so tests can inspect reports without touching the disk.
//! Every rate driver writes `<name>_errors.csv` with the columns
//! `level,error,stderr,diverged_count` and `<name>_report.json`.

pub mod ergodic;
pub mod moments;
pub mod poc;
pub mod probe;
pub mod simulate;
pub mod strong_rate;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::{config_sections_with, RunConfig};
use crate::ensemble::sorted_sum;
use crate::error::Result;
use crate::metrics::RateFit;
use crate::model::CoefficientModel;
use crate::rng::RNG_METHOD;

pub use ergodic::{run_ergodic_contraction, ErgodicReport, LongTimeConstants};
pub use moments::{run_moment_stability, MomentReport};
pub use poc::run_poc_rate;
pub use probe::{run_probe_assumptions, ProbeReport};
pub use simulate::{run_simulate, SimulateReport};
pub use strong_rate::run_strong_rate;

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    /// Nothing to fit (every error is exactly zero).
    Degenerate,
    /// Reported without a pass/fail judgement.
    Exploratory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub checks: BTreeMap<String, bool>,
}

impl Verdict {
    fn from_checks(checks: BTreeMap<String, bool>) -> Self {
        let status = if checks.values().all(|&ok| ok) {
            VerdictStatus::Pass
        } else {
            VerdictStatus::Fail
        };
        Verdict { status, checks }
    }

    fn degenerate() -> Self {
        Verdict {
            status: VerdictStatus::Degenerate,
            checks: BTreeMap::new(),
        }
    }

    pub fn failed(&self) -> bool {
        self.status == VerdictStatus::Fail
    }
}

/// Fields shared by every report: enough to rerun bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportHeader {
    pub experiment: String,
    pub software_version: &'static str,
    pub rng_method: &'static str,
    /// Canonical config without the output directory.
    pub config: serde_json::Value,
    /// The resolved model, family defaults included.
    pub model: CoefficientModel,
}

impl ReportHeader {
    pub fn new(cfg: &RunConfig, model: &CoefficientModel) -> Self {
        let sections: serde_json::Map<String, serde_json::Value> = config_sections_with(cfg, false)
            .into_iter()
            .map(|(name, table)| {
                let value = serde_json::to_value(table).expect("toml tables convert to json");
                (name.to_string(), value)
            })
            .collect();
        ReportHeader {
            experiment: cfg.experiment.as_str().to_string(),
            software_version: SOFTWARE_VERSION,
            rng_method: RNG_METHOD,
            config: serde_json::Value::Object(sections),
            model: model.clone(),
        }
    }
}

/// Report of the strong-rate and propagation-of-chaos drivers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    /// How the unknown exact solution is replaced.
    pub reference: &'static str,
    /// `n` (steps per unit time) or `N` (particles).
    pub level_kind: &'static str,
    pub levels: Vec<u64>,
    pub errors: Vec<f64>,
    pub stderr: Vec<f64>,
    pub diverged: Vec<usize>,
    pub fit: Option<RateFit>,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

impl RateReport {
    pub fn write_outputs(&self, cfg: &RunConfig) -> Result<()> {
        fs::create_dir_all(&cfg.run.out_dir)?;
        write_errors_csv(&cfg.errors_csv_path(), &self.levels, &self.errors, &self.stderr, &self.diverged)?;
        write_json(&cfg.report_path(), self)
    }
}

pub(crate) fn write_errors_csv(
    path: &Path,
    levels: &[u64],
    errors: &[f64],
    stderr: &[f64],
    diverged: &[usize],
) -> Result<()> {
    let mut out = String::from("level,error,stderr,diverged_count\n");
    for (((level, e), s), dv) in levels.iter().zip(errors).zip(stderr).zip(diverged) {
        writeln!(out, "{level},{e},{s},{dv}").expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `(mean)^{1/p}` of per-repetition means of `|e|^p`, with a delta-method
/// standard error. Returns `NaN`s when no repetition survived.
pub(crate) fn lp_error(rep_means: &[f64], p: f64) -> (f64, f64) {
    let m = rep_means.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sorted_sum(&mut rep_means.to_vec()) / m as f64;
    let var = if m > 1 {
        let mut dev: Vec<f64> = rep_means.iter().map(|v| (v - mean) * (v - mean)).collect();
        sorted_sum(&mut dev) / (m - 1) as f64
    } else {
        0.0
    };
    let se_mean = (var / m as f64).sqrt();
    let error = mean.powf(1.0 / p);
    let se = if mean > 0.0 {
        error / (p * mean) * se_mean
    } else {
        0.0
    };
    (error, se)
}

/// Splits per-repetition, per-level results into surviving values and
/// divergence counts, level by level.
pub(crate) fn collect_levels(per_rep: &[Vec<Option<f64>>], levels: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut kept = vec![Vec::new(); levels];
    let mut diverged = vec![0; levels];
    for rep in per_rep {
        for (j, v) in rep.iter().enumerate() {
            match v {
                Some(v) => kept[j].push(*v),
                None => diverged[j] += 1,
            }
        }
    }
    (kept, diverged)
}

/// Band and goodness-of-fit checks shared by the rate drivers.
pub(crate) fn fit_checks(cfg: &RunConfig, fit: &RateFit, checks: &mut BTreeMap<String, bool>) {
    let t = &cfg.tolerance;
    if t.slope_min.is_some() || t.slope_max.is_some() {
        let lo = t.slope_min.unwrap_or(f64::NEG_INFINITY);
        let hi = t.slope_max.unwrap_or(f64::INFINITY);
        checks.insert("slope_in_band".into(), fit.slope >= lo && fit.slope <= hi);
    }
    if let Some(r2) = t.r2_min {
        checks.insert("r_squared".into(), fit.r_squared >= r2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lp_error_of_constant_reps() {
        let (e, se) = lp_error(&[4.0, 4.0, 4.0], 2.0);
        assert_eq!(e, 2.0);
        assert_eq!(se, 0.0);
        let (e, se) = lp_error(&[0.0, 0.0], 2.0);
        assert_eq!((e, se), (0.0, 0.0));
        assert!(lp_error(&[], 2.0).0.is_nan());
    }

    #[test]
    fn lp_error_delta_method() {
        // mean 2, sd 1, se(mean) = 1/sqrt(3); d sqrt(m) = 1/(2 sqrt(m))
        let (e, se) = lp_error(&[1.0, 2.0, 3.0], 2.0);
        assert!((e - 2f64.sqrt()).abs() < 1e-15);
        let expected = 1.0 / (2.0 * 2f64.sqrt()) / 3f64.sqrt();
        assert!((se - expected).abs() < 1e-15);
    }

    #[test]
    fn divergence_counts_per_level() {
        let reps = vec![vec![Some(1.0), None], vec![Some(2.0), Some(3.0)]];
        let (kept, diverged) = collect_levels(&reps, 2);
        assert_eq!(kept, vec![vec![1.0, 2.0], vec![3.0]]);
        assert_eq!(diverged, vec![0, 1]);
    }
}
