//! Moment stability of tamed Euler against blow-up of plain Euler.
//!
//! Both schemes run on the same tableau and initial ensemble with a coarse
//! step; the empirical `p0`-moment is tracked every `stride` steps. A second,
//! deterministic probe starts plain Euler from a large point with the noise
//! switched off and records its first iterates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use serde::Serialize;

use super::{write_errors_csv, write_json, ReportHeader, Verdict};
use crate::config::RunConfig;
use crate::ensemble::ParticleEnsemble;
use crate::error::Result;
use crate::model::{CoefficientModel, PARAM_NAMES};
use crate::rng::make_tableau;
use crate::scheme::{simulate, RunOptions, SchemeConfig, SchemeKind, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeTrace {
    pub scheme: &'static str,
    /// Largest observed moment (the explosion sentinel once diverged).
    pub sup_moment: f64,
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlainProbe {
    pub start: f64,
    pub h: f64,
    pub max_steps: u64,
    /// First coordinate of the single particle, `x_0, x_1, ...`.
    pub iterates: Vec<f64>,
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub p0: f64,
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    pub tamed_moments: Vec<f64>,
    pub plain_moments: Vec<f64>,
    pub tamed: SchemeTrace,
    pub plain: SchemeTrace,
    pub plain_probe: PlainProbe,
    pub verdict: Verdict,
}

impl MomentReport {
    /// Writes the errors summary, the moment series and the JSON report.
    pub fn write_outputs(&self, cfg: &RunConfig) -> Result<()> {
        fs::create_dir_all(&cfg.run.out_dir)?;
        write_errors_csv(
            &cfg.errors_csv_path(),
            &[cfg.grid.n],
            &[self.tamed.sup_moment],
            &[0.0],
            &[usize::from(self.tamed.diverged_at.is_some())],
        )?;
        let mut series = String::from("step,t,tamed_moment,plain_moment\n");
        for (i, &k) in self.steps.iter().enumerate() {
            let plain = self.plain_moments.get(i).map_or(String::new(), |v| v.to_string());
            writeln!(series, "{k},{},{},{plain}", self.times[i], self.tamed_moments[i]).expect("string write");
        }
        fs::write(cfg.output_path("series.csv"), series)?;
        write_json(&cfg.report_path(), self)
    }
}

pub fn run_moment_stability(cfg: &RunConfig) -> Result<MomentReport> {
    let model = cfg.model()?;
    let g = &cfg.grid;
    let p0 = cfg.moment.p0;
    let grid = TimeGrid::new(g.horizon, g.n)?;
    let n = cfg.ensemble.n;
    let seed = cfg.run.seed;
    let tableau = make_tableau(seed, n, model.l, g.horizon, g.n)?;
    let x0 = cfg.ensemble.initial.sample(seed, n, model.d)?;
    let options = RunOptions {
        stride: cfg.run.stride,
        explosion_threshold: cfg.run.explosion_threshold,
    };

    let tamed_scheme = SchemeConfig {
        kind: SchemeKind::TamedEuler,
        ..cfg.scheme
    };
    let plain_scheme = SchemeConfig {
        kind: SchemeKind::PlainEuler,
        ..cfg.scheme
    };

    let mut steps = Vec::new();
    let mut times = Vec::new();
    let mut tamed_moments = Vec::new();
    let tamed_out = simulate(&model, &grid, &tableau, &tamed_scheme, x0.clone(), &options, &mut |ens, k, t| {
        steps.push(k);
        times.push(t);
        tamed_moments.push(ens.empirical_moment(p0));
    })?;
    let mut plain_moments = Vec::new();
    let plain_out = simulate(&model, &grid, &tableau, &plain_scheme, x0, &options, &mut |ens, _, _| {
        plain_moments.push(ens.empirical_moment(p0));
    })?;

    let sup = |v: &[f64]| v.iter().fold(0.0_f64, |m, &x| if x.is_nan() { f64::INFINITY } else { m.max(x) });
    let tamed = SchemeTrace {
        scheme: "tamed_euler",
        sup_moment: sup(&tamed_moments),
        diverged_at: tamed_out.diverged_at,
    };
    let plain = SchemeTrace {
        scheme: "plain_euler",
        sup_moment: sup(&plain_moments),
        diverged_at: plain_out.diverged_at,
    };
    let plain_probe = plain_probe(cfg, &model)?;

    let mut checks = BTreeMap::new();
    checks.insert(
        "tamed_moment_finite".to_string(),
        tamed.diverged_at.is_none() && tamed_moments.iter().all(|m| m.is_finite()),
    );
    checks.insert(
        "plain_probe_diverges".to_string(),
        plain_probe.diverged_at.is_some_and(|k| k <= cfg.moment.plain_max_steps),
    );
    Ok(MomentReport {
        header: ReportHeader::new(cfg, &model),
        p0,
        steps,
        times,
        tamed_moments,
        plain_moments,
        tamed,
        plain,
        plain_probe,
        verdict: Verdict::from_checks(checks),
    })
}

/// Plain Euler for one particle from `plain_start` with every noise
/// coefficient zeroed, for at most `plain_max_steps` steps.
fn plain_probe(cfg: &RunConfig, model: &CoefficientModel) -> Result<PlainProbe> {
    let mut quiet = model.clone();
    for name in PARAM_NAMES.iter().filter(|n| n.contains("noise")) {
        if let Some(slot) = quiet.params.slot(name) {
            *slot = 0.0;
        }
    }
    let n = cfg.grid.n;
    let steps = cfg.moment.plain_max_steps;
    let horizon = steps as f64 / n as f64;
    let grid = TimeGrid::new(horizon, n)?;
    let tableau = make_tableau(cfg.run.seed, 1, quiet.l, horizon, n)?;
    let mut start = vec![0.0; quiet.d];
    start[0] = cfg.moment.plain_start;
    let x0 = ParticleEnsemble::new(1, quiet.d, start)?;
    let scheme = SchemeConfig {
        kind: SchemeKind::PlainEuler,
        ..cfg.scheme
    };
    let options = RunOptions {
        stride: 1,
        explosion_threshold: Some(cfg.run.explosion_threshold.unwrap_or(1e10)),
    };
    let mut iterates = Vec::new();
    let out = simulate(&quiet, &grid, &tableau, &scheme, x0, &options, &mut |ens, _, _| {
        iterates.push(ens.particle(0)[0])
    })?;
    Ok(PlainProbe {
        start: cfg.moment.plain_start,
        h: grid.h(),
        max_steps: steps,
        iterates,
        diverged_at: out.diverged_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::experiments::VerdictStatus;

    const CUBIC: &str = r#"
config_version = 1
experiment = "moment-stability"
[model]
family = "cubic-mean-field"
mean_coupling = 0
kernel_cubic = 0
kernel_noise = 0
"#;

    #[test]
    fn coarse_step_separates_the_schemes() {
        let cfg = parse_config(&format!("{CUBIC}[grid]\nT = 10\n[ensemble]\nN = 8\n")).unwrap();
        let report = run_moment_stability(&cfg).unwrap();
        assert_eq!(report.verdict.status, VerdictStatus::Pass, "{:?}", report.verdict);
        assert_eq!(report.plain_probe.iterates[..3], [3.0, -10.5, 568.3125]);
        assert!(report.plain_probe.diverged_at.unwrap() <= 10);
        assert!(report.tamed.sup_moment.is_finite());
    }

    #[test]
    fn fine_step_from_small_start_agrees() {
        let cfg = parse_config(&format!(
            "{CUBIC}[grid]\nT = 1\nn = 1024\n[ensemble]\nN = 4\ninitial = \"point\"\ninitial_mean = 0.1\n"
        ))
        .unwrap();
        let model = cfg.model().unwrap();
        let grid = TimeGrid::new(1.0, 1024).unwrap();
        let tableau = make_tableau(5, 4, 1, 1.0, 1024).unwrap();
        let x0 = cfg.ensemble.initial.sample(5, 4, 1).unwrap();
        let end = |kind| {
            let scheme = SchemeConfig { kind, ..cfg.scheme };
            simulate(&model, &grid, &tableau, &scheme, x0.clone(), &RunOptions::default(), &mut |_, _, _| {})
                .unwrap()
                .ensemble
        };
        let (tamed, plain) = (end(SchemeKind::TamedEuler), end(SchemeKind::PlainEuler));
        for (a, b) in tamed.states().iter().zip(plain.states()) {
            assert!((a - b).abs() < 1e-2, "{a} vs {b}");
        }
        let report = run_moment_stability(&cfg).unwrap();
        assert!(report.plain.diverged_at.is_none());
    }
}
