//! Long-time contraction of the ergodic-tamed scheme.
//!
//! Two ensembles started from different laws are driven by one tableau
//! (synchronous coupling; initial values share their underlying draws too).
//! `W2` between their empirical measures is recorded on a logarithmic step
//! grid and an exponential decay rate is fitted over the decaying segment.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use serde::Serialize;

use super::{write_errors_csv, write_json, ReportHeader, Verdict};
use crate::config::RunConfig;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::metrics::{fit_semilog, w2_estimate, RateFit, W2Method};
use crate::rng::make_tableau;
use crate::scheme::{Stepper, TimeGrid};

/// Contraction rates and step bound computed from assumption constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongTimeConstants {
    pub rho_hat_1: f64,
    /// Present when every constant it needs was supplied.
    pub rho_hat_2: Option<f64>,
    pub h_star: f64,
}

impl LongTimeConstants {
    pub const NAMES: [&'static str; 17] = [
        "Lhat_bsigma_1",
        "Lhat_bsigma_2",
        "Lhat_fg_1",
        "L_b_1",
        "L_b_2",
        "L_b_3",
        "L_b_4",
        "L_f_1",
        "L_f_2",
        "L_bsigma_1",
        "L_bsigma_2",
        "L_bsigma_3",
        "L_bsigma_4",
        "L_bsigma_5",
        "L_fg_1",
        "L_fg_2",
        "L_fg_3",
    ];

    const FOR_RHO_1: [&'static str; 6] = ["Lhat_bsigma_1", "Lhat_bsigma_2", "L_fg_1", "L_b_1", "L_b_2", "L_f_1"];
    const FOR_H_STAR: [&'static str; 4] = ["L_bsigma_1", "L_bsigma_3", "L_fg_1", "L_fg_2"];
    const FOR_RHO_2: [&'static str; 12] = [
        "L_bsigma_1",
        "L_bsigma_2",
        "L_bsigma_4",
        "L_bsigma_5",
        "L_fg_1",
        "L_fg_3",
        "L_b_1",
        "L_b_2",
        "L_b_3",
        "L_b_4",
        "L_f_1",
        "L_f_2",
    ];

    /// `None` when `map` holds no long-time constant at all; an error when it
    /// holds some but not enough for `rho_hat_1` and `h*`.
    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Option<Self>> {
        if !Self::NAMES.iter().any(|n| map.contains_key(*n)) {
            return Ok(None);
        }
        let missing: Vec<&str> = Self::FOR_RHO_1
            .iter()
            .chain(&Self::FOR_H_STAR)
            .filter(|n| !map.contains_key(**n))
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "long-time constants are incomplete; missing {}",
                missing.join(", ")
            )));
        }
        let c = |n: &str| map[n];
        let rho_hat_1 =
            c("Lhat_bsigma_1") - c("Lhat_bsigma_2") - 4.0 * c("L_fg_1") - c("L_b_1") - c("L_b_2") - 4.0 * c("L_f_1");
        let h_star = (c("L_bsigma_1") / (2.0 * c("L_bsigma_3")))
            .powi(2)
            .min((c("L_fg_1") / (2.0 * c("L_fg_2"))).powi(2));
        let rho_hat_2 = Self::FOR_RHO_2.iter().all(|n| map.contains_key(*n)).then(|| {
            (c("L_bsigma_1") / 2.0).min(c("L_bsigma_4")) - (c("L_bsigma_2") + c("L_bsigma_5"))
                + 2.0 * (c("L_fg_1") / 2.0).min(c("L_fg_3"))
                - 4.0 * c("L_b_1").max(c("L_b_3"))
                - 2.0 * c("L_b_2").max(c("L_b_4"))
                - 16.0 * c("L_f_1").max(c("L_f_2"))
        });
        Ok(Some(LongTimeConstants {
            rho_hat_1,
            rho_hat_2,
            h_star,
        }))
    }

    /// `min(h*, 1/(2 rho_hat_1))`, or `None` when `rho_hat_1 <= 0`.
    pub fn step_bound(&self) -> Option<(f64, &'static str)> {
        if !(self.rho_hat_1 > 0.0) {
            return None;
        }
        let contraction = 1.0 / (2.0 * self.rho_hat_1);
        Some(if self.h_star <= contraction {
            (self.h_star, "h*")
        } else {
            (contraction, "1/(2 rho_hat_1)")
        })
    }

    /// Refuses `h` outside `(0, min(h*, 1/(2 rho_hat_1)))`.
    pub fn check_step(&self, h: f64) -> Result<()> {
        match self.step_bound() {
            None => Err(Error::InvalidParameter(format!(
                "rho_hat_1 = {} is not positive, so the constants admit no step size",
                self.rho_hat_1
            ))),
            Some((bound, bound_name)) if h >= bound => Err(Error::StepTooLarge { h, bound_name, bound }),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theory {
    /// `config` or `documented`.
    pub source: &'static str,
    pub constants: LongTimeConstants,
    pub step_bound: Option<f64>,
    /// `rho_hat_1 > 0` and `h` below the step bound.
    pub hypotheses_hold: bool,
}

impl Theory {
    fn new(source: &'static str, constants: LongTimeConstants, h: f64) -> Self {
        Theory {
            source,
            constants,
            step_bound: constants.step_bound().map(|b| b.0),
            hypotheses_hold: constants.check_step(h).is_ok(),
        }
    }
}

/// `W2` between one ensemble's empirical laws at `t` and `2t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stabilization {
    pub early: f64,
    pub late: f64,
    pub early_w2: f64,
    pub late_w2: f64,
    pub early_w2_b: f64,
    pub late_w2_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub metric: &'static str,
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    pub w2: Vec<f64>,
    pub w2_stderr: Vec<f64>,
    /// `ln W2 = slope * t + intercept` over the decaying segment.
    pub decay_fit: Option<RateFit>,
    pub segment_len: usize,
    pub contraction_ratio: f64,
    pub stabilization: Option<Stabilization>,
    pub diverged_at: Option<u64>,
    pub theory: Option<Theory>,
    /// Constants documented for the family, reported whether or not they
    /// satisfy the contraction hypotheses.
    pub documented_theory: Option<Theory>,
    pub verdict: Verdict,
}

impl ErgodicReport {
    pub fn write_outputs(&self, cfg: &RunConfig) -> Result<()> {
        fs::create_dir_all(&cfg.run.out_dir)?;
        let diverged = vec![0; self.steps.len()];
        write_errors_csv(&cfg.errors_csv_path(), &self.steps, &self.w2, &self.w2_stderr, &diverged)?;
        write_json(&cfg.report_path(), self)
    }
}

/// `0` and roughly `points - 1` geometrically spaced steps up to `total`.
pub(crate) fn log_steps(total: u64, points: usize) -> Vec<u64> {
    let mut set = BTreeSet::from([0, total]);
    let m = points.saturating_sub(1).max(1);
    for j in 0..m {
        let k = (total as f64).powf(j as f64 / (m - 1).max(1) as f64).round() as u64;
        set.insert(k.clamp(1, total));
    }
    set.into_iter().collect()
}

/// Length of the leading segment on which `w` strictly decreases and stays
/// above `floor * w[0]`.
pub(crate) fn decaying_segment(w: &[f64], floor: f64) -> usize {
    if w.is_empty() {
        return 0;
    }
    let cut = floor * w[0];
    let mut len = 1;
    while len < w.len() && w[len] < w[len - 1] && w[len] >= cut {
        len += 1;
    }
    len
}

pub fn run_ergodic_contraction(cfg: &RunConfig) -> Result<ErgodicReport> {
    let model = cfg.model()?;
    let g = &cfg.grid;
    let grid = TimeGrid::new(g.horizon, g.n)?;
    let h = grid.h();

    let theory = cfg.long_time_constants()?.map(|c| {
        let source = if cfg.constants.is_empty() { "documented" } else { "config" };
        Theory::new(source, c, h)
    });
    if let Some(t) = &theory {
        t.constants.check_step(h)?;
    }
    let documented: BTreeMap<String, f64> =
        model.documented_constants().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let documented_theory = LongTimeConstants::from_map(&documented)
        .ok()
        .flatten()
        .map(|c| Theory::new("documented", c, h));

    let n = cfg.ensemble.n;
    let d = model.d;
    let seed = cfg.run.seed;
    let tableau = make_tableau(seed, n, model.l, g.horizon, g.n)?;
    let stepper = Stepper::new(&model, &grid, &tableau, &cfg.scheme)?;
    let mut x = cfg.ensemble.initial.sample(seed, n, d)?;
    let mut y = cfg.ergodic.initial_b.sample(seed, n, d)?;

    let total = grid.total_steps;
    let record: BTreeSet<u64> = log_steps(total, cfg.ergodic.log_points).into_iter().collect();
    let e = &cfg.ergodic;
    let marks = [
        grid.floor_index(e.early),
        grid.floor_index(2.0 * e.early),
        grid.floor_index(e.late),
        grid.floor_index(2.0 * e.late),
    ];
    let mut snaps: BTreeMap<u64, (ParticleEnsemble, ParticleEnsemble)> = BTreeMap::new();

    let mut steps = Vec::new();
    let mut times = Vec::new();
    let mut w2 = Vec::new();
    let mut w2_stderr = Vec::new();
    let mut diverged_at = None;
    let threshold = cfg.run.explosion_threshold;
    let blown = |e: &ParticleEnsemble| e.overflowed() || threshold.is_some_and(|t| e.max_abs() > t);
    for k in 0..=total {
        if record.contains(&k) {
            let est = w2_estimate(&x.measure(), &y.measure(), cfg.metric)?;
            steps.push(k);
            times.push(grid.time(k));
            w2.push(est.value);
            w2_stderr.push(est.stderr.unwrap_or(0.0));
        }
        if marks.contains(&k) {
            snaps.insert(k, (x.clone(), y.clone()));
        }
        if k == total {
            break;
        }
        x = stepper.step(&x)?;
        y = stepper.step(&y)?;
        if blown(&x) || blown(&y) {
            diverged_at = Some(k + 1);
            break;
        }
    }

    let stabilization = if diverged_at.is_none() {
        let gap = |a: u64, b: u64, second: bool| {
            let (sa, sb) = (&snaps[&a], &snaps[&b]);
            if second {
                w2_between(&sa.1, &sb.1, cfg.metric)
            } else {
                w2_between(&sa.0, &sb.0, cfg.metric)
            }
        };
        Some(Stabilization {
            early: e.early,
            late: e.late,
            early_w2: gap(marks[0], marks[1], false)?,
            late_w2: gap(marks[2], marks[3], false)?,
            early_w2_b: gap(marks[0], marks[1], true)?,
            late_w2_b: gap(marks[2], marks[3], true)?,
        })
    } else {
        None
    };

    let w0 = w2.first().copied().unwrap_or(0.0);
    let contraction_ratio = match w2.last() {
        Some(&last) if w0 > 0.0 => last / w0,
        _ => 0.0,
    };
    let segment_len = decaying_segment(&w2, e.floor);
    let t = &cfg.tolerance;
    let (decay_fit, verdict) = if w0 == 0.0 && w2.iter().all(|&v| v == 0.0) {
        (None, Verdict::degenerate())
    } else {
        let mut checks = BTreeMap::new();
        checks.insert("no_divergence".to_string(), diverged_at.is_none());
        let fit = fit_semilog(&times[..segment_len], &w2[..segment_len]).ok();
        match &fit {
            Some(fit) => {
                if let Some(max) = t.slope_max {
                    checks.insert("decay_slope".into(), fit.slope < max);
                }
                if let Some(r2) = t.r2_min {
                    checks.insert("r_squared".into(), fit.r_squared >= r2);
                }
            }
            None => {
                checks.insert("fit".into(), false);
            }
        }
        if let Some(ratio) = t.contraction_ratio {
            checks.insert(
                "contraction_ratio".into(),
                diverged_at.is_none() && contraction_ratio < ratio,
            );
        }
        if let Some(s) = &stabilization {
            checks.insert("stabilization".into(), s.late_w2 < s.early_w2 && s.late_w2_b < s.early_w2_b);
        }
        (fit, Verdict::from_checks(checks))
    };

    Ok(ErgodicReport {
        header: ReportHeader::new(cfg, &model),
        metric: cfg.metric.name(),
        steps,
        times,
        w2,
        w2_stderr,
        decay_fit,
        segment_len,
        contraction_ratio,
        stabilization,
        diverged_at,
        theory,
        documented_theory,
        verdict,
    })
}

fn w2_between(a: &ParticleEnsemble, b: &ParticleEnsemble, method: W2Method) -> Result<f64> {
    Ok(w2_estimate(&a.measure(), &b.measure(), method)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::experiments::VerdictStatus;

    fn config(extra: &str) -> RunConfig {
        parse_config(&format!(
            "config_version = 1\nexperiment = \"ergodic\"\n[model]\nfamily = \"ergodic-dissipative\"\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn identical_laws_stay_identical() {
        let cfg = config(
            "[grid]\nT = 4\n[ensemble]\nN = 16\n[ergodic]\ninitial_b = \"gaussian\"\ninitial_b_mean = 0.0\nearly = 0.5\nlate = 1.0\n",
        );
        let report = run_ergodic_contraction(&cfg).unwrap();
        assert!(report.w2.iter().all(|&v| v == 0.0));
        assert_eq!(report.verdict.status, VerdictStatus::Degenerate);
    }

    #[test]
    fn separated_laws_contract() {
        let cfg = config("[grid]\nT = 4\n[ensemble]\nN = 32\n[ergodic]\nearly = 0.5\nlate = 2.0\n[tolerance]\ncontraction_ratio = 0.5\n");
        let report = run_ergodic_contraction(&cfg).unwrap();
        assert_eq!(report.verdict.status, VerdictStatus::Pass, "{:?}", report.verdict);
        assert!(report.decay_fit.unwrap().slope < 0.0);
    }

    #[test]
    fn log_grid_is_sorted_and_bounded() {
        let steps = log_steps(2000, 24);
        assert_eq!(steps[0], 0);
        assert_eq!(steps[1], 1);
        assert_eq!(*steps.last().unwrap(), 2000);
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_steps(1, 5), vec![0, 1]);
    }

    #[test]
    fn segment_stops_at_first_rise_or_floor() {
        assert_eq!(decaying_segment(&[4.0, 2.0, 1.0, 1.5, 0.5], 1e-3), 3);
        assert_eq!(decaying_segment(&[4.0, 2.0, 1e-9], 1e-3), 2);
        assert_eq!(decaying_segment(&[1.0], 0.1), 1);
    }

    #[test]
    fn constants_give_rates_and_bounds() {
        let map: BTreeMap<String, f64> = [
            ("Lhat_bsigma_1", 2.0),
            ("Lhat_bsigma_2", 0.0),
            ("L_fg_1", 0.1),
            ("L_b_1", 0.5),
            ("L_b_2", 0.0),
            ("L_f_1", 0.1),
            ("L_bsigma_1", 1.0),
            ("L_bsigma_3", 1.0),
            ("L_fg_2", 0.1),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let c = LongTimeConstants::from_map(&map).unwrap().unwrap();
        assert!((c.rho_hat_1 - 0.7).abs() < 1e-12);
        // (1/2)^2 = 0.25 against (0.1/0.2)^2 = 0.25
        assert!((c.h_star - 0.25).abs() < 1e-12);
        assert_eq!(c.rho_hat_2, None);
        assert_eq!(c.step_bound().unwrap().1, "h*");
        assert!(c.check_step(0.2).is_ok());
        assert!(matches!(c.check_step(0.25), Err(Error::StepTooLarge { .. })));

        let mut partial = BTreeMap::new();
        partial.insert("L_b_1".to_string(), 1.0);
        assert!(LongTimeConstants::from_map(&partial).is_err());
        assert_eq!(LongTimeConstants::from_map(&BTreeMap::new()).unwrap(), None);
    }

    #[test]
    fn documented_constants_violate_positivity() {
        let cfg = config("");
        let model = cfg.model().unwrap();
        let map = model.documented_constants().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let c = LongTimeConstants::from_map(&map).unwrap().unwrap();
        assert!(c.rho_hat_1 < 0.0);
        assert!(c.rho_hat_2.unwrap() < 0.0);
        assert!(c.check_step(0.01).is_err());
    }
}
