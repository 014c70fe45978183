//! Strong convergence in the step size by self-convergence.
//!
//! Every level of a repetition is driven by the same Brownian path (one
//! tableau at `n_max`), and the run at `n_max` is the reference. The error at
//! level `n` is `[E max_k |X(n)_{t_k} - X(n_max)_{t_k}|^p]^{1/p}`, the mean
//! taken over repetitions and particles, the max over the level's grid.

use rayon::prelude::*;

use super::{collect_levels, fit_checks, lp_error, RateReport, ReportHeader, Verdict, VerdictStatus};
use crate::config::RunConfig;
use crate::ensemble::sorted_sum;
use crate::error::Result;
use crate::metrics::fit_loglog_slope;
use crate::model::CoefficientModel;
use crate::rng::make_tableau;
use crate::scheme::{simulate, RunOptions, TimeGrid};

const REFERENCE: &str = "self-convergence: each level is compared with the n_max run on the same Brownian path";

pub fn run_strong_rate(cfg: &RunConfig) -> Result<RateReport> {
    let model = cfg.model()?;
    let levels = cfg.grid.levels.clone();
    let per_rep: Vec<Vec<Option<f64>>> = (0..cfg.run.reps)
        .into_par_iter()
        .map(|m| strong_rep(cfg, &model, cfg.run.seed.wrapping_add(m as u64)))
        .collect::<Result<_>>()?;
    let (kept, diverged) = collect_levels(&per_rep, levels.len());
    let (errors, stderr): (Vec<f64>, Vec<f64>) = kept.iter().map(|v| lp_error(v, cfg.run.p)).unzip();

    let mut warnings = Vec::new();
    let p_max = model.p0 / (3.0 * model.q + 1.0);
    if cfg.run.p > p_max {
        warnings.push(format!(
            "p = {} exceeds p0/(3q+1) = {p_max:.4} for p0 = {}, q = {}; the rate statement covers smaller p",
            cfg.run.p, model.p0, model.q
        ));
    }

    let hs: Vec<f64> = levels.iter().map(|&n| 1.0 / n as f64).collect();
    let (fit, verdict) = if errors.iter().all(|&e| e == 0.0) {
        (None, Verdict::degenerate())
    } else {
        let mut checks = std::collections::BTreeMap::new();
        checks.insert("no_divergence".to_string(), diverged.iter().all(|&d| d == 0));
        match fit_loglog_slope(&hs, &errors) {
            Ok(fit) => {
                fit_checks(cfg, &fit, &mut checks);
                (Some(fit), Verdict::from_checks(checks))
            }
            Err(e) => {
                warnings.push(format!("rate fit skipped: {e}"));
                checks.insert("fit".into(), false);
                (None, Verdict::from_checks(checks))
            }
        }
    };
    debug_assert!(verdict.status != VerdictStatus::Exploratory);
    Ok(RateReport {
        header: ReportHeader::new(cfg, &model),
        reference: REFERENCE,
        level_kind: "n",
        levels,
        errors,
        stderr,
        diverged,
        fit,
        verdict,
        warnings,
    })
}

/// Per-level mean over particles of `max_k |diff|^p` for one repetition;
/// `None` where the level or the reference diverged.
pub(crate) fn strong_rep(cfg: &RunConfig, model: &CoefficientModel, seed: u64) -> Result<Vec<Option<f64>>> {
    let g = &cfg.grid;
    let n = cfg.ensemble.n;
    let d = model.d;
    let p = cfg.run.p;
    let tableau = make_tableau(seed, n, model.l, g.horizon, g.n_max)?;
    let x0 = cfg.ensemble.initial.sample(seed, n, d)?;
    let finest = g.levels.iter().copied().max().unwrap_or(g.n_max);
    // reference states are needed only on the finest compared grid
    let keep = g.n_max / finest;
    let options = RunOptions {
        stride: keep,
        explosion_threshold: cfg.run.explosion_threshold,
    };

    let ref_grid = TimeGrid::new(g.horizon, g.n_max)?;
    let mut reference: Vec<Vec<f64>> = Vec::with_capacity((ref_grid.total_steps / keep + 1) as usize);
    let outcome = simulate(model, &ref_grid, &tableau, &cfg.scheme, x0.clone(), &options, &mut |ens, _, _| {
        reference.push(ens.states().to_vec())
    })?;
    if outcome.diverged() {
        return Ok(vec![None; g.levels.len()]);
    }

    let mut out = Vec::with_capacity(g.levels.len());
    for &level in &g.levels {
        let grid = TimeGrid::new(g.horizon, level)?;
        let ratio = g.n_max / level / keep;
        let mut worst = vec![0.0_f64; n];
        let options = RunOptions {
            stride: 1,
            explosion_threshold: cfg.run.explosion_threshold,
        };
        let outcome = simulate(model, &grid, &tableau, &cfg.scheme, x0.clone(), &options, &mut |ens, k, _| {
            let target = &reference[(k * ratio) as usize];
            for (i, w) in worst.iter_mut().enumerate() {
                let a = ens.particle(i);
                let b = &target[i * d..(i + 1) * d];
                let dist_sq: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                *w = w.max(crate::vecops::pow_from_sq(dist_sq, p));
            }
        })?;
        if outcome.diverged() {
            out.push(None);
        } else {
            out.push(Some(sorted_sum(&mut worst) / n as f64));
        }
    }
    Ok(out)
}
