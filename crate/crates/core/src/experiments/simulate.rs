//! Plain simulation with moment tracking and a final snapshot.

use std::fmt::Write as _;
use std::fs;

use serde::Serialize;

use super::{write_json, ReportHeader};
use crate::config::RunConfig;
use crate::ensemble::ParticleEnsemble;
use crate::error::Result;
use crate::rng::make_tableau;
use crate::scheme::{simulate, RunOptions, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    /// Empirical `p`-moment, `p` from `[run] p`.
    pub moments: Vec<f64>,
    pub w2_to_origin: Vec<f64>,
    pub diverged_at: Option<u64>,
    #[serde(skip)]
    pub final_ensemble: ParticleEnsemble,
}

impl SimulateReport {
    pub fn write_outputs(&self, cfg: &RunConfig) -> Result<()> {
        fs::create_dir_all(&cfg.run.out_dir)?;
        let mut csv = String::from("step,t,moment,w2_to_origin\n");
        for i in 0..self.steps.len() {
            writeln!(
                csv,
                "{},{},{},{}",
                self.steps[i], self.times[i], self.moments[i], self.w2_to_origin[i]
            )
            .expect("string write");
        }
        fs::write(cfg.output_path("moments.csv"), csv)?;
        let mut snapshot = Vec::new();
        let t = self.times.last().copied().unwrap_or(0.0);
        self.final_ensemble.snapshot_csv(t, &mut snapshot)?;
        fs::write(cfg.output_path("snapshot.csv"), snapshot)?;
        write_json(&cfg.report_path(), self)
    }
}

pub fn run_simulate(cfg: &RunConfig) -> Result<SimulateReport> {
    let model = cfg.model()?;
    let g = &cfg.grid;
    let grid = TimeGrid::new(g.horizon, g.n)?;
    let n = cfg.ensemble.n;
    let tableau = make_tableau(cfg.run.seed, n, model.l, g.horizon, g.n)?;
    let x0 = cfg.ensemble.initial.sample(cfg.run.seed, n, model.d)?;
    let options = RunOptions {
        stride: cfg.run.stride,
        explosion_threshold: cfg.run.explosion_threshold,
    };
    let (mut steps, mut times, mut moments, mut w2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let out = simulate(&model, &grid, &tableau, &cfg.scheme, x0, &options, &mut |ens, k, t| {
        steps.push(k);
        times.push(t);
        moments.push(ens.empirical_moment(cfg.run.p));
        w2.push(ens.w2_to_origin());
    })?;
    Ok(SimulateReport {
        header: ReportHeader::new(cfg, &model),
        steps,
        times,
        moments,
        w2_to_origin: w2,
        diverged_at: out.diverged_at,
        final_ensemble: out.ensemble,
    })
}
