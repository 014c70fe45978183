//! Assumption probes driven from a config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use serde::Serialize;

use super::{write_json, ReportHeader, Verdict};
use crate::config::RunConfig;
use crate::error::Result;
use crate::model::probe::{probe_assumptions, AssumptionReport, AssumptionSet, SampleSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub probes: AssumptionReport,
    pub verdict: Verdict,
}

impl ProbeReport {
    pub fn write_outputs(&self, cfg: &RunConfig) -> Result<()> {
        fs::create_dir_all(&cfg.run.out_dir)?;
        let mut csv = String::from("assumption_id,set,worst_margin,fitted_constant,constant_used,holds\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for e in &self.probes.entries {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                e.assumption_id,
                e.set,
                e.worst_margin,
                opt(e.fitted_constant),
                opt(e.constant_used),
                e.holds
            )
            .expect("string write");
        }
        fs::write(cfg.output_path("probes.csv"), csv)?;
        write_json(&cfg.report_path(), self)
    }
}

pub fn run_probe_assumptions(cfg: &RunConfig) -> Result<ProbeReport> {
    let model = cfg.model()?;
    let sets = match cfg.probe.set.as_str() {
        "documented" => model.documented_sets(),
        other => AssumptionSet::parse_group(other)?,
    };
    let spec = SampleSpec {
        count: cfg.probe.count,
        radius: cfg.probe.radius,
        seed: cfg.probe.seed,
    };
    let probes = probe_assumptions(&model, &sets, &spec, &cfg.constants)?;
    let checks: BTreeMap<String, bool> = probes
        .entries
        .iter()
        .map(|e| (e.assumption_id.clone(), e.holds))
        .collect();
    Ok(ProbeReport {
        header: ReportHeader::new(cfg, &model),
        verdict: Verdict::from_checks(checks),
        probes,
    })
}
