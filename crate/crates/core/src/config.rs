//! Run configuration: a single sectioned TOML document.
//!
//! ```toml
//! config_version = 1
//! experiment = "strong-rate"
//!
//! [model]
//! family = "cubic-mean-field"
//! d = 1
//! mean_coupling = 0.25      # any other key is a family parameter
//!
//! [grid]
//! T = 1.0
//! levels = [16, 32, 64, 128, 256, 512]
//! n_max = 1024
//! ```
//!
//! Parsing fills every omitted key from the default table of the experiment
//! and validates all cross-field constraints up front, reporting every
//! violation at once. [`emit_config`] writes the canonical form, which parses
//! back to the same [`RunConfig`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use toml::{Table, Value};

use crate::error::{ConfigErrors, Error, Result};
use crate::experiments::ergodic::LongTimeConstants;
use crate::metrics::{W2Method, DEFAULT_ASSIGNMENT_CAP, DEFAULT_PROJECTIONS};
use crate::model::probe::{AssumptionSet, INEQUALITIES};
use crate::model::{CoefficientModel, FamilyId, MeasureMode, PARAM_NAMES};
use crate::scheme::{InitialLaw, InteractionMode, SchemeConfig, SchemeKind};
use crate::taming::TamingVariant;

pub const CONFIG_VERSION: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Simulate,
    StrongRate,
    PocRate,
    MomentStability,
    Ergodic,
    ProbeAssumptions,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Simulate,
        ExperimentKind::StrongRate,
        ExperimentKind::PocRate,
        ExperimentKind::MomentStability,
        ExperimentKind::Ergodic,
        ExperimentKind::ProbeAssumptions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::StrongRate => "strong-rate",
            ExperimentKind::PocRate => "poc-rate",
            ExperimentKind::MomentStability => "moment-stability",
            ExperimentKind::Ergodic => "ergodic",
            ExperimentKind::ProbeAssumptions => "probe-assumptions",
        }
    }

    /// Default prefix of output files.
    pub fn file_stem(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::StrongRate => "strong_rate",
            ExperimentKind::PocRate => "poc_rate",
            ExperimentKind::MomentStability => "moment_stability",
            ExperimentKind::Ergodic => "ergodic",
            ExperimentKind::ProbeAssumptions => "probe_assumptions",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "experiment",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub family: FamilyId,
    pub d: usize,
    pub l: usize,
    pub q: f64,
    pub p0: f64,
    pub p1: f64,
    /// Parameter overrides; omitted parameters keep the family default.
    pub params: BTreeMap<String, f64>,
}

impl ModelSection {
    pub fn build(&self) -> Result<CoefficientModel> {
        CoefficientModel::with_overrides(self.family, self.d, self.l, &self.params)?
            .with_q(self.q)?
            .with_p0(self.p0)?
            .with_p1(self.p1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub horizon: f64,
    /// Steps per unit time for single-level runs.
    pub n: u64,
    /// Dyadic level chain for strong-rate runs.
    pub levels: Vec<u64>,
    pub n_max: u64,
}

impl GridSection {
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSection {
    pub n: usize,
    pub sizes: Vec<usize>,
    pub n_ref: usize,
    pub probe_count: usize,
    pub initial: InitialLaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    pub reps: usize,
    pub p: f64,
    pub stride: u64,
    pub out_dir: PathBuf,
    /// Output file prefix.
    pub name: String,
    pub explosion_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tolerance {
    pub slope_min: Option<f64>,
    pub slope_max: Option<f64>,
    pub r2_min: Option<f64>,
    pub contraction_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSection {
    /// `documented`, `all`, `ergodic` or a single assumption id.
    pub set: String,
    pub count: usize,
    pub radius: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicSection {
    /// Law of the second, synchronously coupled ensemble.
    pub initial_b: InitialLaw,
    pub log_points: usize,
    /// The decaying segment ends once W2 drops below `floor * W2(0)`.
    pub floor: f64,
    /// Stabilization diagnostic compares `(t, 2t)` at these two times.
    pub early: f64,
    pub late: f64,
    /// Use the family's documented long-time constants when `[constants]` is empty.
    pub documented_constants: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSection {
    pub p0: f64,
    pub plain_start: f64,
    pub plain_max_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSection,
    pub grid: GridSection,
    pub ensemble: EnsembleSection,
    pub scheme: SchemeConfig,
    pub run: RunSection,
    pub metric: W2Method,
    pub tolerance: Tolerance,
    pub constants: BTreeMap<String, f64>,
    pub probe: ProbeSection,
    pub ergodic: ErgodicSection,
    pub moment: MomentSection,
}

impl RunConfig {
    pub fn model(&self) -> Result<CoefficientModel> {
        self.model.build()
    }

    pub fn errors_csv_path(&self) -> PathBuf {
        self.run.out_dir.join(format!("{}_errors.csv", self.run.name))
    }

    pub fn report_path(&self) -> PathBuf {
        self.run.out_dir.join(format!("{}_report.json", self.run.name))
    }

    pub fn output_path(&self, suffix: &str) -> PathBuf {
        self.run.out_dir.join(format!("{}_{suffix}", self.run.name))
    }

    /// Long-time constants from `[constants]`, or the documented ones when
    /// requested and the section is empty.
    pub fn long_time_constants(&self) -> Result<Option<LongTimeConstants>> {
        if !self.constants.is_empty() {
            return LongTimeConstants::from_map(&self.constants);
        }
        if self.ergodic.documented_constants {
            let model = self.model()?;
            let documented: BTreeMap<String, f64> = model
                .documented_constants()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            return LongTimeConstants::from_map(&documented);
        }
        Ok(None)
    }
}

/// Names accepted in `[constants]`.
pub fn known_constant_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = INEQUALITIES.iter().flat_map(|i| i.constant_names()).collect();
    names.extend(LongTimeConstants::NAMES);
    names.sort_unstable();
    names.dedup();
    names
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_as(text, None)
}

/// Like [`parse_config`], with the experiment supplied by the caller when the
/// document omits it. A document naming a different experiment is rejected.
pub fn parse_config_as(text: &str, expected: Option<ExperimentKind>) -> Result<RunConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let msg = e.message().trim().to_string();
        Error::Config(ConfigErrors(vec![match line {
            Some(line) => format!("syntax error at line {line}: {msg}"),
            None => format!("syntax error: {msg}"),
        }]))
    })?;
    let mut r = Reader::default();
    let cfg = r.read(&table, expected);
    match cfg {
        Some(cfg) if r.errors.is_empty() => {
            let mut errors = r.errors;
            validate(&cfg, &mut errors);
            if errors.is_empty() {
                Ok(cfg)
            } else {
                Err(Error::Config(ConfigErrors(errors)))
            }
        }
        _ => Err(Error::Config(ConfigErrors(r.errors))),
    }
}

#[derive(Default)]
struct Reader {
    errors: Vec<String>,
}

const TOP_KEYS: &[&str] = &[
    "config_version",
    "experiment",
    "model",
    "grid",
    "ensemble",
    "scheme",
    "run",
    "metric",
    "tolerance",
    "constants",
    "probe",
    "ergodic",
    "moment",
];

/// A section with the keys already consumed, so leftovers can be reported.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    used: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn leftovers(&self) -> Vec<(&'a String, &'a Value)> {
        match self.table {
            Some(t) => t.iter().filter(|(k, _)| !self.used.contains(&k.as_str())).collect(),
            None => Vec::new(),
        }
    }
}

impl Reader {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn section<'a>(&mut self, root: &'a Table, name: &'static str) -> Section<'a> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.err(format!("`{name}` must be a [section]"));
                None
            }
        };
        Section {
            name,
            table,
            used: Vec::new(),
        }
    }

    fn finish(&mut self, s: &Section<'_>) {
        for (k, _) in s.leftovers() {
            self.err(format!("unknown key [{}] {k}", s.name));
        }
    }

    fn f64_opt(&mut self, s: &mut Section<'_>, key: &'static str) -> Option<f64> {
        match s.get(key) {
            None => None,
            Some(Value::Float(v)) => Some(*v),
            Some(Value::Integer(v)) => Some(*v as f64),
            Some(other) => {
                self.err(format!("[{}] {key} must be a number, got {}", s.name, other.type_str()));
                None
            }
        }
    }

    fn f64(&mut self, s: &mut Section<'_>, key: &'static str, default: f64) -> f64 {
        self.f64_opt(s, key).unwrap_or(default)
    }

    fn u64_opt(&mut self, s: &mut Section<'_>, key: &'static str) -> Option<u64> {
        match s.get(key) {
            None => None,
            Some(Value::Integer(v)) if *v >= 0 => Some(*v as u64),
            Some(Value::Integer(v)) => {
                self.err(format!("[{}] {key} must be >= 0, got {v}", s.name));
                None
            }
            Some(other) => {
                self.err(format!("[{}] {key} must be an integer, got {}", s.name, other.type_str()));
                None
            }
        }
    }

    fn u64(&mut self, s: &mut Section<'_>, key: &'static str, default: u64) -> u64 {
        self.u64_opt(s, key).unwrap_or(default)
    }

    fn usize(&mut self, s: &mut Section<'_>, key: &'static str, default: usize) -> usize {
        self.u64_opt(s, key).map_or(default, |v| v as usize)
    }

    fn bool(&mut self, s: &mut Section<'_>, key: &'static str, default: bool) -> bool {
        match s.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                self.err(format!("[{}] {key} must be true or false, got {}", s.name, other.type_str()));
                default
            }
        }
    }

    fn string(&mut self, s: &mut Section<'_>, key: &'static str) -> Option<String> {
        match s.get(key) {
            None => None,
            Some(Value::String(v)) => Some(v.clone()),
            Some(other) => {
                self.err(format!("[{}] {key} must be a string, got {}", s.name, other.type_str()));
                None
            }
        }
    }

    fn parsed<T: FromStr<Err = Error>>(&mut self, s: &mut Section<'_>, key: &'static str, default: T) -> T {
        match self.string(s, key) {
            None => default,
            Some(v) => match v.parse() {
                Ok(t) => t,
                Err(e) => {
                    self.err(format!("[{}] {key}: {e}", s.name));
                    default
                }
            },
        }
    }

    fn u64_list(&mut self, s: &mut Section<'_>, key: &'static str, default: &[u64]) -> Vec<u64> {
        match s.get(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Integer(v) if *v > 0 => out.push(*v as u64),
                        other => {
                            self.err(format!("[{}] {key} entries must be positive integers, got {other}", s.name));
                        }
                    }
                }
                out
            }
            Some(other) => {
                self.err(format!("[{}] {key} must be an array, got {}", s.name, other.type_str()));
                default.to_vec()
            }
        }
    }

    /// A scalar (broadcast to `d` components) or an array of `d` numbers.
    fn vector(&mut self, s: &mut Section<'_>, key: &'static str, d: usize, default: f64) -> Vec<f64> {
        match s.get(key) {
            None => vec![default; d],
            Some(Value::Float(v)) => vec![*v; d],
            Some(Value::Integer(v)) => vec![*v as f64; d],
            Some(Value::Array(items)) => {
                let out: Vec<f64> = items
                    .iter()
                    .filter_map(|v| match v {
                        Value::Float(f) => Some(*f),
                        Value::Integer(i) => Some(*i as f64),
                        _ => None,
                    })
                    .collect();
                if out.len() != items.len() {
                    self.err(format!("[{}] {key} entries must be numbers", s.name));
                } else if out.len() != d {
                    self.err(format!("[{}] {key} has {} entries, d = {d}", s.name, out.len()));
                }
                out
            }
            Some(other) => {
                self.err(format!("[{}] {key} must be a number or array, got {}", s.name, other.type_str()));
                vec![default; d]
            }
        }
    }

    fn initial_law(
        &mut self,
        s: &mut Section<'_>,
        prefix: Prefix,
        d: usize,
        default: (&str, f64, f64),
    ) -> InitialLaw {
        let kind = self.string(s, prefix.law).unwrap_or_else(|| default.0.to_string());
        let mean = self.vector(s, prefix.mean, d, default.1);
        let std = self.f64(s, prefix.std, default.2);
        let radius = self.f64(s, prefix.radius, 1.0);
        match kind.as_str() {
            "point" => InitialLaw::Point { at: mean },
            "gaussian" => InitialLaw::Gaussian { mean, std },
            "uniform_ball" => InitialLaw::UniformBall { center: mean, radius },
            other => {
                self.err(format!(
                    "[{}] {}: unknown initial law `{other}` (point, gaussian, uniform_ball)",
                    s.name, prefix.law
                ));
                InitialLaw::Point { at: mean }
            }
        }
    }

    fn read(&mut self, root: &Table, expected: Option<ExperimentKind>) -> Option<RunConfig> {
        for key in root.keys() {
            if !TOP_KEYS.contains(&key.as_str()) {
                self.err(format!("unknown top-level key `{key}`"));
            }
        }
        match root.get("config_version") {
            None => self.err("config_version is required (current version: 1)".into()),
            Some(Value::Integer(CONFIG_VERSION)) => {}
            Some(other) => self.err(format!("unsupported config_version {other} (expected 1)")),
        }
        let experiment = match (root.get("experiment"), expected) {
            (Some(Value::String(s)), _) => match s.parse::<ExperimentKind>() {
                Ok(k) => {
                    if let Some(e) = expected.filter(|e| *e != k) {
                        self.err(format!("config is for experiment `{k}`, not `{e}`"));
                    }
                    Some(k)
                }
                Err(e) => {
                    self.err(e.to_string());
                    None
                }
            },
            (Some(other), _) => {
                self.err(format!("experiment must be a string, got {}", other.type_str()));
                None
            }
            (None, Some(k)) => Some(k),
            (None, None) => {
                self.err("experiment is required".into());
                None
            }
        };
        let kind = experiment.unwrap_or(ExperimentKind::Simulate);
        let defaults = Defaults::for_kind(kind);

        // [model]
        let mut s = self.section(root, "model");
        let family = match self.string(&mut s, "family") {
            Some(name) => match name.parse::<FamilyId>() {
                Ok(f) => Some(f),
                Err(e) => {
                    self.err(format!("[model] family: {e}"));
                    None
                }
            },
            None => {
                self.err("[model] family is required".into());
                None
            }
        };
        let fam = family.unwrap_or(FamilyId::LipschitzBaseline);
        let d = self.usize(&mut s, "d", 1);
        let l = self.usize(&mut s, "l", d);
        let q = self.f64(&mut s, "q", fam.default_q());
        let base = CoefficientModel::new(fam, d.max(1), l.max(1)).ok();
        let p0 = self.f64(&mut s, "p0", base.as_ref().map_or(2.0, |m| m.p0));
        let p1 = self.f64(&mut s, "p1", base.as_ref().map_or(4.0, |m| m.p1));
        if let Some(mode) = self.string(&mut s, "measure_mode") {
            match mode.parse::<MeasureMode>() {
                Ok(m) if m == fam.measure_mode() => {}
                Ok(m) => self.err(format!(
                    "[model] measure_mode = {} but family {fam} is {}",
                    m.as_str(),
                    fam.measure_mode().as_str()
                )),
                Err(e) => self.err(format!("[model] measure_mode: {e}")),
            }
        }
        let mut params = BTreeMap::new();
        for (k, v) in s.leftovers() {
            if !PARAM_NAMES.contains(&k.as_str()) {
                self.err(format!("unknown key [model] {k}"));
                continue;
            }
            match v {
                Value::Float(x) => {
                    params.insert(k.clone(), *x);
                }
                Value::Integer(x) => {
                    params.insert(k.clone(), *x as f64);
                }
                other => self.err(format!("[model] {k} must be a number, got {}", other.type_str())),
            }
        }
        let model = ModelSection {
            family: fam,
            d,
            l,
            q,
            p0,
            p1,
            params,
        };

        // [grid]
        let mut s = self.section(root, "grid");
        let horizon = self.f64(&mut s, "T", defaults.horizon);
        let n = self.u64(&mut s, "n", defaults.n);
        let levels = self.u64_list(&mut s, "levels", &[16, 32, 64, 128, 256, 512]);
        let n_max = self.u64(&mut s, "n_max", 1024);
        self.finish(&s);
        let grid = GridSection {
            horizon,
            n,
            levels,
            n_max,
        };

        // [ensemble]
        let mut s = self.section(root, "ensemble");
        let n_particles = self.usize(&mut s, "N", defaults.particles);
        let sizes = self
            .u64_list(&mut s, "sizes", &[16, 32, 64, 128, 256])
            .into_iter()
            .map(|v| v as usize)
            .collect();
        let n_ref = self.usize(&mut s, "N_ref", 1024);
        let probe_count = self.usize(&mut s, "probe_count", 16);
        let initial = self.initial_law(&mut s, Prefix::A, d, (defaults.initial, 0.0, 1.0));
        self.finish(&s);
        let ensemble = EnsembleSection {
            n: n_particles,
            sizes,
            n_ref,
            probe_count,
            initial,
        };

        // [scheme]
        let mut s = self.section(root, "scheme");
        let scheme = SchemeConfig {
            kind: self.parsed(&mut s, "kind", SchemeKind::TamedEuler),
            taming: self.parsed(&mut s, "taming", defaults.taming),
            interaction: self.parsed(&mut s, "interaction", InteractionMode::Naive),
        };
        self.finish(&s);

        // [run]
        let mut s = self.section(root, "run");
        let run = RunSection {
            seed: self.u64(&mut s, "seed", 1),
            reps: self.usize(&mut s, "reps", 32),
            p: self.f64(&mut s, "p", 2.0),
            stride: self.u64(&mut s, "stride", 1),
            out_dir: PathBuf::from(self.string(&mut s, "out_dir").unwrap_or_else(|| "out".into())),
            name: self.string(&mut s, "name").unwrap_or_else(|| kind.file_stem().into()),
            explosion_threshold: self.f64_opt(&mut s, "explosion_threshold").or(defaults.threshold),
        };
        self.finish(&s);

        // [metric]
        let mut s = self.section(root, "metric");
        let method = self.string(&mut s, "method").unwrap_or_else(|| "sorted_1d".into());
        let projections = self.usize(&mut s, "projections", DEFAULT_PROJECTIONS);
        let cap = self.usize(&mut s, "assignment_cap", DEFAULT_ASSIGNMENT_CAP);
        let metric_seed = self.u64(&mut s, "seed", 0);
        self.finish(&s);
        let metric = match method.as_str() {
            "sorted_1d" => W2Method::Sorted1d,
            "exact_assignment" => W2Method::ExactAssignment { cap },
            "sliced" => W2Method::Sliced {
                projections,
                seed: metric_seed,
            },
            other => {
                self.err(format!(
                    "[metric] method: unknown W2 method `{other}` (sorted_1d, exact_assignment, sliced)"
                ));
                W2Method::Sorted1d
            }
        };

        // [tolerance]
        let mut s = self.section(root, "tolerance");
        let tolerance = Tolerance {
            slope_min: self.f64_opt(&mut s, "slope_min").or(defaults.tolerance.slope_min),
            slope_max: self.f64_opt(&mut s, "slope_max").or(defaults.tolerance.slope_max),
            r2_min: self.f64_opt(&mut s, "r2_min").or(defaults.tolerance.r2_min),
            contraction_ratio: self
                .f64_opt(&mut s, "contraction_ratio")
                .or(defaults.tolerance.contraction_ratio),
        };
        self.finish(&s);

        // [constants]
        let s = self.section(root, "constants");
        let known = known_constant_names();
        let mut constants = BTreeMap::new();
        for (k, v) in s.leftovers() {
            if !known.contains(&k.as_str()) {
                self.err(format!("unknown key [constants] {k}"));
                continue;
            }
            match v {
                Value::Float(x) => {
                    constants.insert(k.clone(), *x);
                }
                Value::Integer(x) => {
                    constants.insert(k.clone(), *x as f64);
                }
                other => self.err(format!("[constants] {k} must be a number, got {}", other.type_str())),
            }
        }

        // [probe]
        let mut s = self.section(root, "probe");
        let probe = ProbeSection {
            set: self.string(&mut s, "set").unwrap_or_else(|| "documented".into()),
            count: self.usize(&mut s, "count", 10_000),
            radius: self.f64(&mut s, "radius", 5.0),
            seed: self.u64(&mut s, "seed", 7),
        };
        self.finish(&s);

        // [ergodic]
        let mut s = self.section(root, "ergodic");
        let ergodic = ErgodicSection {
            initial_b: self.initial_law(&mut s, Prefix::B, d, ("gaussian", 5.0, 1.0)),
            log_points: self.usize(&mut s, "log_points", 24),
            floor: self.f64(&mut s, "floor", 1e-12),
            early: self.f64(&mut s, "early", 1.0),
            late: self.f64(&mut s, "late", 10.0),
            documented_constants: self.bool(&mut s, "documented_constants", false),
        };
        self.finish(&s);

        // [moment]
        let mut s = self.section(root, "moment");
        let moment = MomentSection {
            p0: self.f64(&mut s, "p0", 4.0),
            plain_start: self.f64(&mut s, "plain_start", 3.0),
            plain_max_steps: self.u64(&mut s, "plain_max_steps", 20),
        };
        self.finish(&s);

        family?;
        Some(RunConfig {
            experiment: experiment?,
            model,
            grid,
            ensemble,
            scheme,
            run,
            metric,
            tolerance,
            constants,
            probe,
            ergodic,
            moment,
        })
    }
}

#[derive(Clone, Copy)]
struct Prefix {
    law: &'static str,
    mean: &'static str,
    std: &'static str,
    radius: &'static str,
}

impl Prefix {
    const A: Prefix = Prefix {
        law: "initial",
        mean: "initial_mean",
        std: "initial_std",
        radius: "initial_radius",
    };
    const B: Prefix = Prefix {
        law: "initial_b",
        mean: "initial_b_mean",
        std: "initial_b_std",
        radius: "initial_b_radius",
    };
}

/// Experiment-dependent defaults.
struct Defaults {
    horizon: f64,
    n: u64,
    particles: usize,
    initial: &'static str,
    taming: TamingVariant,
    threshold: Option<f64>,
    tolerance: Tolerance,
}

impl Defaults {
    fn for_kind(kind: ExperimentKind) -> Defaults {
        let base = Defaults {
            horizon: 1.0,
            n: 64,
            particles: 64,
            initial: "gaussian",
            taming: TamingVariant::Finite,
            threshold: None,
            tolerance: Tolerance::default(),
        };
        match kind {
            ExperimentKind::StrongRate => Defaults {
                tolerance: Tolerance {
                    slope_min: Some(0.4),
                    slope_max: Some(0.6),
                    r2_min: Some(0.95),
                    contraction_ratio: None,
                },
                ..base
            },
            ExperimentKind::PocRate => Defaults {
                n: 32,
                tolerance: Tolerance {
                    slope_min: Some(-0.65),
                    slope_max: Some(-0.35),
                    r2_min: None,
                    contraction_ratio: None,
                },
                ..base
            },
            ExperimentKind::MomentStability => Defaults {
                horizon: 100.0,
                n: 2,
                threshold: Some(1e10),
                ..base
            },
            ExperimentKind::Ergodic => Defaults {
                horizon: 20.0,
                n: 100,
                particles: 256,
                taming: TamingVariant::Ergodic,
                tolerance: Tolerance {
                    slope_min: None,
                    slope_max: Some(0.0),
                    r2_min: Some(0.9),
                    contraction_ratio: Some(0.05),
                },
                ..base
            },
            ExperimentKind::Simulate | ExperimentKind::ProbeAssumptions => base,
        }
    }
}

fn validate(cfg: &RunConfig, errors: &mut Vec<String>) {
    let mut err = |m: String| errors.push(m);
    let m = &cfg.model;
    let model = match m.build() {
        Ok(model) => Some(model),
        Err(e) => {
            err(format!("[model] {e}"));
            None
        }
    };
    let g = &cfg.grid;
    if !(g.horizon > 0.0 && g.horizon.is_finite()) {
        err(format!("[grid] T must be positive, got {}", g.horizon));
    }
    let run = &cfg.run;
    if run.stride == 0 {
        err("[run] stride must be >= 1".into());
    }
    if !(run.p >= 1.0 && run.p.is_finite()) {
        err(format!("[run] p must be >= 1, got {}", run.p));
    }
    if run.name.is_empty() || run.name.contains(['/', '\\']) {
        err(format!("[run] name `{}` is not a plain file prefix", run.name));
    }
    if let Some(t) = run.explosion_threshold {
        if !(t > 0.0) {
            err(format!("[run] explosion_threshold must be positive, got {t}"));
        }
    }
    check_law(&cfg.ensemble.initial, "[ensemble] initial", &mut err);

    let single_level = |err: &mut dyn FnMut(String)| {
        if g.n == 0 {
            err("[grid] n must be >= 1".into());
        } else if crate::rng::step_count(g.n, g.horizon).is_none() {
            err(format!("[grid] T = {} is not a multiple of h = 1/{}", g.horizon, g.n));
        }
    };
    match cfg.experiment {
        ExperimentKind::StrongRate => {
            if run.reps < 2 {
                err(format!("[run] reps must be >= 2 for standard errors, got {}", run.reps));
            }
            if cfg.ensemble.n == 0 {
                err("[ensemble] N must be >= 1".into());
            }
            if g.levels.len() < 2 {
                err(format!("[grid] levels needs >= 2 entries, got {}", g.levels.len()));
            }
            if g.n_max == 0 {
                err("[grid] n_max must be >= 1".into());
            } else {
                if crate::rng::step_count(g.n_max, g.horizon).is_none() {
                    err(format!("[grid] n_max * T = {} * {} is not an integer", g.n_max, g.horizon));
                }
                for &level in &g.levels {
                    if !g.n_max.is_multiple_of(level) {
                        err(format!("[grid] level {level} does not divide n_max = {}", g.n_max));
                    } else if level >= g.n_max {
                        err(format!(
                            "[grid] level {level} must be below the reference n_max = {}",
                            g.n_max
                        ));
                    }
                }
            }
            for w in g.levels.windows(2) {
                if w[1] != 2 * w[0] {
                    err(format!(
                        "[grid] levels must form a doubling chain; {} is followed by {}",
                        w[0], w[1]
                    ));
                }
            }
        }
        ExperimentKind::PocRate => {
            single_level(&mut err);
            if run.reps < 2 {
                err(format!("[run] reps must be >= 2 for standard errors, got {}", run.reps));
            }
            let e = &cfg.ensemble;
            if e.sizes.len() < 2 {
                err(format!("[ensemble] sizes needs >= 2 entries, got {}", e.sizes.len()));
            }
            for w in e.sizes.windows(2) {
                if w[1] <= w[0] {
                    err(format!("[ensemble] sizes must increase; {} is followed by {}", w[0], w[1]));
                }
            }
            if let Some(&big) = e.sizes.iter().max() {
                if e.n_ref <= big {
                    err(format!(
                        "[ensemble] N_ref = {} must be larger than every size (max {big})",
                        e.n_ref
                    ));
                }
            }
            if e.probe_count == 0 {
                err("[ensemble] probe_count must be >= 1".into());
            }
        }
        ExperimentKind::MomentStability => {
            single_level(&mut err);
            let mo = &cfg.moment;
            if !(mo.p0 > 0.0 && mo.p0.is_finite()) {
                err(format!("[moment] p0 must be positive, got {}", mo.p0));
            }
            if mo.plain_max_steps == 0 {
                err("[moment] plain_max_steps must be >= 1".into());
            }
            if !mo.plain_start.is_finite() {
                err("[moment] plain_start must be finite".into());
            }
        }
        ExperimentKind::Ergodic => {
            single_level(&mut err);
            check_law(&cfg.ergodic.initial_b, "[ergodic] initial_b", &mut err);
            let e = &cfg.ergodic;
            if e.log_points < 2 {
                err(format!("[ergodic] log_points must be >= 2, got {}", e.log_points));
            }
            if !(e.floor > 0.0 && e.floor < 1.0) {
                err(format!("[ergodic] floor must lie in (0, 1), got {}", e.floor));
            }
            if !(e.early > 0.0 && e.early < e.late && 2.0 * e.late <= g.horizon * (1.0 + 1e-12)) {
                err(format!(
                    "[ergodic] need 0 < early < late and 2 * late <= T (early = {}, late = {}, T = {})",
                    e.early, e.late, g.horizon
                ));
            }
            if cfg.scheme.kind == SchemeKind::TamedEuler && cfg.scheme.taming != TamingVariant::Ergodic {
                err(format!(
                    "[scheme] taming = {} but the ergodic experiment needs taming = ergodic",
                    cfg.scheme.taming
                ));
            }
            if cfg.metric == W2Method::Sorted1d && m.d != 1 {
                err(format!("[metric] sorted_1d needs d = 1, got d = {}", m.d));
            }
            if let W2Method::ExactAssignment { cap } = cfg.metric {
                if cfg.ensemble.n > cap {
                    err(format!("[metric] N = {} exceeds assignment_cap = {cap}", cfg.ensemble.n));
                }
            }
            if g.n > 0 {
                check_step_bound(cfg, model.as_ref(), &mut err);
            }
        }
        ExperimentKind::Simulate => single_level(&mut err),
        ExperimentKind::ProbeAssumptions => {
            if cfg.probe.set != "documented" {
                if let Err(e) = AssumptionSet::parse_group(&cfg.probe.set) {
                    err(format!("[probe] set: {e}"));
                }
            }
            if cfg.probe.count == 0 {
                err("[probe] count must be >= 1".into());
            }
            if !(cfg.probe.radius > 0.0 && cfg.probe.radius.is_finite()) {
                err(format!("[probe] radius must be positive, got {}", cfg.probe.radius));
            }
        }
    }
    if matches!(cfg.experiment, ExperimentKind::Simulate | ExperimentKind::MomentStability | ExperimentKind::Ergodic)
        && cfg.ensemble.n == 0
    {
        err("[ensemble] N must be >= 1".into());
    }
    if cfg.scheme.interaction == InteractionMode::AntisymmetricPairs {
        if let Some(model) = &model {
            if !model.f_antisymmetric {
                err("[scheme] antisymmetric_pairs needs an antisymmetric kernel".into());
            }
        }
    }
}

fn check_law(law: &InitialLaw, what: &str, err: &mut dyn FnMut(String)) {
    match law {
        InitialLaw::Gaussian { std, .. } if !(*std >= 0.0 && std.is_finite()) => {
            err(format!("{what} std must be >= 0, got {std}"));
        }
        InitialLaw::UniformBall { radius, .. } if !(*radius >= 0.0 && radius.is_finite()) => {
            err(format!("{what} radius must be >= 0, got {radius}"));
        }
        _ => {}
    }
}

/// Refuses step sizes outside the range where the long-time estimates hold.
fn check_step_bound(cfg: &RunConfig, model: Option<&CoefficientModel>, err: &mut dyn FnMut(String)) {
    if model.is_none() && cfg.constants.is_empty() {
        return;
    }
    let h = cfg.grid.h();
    match cfg.long_time_constants() {
        Ok(None) => {}
        Ok(Some(c)) => {
            if let Err(e) = c.check_step(h) {
                err(format!("[grid] {e}"));
            }
        }
        Err(e) => err(format!("[constants] {e}")),
    }
}

/// Writes the canonical form of `cfg`: every section, every key resolved.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut root = Table::new();
    root.insert("config_version".into(), Value::Integer(CONFIG_VERSION));
    root.insert("experiment".into(), cfg.experiment.as_str().into());
    for (name, table) in config_sections(cfg) {
        root.insert(name.into(), Value::Table(table));
    }
    toml::to_string(&root).expect("config tables serialize")
}

/// The canonical sections, in emission order. `out_dir` is left out of the
/// `run` section when `with_out_dir` is false.
pub(crate) fn config_sections(cfg: &RunConfig) -> Vec<(&'static str, Table)> {
    config_sections_with(cfg, true)
}

pub(crate) fn config_sections_with(cfg: &RunConfig, with_out_dir: bool) -> Vec<(&'static str, Table)> {
    fn int(v: u64) -> Value {
        Value::Integer(v as i64)
    }
    let m = &cfg.model;
    let mut model = Table::new();
    model.insert("family".into(), m.family.as_str().into());
    model.insert("d".into(), int(m.d as u64));
    model.insert("l".into(), int(m.l as u64));
    model.insert("q".into(), m.q.into());
    model.insert("p0".into(), m.p0.into());
    model.insert("p1".into(), m.p1.into());
    model.insert("measure_mode".into(), m.family.measure_mode().as_str().into());
    for (k, v) in &m.params {
        model.insert(k.clone(), (*v).into());
    }

    let g = &cfg.grid;
    let mut grid = Table::new();
    grid.insert("T".into(), g.horizon.into());
    grid.insert("n".into(), int(g.n));
    grid.insert("levels".into(), Value::Array(g.levels.iter().map(|&v| int(v)).collect()));
    grid.insert("n_max".into(), int(g.n_max));

    let e = &cfg.ensemble;
    let mut ensemble = Table::new();
    ensemble.insert("N".into(), int(e.n as u64));
    ensemble.insert("sizes".into(), Value::Array(e.sizes.iter().map(|&v| int(v as u64)).collect()));
    ensemble.insert("N_ref".into(), int(e.n_ref as u64));
    ensemble.insert("probe_count".into(), int(e.probe_count as u64));
    emit_law(&mut ensemble, &e.initial, Prefix::A);

    let mut scheme = Table::new();
    scheme.insert("kind".into(), cfg.scheme.kind.as_str().into());
    scheme.insert("taming".into(), cfg.scheme.taming.as_str().into());
    scheme.insert("interaction".into(), cfg.scheme.interaction.as_str().into());

    let r = &cfg.run;
    let mut run = Table::new();
    run.insert("seed".into(), int(r.seed));
    run.insert("reps".into(), int(r.reps as u64));
    run.insert("p".into(), r.p.into());
    run.insert("stride".into(), int(r.stride));
    if with_out_dir {
        run.insert("out_dir".into(), r.out_dir.to_string_lossy().into_owned().into());
    }
    run.insert("name".into(), r.name.clone().into());
    if let Some(t) = r.explosion_threshold {
        run.insert("explosion_threshold".into(), t.into());
    }

    let mut metric = Table::new();
    metric.insert("method".into(), cfg.metric.name().into());
    match cfg.metric {
        W2Method::Sorted1d => {}
        W2Method::ExactAssignment { cap } => {
            metric.insert("assignment_cap".into(), int(cap as u64));
        }
        W2Method::Sliced { projections, seed } => {
            metric.insert("projections".into(), int(projections as u64));
            metric.insert("seed".into(), int(seed));
        }
    }

    let t = &cfg.tolerance;
    let mut tolerance = Table::new();
    for (k, v) in [
        ("slope_min", t.slope_min),
        ("slope_max", t.slope_max),
        ("r2_min", t.r2_min),
        ("contraction_ratio", t.contraction_ratio),
    ] {
        if let Some(v) = v {
            tolerance.insert(k.into(), v.into());
        }
    }

    let constants: Table = cfg.constants.iter().map(|(k, v)| (k.clone(), Value::from(*v))).collect();

    let p = &cfg.probe;
    let mut probe = Table::new();
    probe.insert("set".into(), p.set.clone().into());
    probe.insert("count".into(), int(p.count as u64));
    probe.insert("radius".into(), p.radius.into());
    probe.insert("seed".into(), int(p.seed));

    let eg = &cfg.ergodic;
    let mut ergodic = Table::new();
    emit_law(&mut ergodic, &eg.initial_b, Prefix::B);
    ergodic.insert("log_points".into(), int(eg.log_points as u64));
    ergodic.insert("floor".into(), eg.floor.into());
    ergodic.insert("early".into(), eg.early.into());
    ergodic.insert("late".into(), eg.late.into());
    ergodic.insert("documented_constants".into(), eg.documented_constants.into());

    let mo = &cfg.moment;
    let mut moment = Table::new();
    moment.insert("p0".into(), mo.p0.into());
    moment.insert("plain_start".into(), mo.plain_start.into());
    moment.insert("plain_max_steps".into(), int(mo.plain_max_steps));

    vec![
        ("model", model),
        ("grid", grid),
        ("ensemble", ensemble),
        ("scheme", scheme),
        ("run", run),
        ("metric", metric),
        ("tolerance", tolerance),
        ("constants", constants),
        ("probe", probe),
        ("ergodic", ergodic),
        ("moment", moment),
    ]
}

fn emit_law(table: &mut Table, law: &InitialLaw, prefix: Prefix) {
    let vector = |v: &[f64]| Value::Array(v.iter().map(|&x| x.into()).collect());
    match law {
        InitialLaw::Point { at } => {
            table.insert(prefix.law.into(), "point".into());
            table.insert(prefix.mean.into(), vector(at));
        }
        InitialLaw::Gaussian { mean, std } => {
            table.insert(prefix.law.into(), "gaussian".into());
            table.insert(prefix.mean.into(), vector(mean));
            table.insert(prefix.std.into(), (*std).into());
        }
        InitialLaw::UniformBall { center, radius } => {
            table.insert(prefix.law.into(), "uniform_ball".into());
            table.insert(prefix.mean.into(), vector(center));
            table.insert(prefix.radius.into(), (*radius).into());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
config_version = 1
experiment = "strong-rate"

[model]
family = "cubic-mean-field"
"#;

    fn messages(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(ConfigErrors(list))) => list,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::StrongRate);
        assert_eq!(cfg.run.p, 2.0);
        assert_eq!(cfg.run.reps, 32);
        assert_eq!(cfg.metric, W2Method::Sorted1d);
        assert_eq!(cfg.grid.levels, vec![16, 32, 64, 128, 256, 512]);
        assert_eq!(cfg.grid.n_max, 1024);
        assert_eq!(cfg.ensemble.n, 64);
        assert_eq!(cfg.scheme, SchemeConfig::default());
        assert_eq!(cfg.tolerance.slope_min, Some(0.4));
        assert_eq!(cfg.run.name, "strong_rate");
        assert_eq!(cfg.model.d, 1);
        assert_eq!(cfg.model.l, 1);
    }

    #[test]
    fn canonical_form_round_trips() {
        let texts = [
            MINIMAL.to_string(),
            r#"
config_version = 1
experiment = "ergodic"
[model]
family = "ergodic-dissipative"
d = 2
kernel_noise = 0.1
[ensemble]
initial = "uniform_ball"
initial_mean = [1, -1]
initial_radius = 2
[metric]
method = "sliced"
projections = 16
[constants]
Lhat_bsigma_1 = 3.0
Lhat_bsigma_2 = 0.0
L_fg_1 = 0.1
L_b_1 = 0.5
L_b_2 = 0.0
L_f_1 = 0.1
L_bsigma_1 = 1.0
L_bsigma_3 = 0.5
L_fg_2 = 0.5
"#
            .to_string(),
        ];
        for text in texts {
            let cfg = parse_config(&text).unwrap();
            let emitted = emit_config(&cfg);
            let again = parse_config(&emitted).unwrap();
            assert_eq!(cfg, again, "{emitted}");
            assert_eq!(emitted, emit_config(&again));
        }
    }

    #[test]
    fn non_dividing_level_names_both_values() {
        let text = format!("{MINIMAL}\n[grid]\nlevels = [16, 32, 48]\nn_max = 1000\n");
        let errs = messages(&text);
        assert!(errs.iter().any(|e| e.contains("level 16") && e.contains("n_max = 1000")));
        // every violation is listed, not only the first
        assert!(errs.iter().any(|e| e.contains("level 48")));
        assert!(errs.iter().any(|e| e.contains("doubling chain")));
    }

    #[test]
    fn syntax_error_reports_line() {
        let errs = messages("config_version = 1\nexperiment = \"simulate\"\n[model\nfamily = 1\n");
        assert_eq!(errs.len(), 1);
        assert!(errs[0].contains("line 3"), "{}", errs[0]);
    }

    #[test]
    fn all_violations_are_collected() {
        let text = r#"
config_version = 2
experiment = "poc-rate"
bogus = 1
[model]
family = "pairwise-vlasov"
mean_coupling = 1.0
[ensemble]
sizes = [16, 32, 2048]
N_ref = 1024
[run]
colour = "red"
"#;
        let errs = messages(text);
        for needle in ["config_version", "bogus", "colour"] {
            assert!(errs.iter().any(|e| e.contains(needle)), "{needle}: {errs:?}");
        }
        // semantic checks only run once the document reads cleanly
        let text = r#"
config_version = 1
experiment = "poc-rate"
[model]
family = "pairwise-vlasov"
mean_coupling = 1.0
[ensemble]
sizes = [16, 32, 2048]
N_ref = 1024
"#;
        let errs = messages(text);
        assert!(errs.iter().any(|e| e.contains("mean_coupling")), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("N_ref = 1024")), "{errs:?}");
    }

    #[test]
    fn step_above_contraction_bound_is_refused() {
        // rho_1 = 2 - 0 - 4*0.1 - 0.5 - 0 - 4*0.1 = 0.7, so 1/(2 rho_1) ~ 0.714
        let consts = r#"
[constants]
Lhat_bsigma_1 = 2.0
Lhat_bsigma_2 = 0.0
L_fg_1 = 0.1
L_b_1 = 0.5
L_b_2 = 0.0
L_f_1 = 0.1
L_bsigma_1 = 4.0
L_bsigma_3 = 0.5
L_fg_2 = 0.01
"#;
        let base = "config_version = 1\nexperiment = \"ergodic\"\n[model]\nfamily = \"ergodic-dissipative\"\n";
        let ok = format!("{base}[grid]\nn = 2\nT = 20\n{consts}");
        parse_config(&ok).unwrap();
        let bad = format!("{base}[grid]\nn = 1\nT = 20\n{consts}");
        let errs = messages(&bad);
        assert!(errs.iter().any(|e| e.contains("1/(2 rho_hat_1)")), "{errs:?}");
    }

    #[test]
    fn documented_ergodic_constants_fail_the_contraction_hypothesis() {
        let text = r#"
config_version = 1
experiment = "ergodic"
[model]
family = "ergodic-dissipative"
[ergodic]
documented_constants = true
"#;
        let errs = messages(text);
        assert!(errs.iter().any(|e| e.contains("rho_hat_1")), "{errs:?}");
    }

    #[test]
    fn caller_supplies_missing_experiment() {
        let text = "config_version = 1\n[model]\nfamily = \"cubic-mean-field\"\n";
        assert!(parse_config(text).is_err());
        let cfg = parse_config_as(text, Some(ExperimentKind::Simulate)).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Simulate);
        assert!(parse_config_as(MINIMAL, Some(ExperimentKind::Ergodic)).is_err());
    }

    #[test]
    fn measure_mode_must_match_family() {
        let text = format!("{MINIMAL}measure_mode = \"pairwise\"\n");
        assert!(messages(&text).iter().any(|e| e.contains("measure_mode")));
    }
}
