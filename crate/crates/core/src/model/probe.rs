//! Numerical probes of the structural inequalities a model is meant to
//! satisfy.
//!
//! Every inequality is moved into the form
//!
//! ```text
//! upper:  lhs <=  L * factor + rest
//! lower:  lhs <= -L * factor + rest
//! zero:   lhs <=  0
//! ```
//!
//! where `L` is the inequality's free constant and `rest` collects terms
//! with other (fixed) constants. The probe evaluates the inequality at
//! random point tuples drawn from a ball, with measures realized as 2-atom
//! empiricals, reports the worst margin against the constant in use and
//! fits the tightest `L` the samples allow.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CoefficientModel;
use crate::ensemble::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::vecops::{dot, norm, norm_sq, pow_norm, sub};

/// Relative allowance for rounding when comparing both sides.
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssumptionSet {
    OneSidedLipschitz,
    WellPosedDrift,
    WellPosedKernel,
    AntiSymmetric,
    PolynomialLipschitz,
    RateMonotone,
    ErgodicGrowth,
    ErgodicDifference,
    ErgodicMonotone,
    ErgodicCross,
    ErgodicCrossGrowth,
}

impl AssumptionSet {
    pub const ALL: [AssumptionSet; 11] = [
        AssumptionSet::OneSidedLipschitz,
        AssumptionSet::WellPosedDrift,
        AssumptionSet::WellPosedKernel,
        AssumptionSet::AntiSymmetric,
        AssumptionSet::PolynomialLipschitz,
        AssumptionSet::RateMonotone,
        AssumptionSet::ErgodicGrowth,
        AssumptionSet::ErgodicDifference,
        AssumptionSet::ErgodicMonotone,
        AssumptionSet::ErgodicCross,
        AssumptionSet::ErgodicCrossGrowth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AssumptionSet::OneSidedLipschitz => "one-sided-lipschitz",
            AssumptionSet::WellPosedDrift => "eu-b-sig",
            AssumptionSet::WellPosedKernel => "eu-f-g",
            AssumptionSet::AntiSymmetric => "anti-sys",
            AssumptionSet::PolynomialLipschitz => "b-poly",
            AssumptionSet::RateMonotone => "mon-rate",
            AssumptionSet::ErgodicGrowth => "sch-gr-erg",
            AssumptionSet::ErgodicDifference => "diff-b-f-erg",
            AssumptionSet::ErgodicMonotone => "er-sch-b-f",
            AssumptionSet::ErgodicCross => "er-sch-x-b-f",
            AssumptionSet::ErgodicCrossGrowth => "er-sch-gr-b-f",
        }
    }

    pub fn inequalities(self) -> &'static [Inequality] {
        let all = INEQUALITIES;
        let (lo, hi) = match self {
            AssumptionSet::OneSidedLipschitz => (0, 1),
            AssumptionSet::WellPosedDrift => (1, 3),
            AssumptionSet::WellPosedKernel => (3, 5),
            AssumptionSet::AntiSymmetric => (5, 8),
            AssumptionSet::PolynomialLipschitz => (8, 9),
            AssumptionSet::RateMonotone => (9, 11),
            AssumptionSet::ErgodicGrowth => (11, 13),
            AssumptionSet::ErgodicDifference => (13, 15),
            AssumptionSet::ErgodicMonotone => (15, 17),
            AssumptionSet::ErgodicCross => (17, 19),
            AssumptionSet::ErgodicCrossGrowth => (19, 21),
        };
        &all[lo..hi]
    }

    /// Parses a set id, or `all` / `ergodic` for the usual groups.
    pub fn parse_group(s: &str) -> Result<Vec<AssumptionSet>> {
        match s {
            "all" => Ok(AssumptionSet::ALL.to_vec()),
            "ergodic" => Ok(vec![
                AssumptionSet::ErgodicGrowth,
                AssumptionSet::ErgodicDifference,
                AssumptionSet::ErgodicMonotone,
                AssumptionSet::ErgodicCross,
                AssumptionSet::ErgodicCrossGrowth,
            ]),
            other => other.parse().map(|s| vec![s]),
        }
    }
}

impl fmt::Display for AssumptionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssumptionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AssumptionSet::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "assumption set",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Upper,
    Lower,
    Zero,
}

/// Both sides of one inequality at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub lhs: f64,
    pub factor: f64,
    pub rest: f64,
}

type Lookup<'a> = dyn Fn(&str) -> f64 + 'a;

pub struct Inequality {
    pub id: &'static str,
    pub form: Form,
    /// Name of the free constant; the inequality id for single-constant
    /// inequalities.
    pub constant: Option<&'static str>,
    /// Constants entering `rest`.
    pub fixed: &'static [&'static str],
    eval: fn(&CoefficientModel, &Sample, &Lookup<'_>) -> Terms,
}

impl Inequality {
    pub fn constant_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.constant.into_iter().chain(self.fixed.iter().copied())
    }

    pub fn terms(&self, model: &CoefficientModel, sample: &Sample, constants: &Lookup<'_>) -> Terms {
        (self.eval)(model, sample, constants)
    }

    /// `lhs - rhs` net of the rounding allowance; `<= 0` means satisfied.
    pub fn margin(&self, terms: Terms, constant: f64) -> f64 {
        let scaled = match self.form {
            Form::Upper => constant * terms.factor,
            Form::Lower => -constant * terms.factor,
            Form::Zero => 0.0,
        };
        let rhs = scaled + terms.rest;
        terms.lhs - rhs - ROUNDING * (terms.lhs.abs() + scaled.abs() + terms.rest.abs())
    }

    /// Tightest free constant this sample allows, when the factor is nonzero.
    fn fit(&self, terms: Terms) -> Option<f64> {
        if !(terms.factor > 0.0) {
            return None;
        }
        match self.form {
            Form::Upper => Some((terms.lhs - terms.rest) / terms.factor),
            Form::Lower => Some((terms.rest - terms.lhs) / terms.factor),
            Form::Zero => None,
        }
    }
}

/// One probe point: four states and two 2-atom measures (atoms flattened).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub xp: Vec<f64>,
    pub y: Vec<f64>,
    pub yp: Vec<f64>,
    pub mu: Vec<f64>,
    pub mup: Vec<f64>,
}

impl Sample {
    fn mu(&self) -> EmpiricalMeasure<'_> {
        EmpiricalMeasure::new(&self.mu, self.x.len()).expect("2-atom measure")
    }

    fn mup(&self) -> EmpiricalMeasure<'_> {
        EmpiricalMeasure::new(&self.mup, self.x.len()).expect("2-atom measure")
    }

    /// `W2(mu, mu')^2`: for two uniform 2-atom measures the optimal coupling
    /// is one of the two matchings.
    fn w2_sq(&self) -> f64 {
        let d = self.x.len();
        let (a1, a2) = self.mu.split_at(d);
        let (b1, b2) = self.mup.split_at(d);
        let straight = norm_sq(&sub(a1, b1)) + norm_sq(&sub(a2, b2));
        let crossed = norm_sq(&sub(a1, b2)) + norm_sq(&sub(a2, b1));
        straight.min(crossed) / 2.0
    }

    /// `W2(mu, delta_0)^2`.
    fn w2_origin_sq(&self) -> f64 {
        norm_sq(&self.mu) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            count: 10_000,
            radius: 5.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantSource {
    Documented,
    Override,
    /// Neither documented nor supplied; 0 is used.
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub assumption_id: String,
    pub set: String,
    pub sample_count: usize,
    pub worst_margin: f64,
    pub fitted_constant: Option<f64>,
    pub constant_used: Option<f64>,
    pub constant_source: Option<ConstantSource>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub family: String,
    pub sets: Vec<String>,
    pub documented_sets: Vec<String>,
    pub sample_spec: SampleSpec,
    pub entries: Vec<InequalityReport>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.entries.iter().all(|e| e.holds)
    }

    pub fn entry(&self, id: &str) -> Option<&InequalityReport> {
        self.entries.iter().find(|e| e.assumption_id == id)
    }
}

impl CoefficientModel {
    /// Constants this model documents, keyed by inequality id or constant
    /// name.
    pub fn documented_constants(&self) -> BTreeMap<&'static str, f64> {
        super::families::documented_constants(self)
    }

    /// Assumption sets the model documents as satisfied.
    pub fn documented_sets(&self) -> Vec<AssumptionSet> {
        super::families::documented_sets(self)
    }
}

/// Draws `count` sample tuples uniformly from the ball of radius `radius`.
pub fn draw_samples(d: usize, spec: &SampleSpec) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| standard_normal(rng.random(), rng.random())).collect();
        let n = norm(&v);
        let r = spec.radius * rng.random::<f64>().powf(1.0 / d as f64);
        if n > 0.0 {
            v.iter_mut().for_each(|c| *c *= r / n);
        }
        v
    };
    (0..spec.count)
        .map(|_| {
            let x = point(&mut rng);
            let xp = point(&mut rng);
            let y = point(&mut rng);
            let yp = point(&mut rng);
            let mut mu = point(&mut rng);
            mu.extend(point(&mut rng));
            let mut mup = point(&mut rng);
            mup.extend(point(&mut rng));
            Sample { x, xp, y, yp, mu, mup }
        })
        .collect()
}

/// Probes every inequality of `sets` on `spec.count` random samples.
///
/// The constant checked for each inequality is taken from `overrides`, then
/// from the model's documented constants, and is 0 otherwise.
pub fn probe_assumptions(
    model: &CoefficientModel,
    sets: &[AssumptionSet],
    spec: &SampleSpec,
    overrides: &BTreeMap<String, f64>,
) -> Result<AssumptionReport> {
    if spec.count == 0 {
        return Err(Error::InvalidParameter("probe sample count must be >= 1".into()));
    }
    if !(spec.radius > 0.0 && spec.radius.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "probe radius must be positive, got {}",
            spec.radius
        )));
    }
    let documented = model.documented_constants();
    let resolve = |name: &str| -> (f64, ConstantSource) {
        if let Some(&v) = overrides.get(name) {
            (v, ConstantSource::Override)
        } else if let Some(&v) = documented.get(name) {
            (v, ConstantSource::Documented)
        } else {
            (0.0, ConstantSource::Default)
        }
    };
    let lookup = |name: &str| resolve(name).0;
    let samples = draw_samples(model.d, spec);

    let mut entries = Vec::new();
    for &set in sets {
        for ineq in set.inequalities() {
            let (constant, source) = match ineq.constant {
                Some(name) => {
                    let (v, s) = resolve(name);
                    (v, Some(s))
                }
                None => (0.0, None),
            };
            let mut worst = f64::NEG_INFINITY;
            let mut fitted: Option<f64> = None;
            for s in &samples {
                let terms = ineq.terms(model, s, &lookup);
                let m = ineq.margin(terms, constant);
                // NaN margins count as violations
                worst = if m.is_nan() { f64::INFINITY } else { worst.max(m) };
                if let Some(v) = ineq.fit(terms) {
                    fitted = Some(match (fitted, ineq.form) {
                        (None, _) => v,
                        (Some(f), Form::Lower) => f.min(v),
                        (Some(f), _) => f.max(v),
                    });
                }
            }
            entries.push(InequalityReport {
                assumption_id: ineq.id.to_string(),
                set: set.as_str().to_string(),
                sample_count: samples.len(),
                worst_margin: worst,
                fitted_constant: fitted,
                constant_used: ineq.constant.map(|_| constant),
                constant_source: source,
                holds: worst <= 0.0,
            });
        }
    }
    Ok(AssumptionReport {
        family: model.family.as_str().to_string(),
        sets: sets.iter().map(|s| s.as_str().to_string()).collect(),
        documented_sets: model
            .documented_sets()
            .iter()
            .map(|s| s.as_str().to_string())
            .collect(),
        sample_spec: *spec,
        entries,
    })
}

// ---- evaluation helpers ----

struct Eval<'m> {
    m: &'m CoefficientModel,
}

impl Eval<'_> {
    fn b(&self, x: &[f64], mu: &EmpiricalMeasure<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.m.d];
        self.m.drift_into(0.0, x, mu, &mut out);
        out
    }

    fn sigma(&self, x: &[f64], mu: &EmpiricalMeasure<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.m.d * self.m.l];
        self.m.sigma_into(0.0, x, mu, &mut out);
        out
    }

    fn f(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m.d];
        self.m.kernel_f_into(x, y, &mut out);
        out
    }

    fn g(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m.d * self.m.l];
        self.m.kernel_g_into(x, y, &mut out);
        out
    }
}

fn lin(a: &[f64], sa: f64, b: &[f64], sb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| sa * u - sb * v).collect()
}

/// `(x - y) - (x' - y')`, `x - y`, `x' - y'`.
fn kernel_diffs(s: &Sample) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let z = sub(&s.x, &s.y);
    let zp = sub(&s.xp, &s.yp);
    (sub(&z, &zp), z, zp)
}

fn one_sided(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let mu = s.mu();
    let delta = sub(&s.x, &s.xp);
    let db = sub(&e.b(&s.x, &mu), &e.b(&s.xp, &mu));
    Terms {
        lhs: dot(&delta, &db),
        factor: norm_sq(&delta),
        rest: 0.0,
    }
}

fn drift_growth(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let mu = s.mu();
    let lhs = dot(&s.x, &e.b(&s.x, &mu)) + (m.p0 - 1.0) * norm_sq(&e.sigma(&s.x, &mu));
    Terms {
        lhs,
        factor: 1.0 + norm_sq(&s.x) + s.w2_origin_sq(),
        rest: 0.0,
    }
}

/// `<x - x', b - b'> + weight |sigma - sigma'|^2` with `mu` vs `mu'`.
fn drift_monotone_lhs(m: &CoefficientModel, s: &Sample, weight: f64) -> (f64, Vec<f64>) {
    let e = Eval { m };
    let (mu, mup) = (s.mu(), s.mup());
    let delta = sub(&s.x, &s.xp);
    let db = sub(&e.b(&s.x, &mu), &e.b(&s.xp, &mup));
    let ds = sub(&e.sigma(&s.x, &mu), &e.sigma(&s.xp, &mup));
    (dot(&delta, &db) + weight * norm_sq(&ds), delta)
}

fn kernel_monotone_lhs(m: &CoefficientModel, s: &Sample, weight: f64) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let e = Eval { m };
    let (w, z, zp) = kernel_diffs(s);
    let df = sub(&e.f(&s.x, &s.y), &e.f(&s.xp, &s.yp));
    let dg = sub(&e.g(&s.x, &s.y), &e.g(&s.xp, &s.yp));
    (dot(&w, &df) + weight * norm_sq(&dg), w, z, zp)
}

fn drift_monotone(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let (lhs, delta) = drift_monotone_lhs(m, s, 1.0);
    Terms {
        lhs,
        factor: norm_sq(&delta) + s.w2_sq(),
        rest: 0.0,
    }
}

fn kernel_monotone(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let (lhs, w, _, _) = kernel_monotone_lhs(m, s, m.p0 - 1.0);
    Terms {
        lhs,
        factor: norm_sq(&w),
        rest: 0.0,
    }
}

fn kernel_poly_lipschitz(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let (w, z, zp) = kernel_diffs(s);
    let df = sub(&e.f(&s.x, &s.y), &e.f(&s.xp, &s.yp));
    Terms {
        lhs: norm(&df),
        factor: pow_norm(1.0 + norm(&z) + norm(&zp), m.q) * norm(&w),
        rest: 0.0,
    }
}

fn antisymmetry(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let a = e.f(&s.x, &s.y);
    let b = e.f(&s.y, &s.x);
    let sum: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
    Terms {
        lhs: norm(&sum),
        factor: 0.0,
        rest: 0.0,
    }
}

fn anti_moment(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let (nx, ny) = (norm(&s.x), norm(&s.y));
    let sum: Vec<f64> = s.x.iter().zip(&s.y).map(|(u, v)| u + v).collect();
    let lhs = (pow_norm(nx, m.p0 - 2.0) - pow_norm(ny, m.p0 - 2.0)) * dot(&sum, &e.f(&s.x, &s.y));
    Terms {
        lhs,
        factor: pow_norm(nx, m.p0) + pow_norm(ny, m.p0),
        rest: 0.0,
    }
}

fn anti_growth(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let z = sub(&s.x, &s.y);
    let lhs = dot(&z, &e.f(&s.x, &s.y)) + 2.0 * (m.p0 - 1.0) * norm_sq(&e.g(&s.x, &s.y));
    Terms {
        lhs,
        factor: 1.0 + norm_sq(&z),
        rest: 0.0,
    }
}

fn drift_poly_lipschitz(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let (mu, mup) = (s.mu(), s.mup());
    let delta = sub(&s.x, &s.xp);
    let db = sub(&e.b(&s.x, &mu), &e.b(&s.xp, &mup));
    Terms {
        lhs: norm(&db),
        factor: pow_norm(1.0 + norm(&s.x) + norm(&s.xp), m.q) * norm(&delta) + s.w2_sq().sqrt(),
        rest: 0.0,
    }
}

fn rate_drift(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let (lhs, delta) = drift_monotone_lhs(m, s, m.p1 - 1.0);
    Terms {
        lhs,
        factor: norm_sq(&delta) + s.w2_sq(),
        rest: 0.0,
    }
}

fn rate_kernel(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let (lhs, w, _, _) = kernel_monotone_lhs(m, s, 2.0 * (m.p1 - 1.0));
    Terms {
        lhs,
        factor: norm_sq(&w),
        rest: 0.0,
    }
}

fn erg_growth_drift(m: &CoefficientModel, s: &Sample, c: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let mu = s.mu();
    let nx = norm(&s.x);
    Terms {
        lhs: dot(&s.x, &e.b(&s.x, &mu)) + norm_sq(&e.sigma(&s.x, &mu)),
        factor: (1.0 + pow_norm(nx, m.q)) * nx * nx,
        rest: c("Lhat_bsigma_2") * s.w2_origin_sq(),
    }
}

fn erg_growth_kernel(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let z = sub(&s.x, &s.y);
    let nz = norm(&z);
    Terms {
        lhs: dot(&z, &e.f(&s.x, &s.y)) + 2.0 * norm_sq(&e.g(&s.x, &s.y)),
        factor: (1.0 + pow_norm(nz, m.q)) * nz * nz,
        rest: 0.0,
    }
}

fn erg_diff_drift(m: &CoefficientModel, s: &Sample, c: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let (mu, mup) = (s.mu(), s.mup());
    let delta = sub(&s.x, &s.xp);
    let db = sub(&e.b(&s.x, &mu), &e.b(&s.xp, &mup));
    let q2 = 2.0 * m.q;
    Terms {
        lhs: norm_sq(&db),
        factor: (1.0 + pow_norm(norm(&s.x), q2) + pow_norm(norm(&s.xp), q2)) * norm_sq(&delta),
        rest: c("L_b_2") * s.w2_sq(),
    }
}

fn erg_diff_kernel(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let e = Eval { m };
    let (w, z, zp) = kernel_diffs(s);
    let df = sub(&e.f(&s.x, &s.y), &e.f(&s.xp, &s.yp));
    let q2 = 2.0 * m.q;
    Terms {
        lhs: norm_sq(&df),
        factor: (1.0 + pow_norm(norm(&z), q2) + pow_norm(norm(&zp), q2)) * norm_sq(&w),
        rest: 0.0,
    }
}

fn erg_mono_drift(m: &CoefficientModel, s: &Sample, c: &Lookup<'_>) -> Terms {
    let (lhs, delta) = drift_monotone_lhs(m, s, 2.0);
    Terms {
        lhs,
        factor: (1.0 + pow_norm(norm(&s.x), m.q) + pow_norm(norm(&s.xp), m.q)) * norm_sq(&delta),
        rest: c("L_bsigma_2") * s.w2_sq(),
    }
}

fn erg_mono_kernel(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let (lhs, w, z, zp) = kernel_monotone_lhs(m, s, 4.0);
    Terms {
        lhs,
        factor: (1.0 + pow_norm(norm(&z), m.q) + pow_norm(norm(&zp), m.q)) * norm_sq(&w),
        rest: 0.0,
    }
}

/// `b(x, mu)|x'|^q - b(x', mu')|x|^q` and the matching diffusion term.
fn cross_drift(m: &CoefficientModel, s: &Sample) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let e = Eval { m };
    let (mu, mup) = (s.mu(), s.mup());
    let wx = pow_norm(norm(&s.x), m.q);
    let wxp = pow_norm(norm(&s.xp), m.q);
    let bc = lin(&e.b(&s.x, &mu), wxp, &e.b(&s.xp, &mup), wx);
    let sc = lin(&e.sigma(&s.x, &mu), wxp, &e.sigma(&s.xp, &mup), wx);
    (bc, sc, wx, wxp)
}

fn cross_kernel(m: &CoefficientModel, s: &Sample) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let e = Eval { m };
    let (_, z, zp) = kernel_diffs(s);
    let wz = pow_norm(norm(&z), m.q);
    let wzp = pow_norm(norm(&zp), m.q);
    let fc = lin(&e.f(&s.x, &s.y), wzp, &e.f(&s.xp, &s.yp), wz);
    let gc = lin(&e.g(&s.x, &s.y), wzp, &e.g(&s.xp, &s.yp), wz);
    (fc, gc, wz, wzp)
}

fn erg_cross_drift(m: &CoefficientModel, s: &Sample, c: &Lookup<'_>) -> Terms {
    let (bc, sc, wx, wxp) = cross_drift(m, s);
    let delta = sub(&s.x, &s.xp);
    let d2 = norm_sq(&delta);
    Terms {
        lhs: dot(&delta, &bc) + 2.0 * norm_sq(&sc),
        factor: (1.0 + wx + wxp) * d2,
        rest: -c("L_bsigma_4") * wx * wxp * d2 + c("L_bsigma_5") * s.w2_sq(),
    }
}

fn erg_cross_kernel(m: &CoefficientModel, s: &Sample, c: &Lookup<'_>) -> Terms {
    let (fc, gc, wz, wzp) = cross_kernel(m, s);
    let (w, _, _) = kernel_diffs(s);
    let w2 = norm_sq(&w);
    Terms {
        lhs: dot(&w, &fc) + 4.0 * norm_sq(&gc),
        factor: (1.0 + wz + wzp) * w2,
        rest: -c("L_fg_3") * wz * wzp * w2,
    }
}

fn erg_cross_growth_drift(m: &CoefficientModel, s: &Sample, c: &Lookup<'_>) -> Terms {
    let (bc, _, wx, wxp) = cross_drift(m, s);
    let delta = sub(&s.x, &s.xp);
    let (wx2, wxp2) = (wx * wx, wxp * wxp);
    Terms {
        lhs: norm_sq(&bc),
        factor: (1.0 + wx2 + wxp2 + wx2 * wxp2) * norm_sq(&delta),
        rest: c("L_b_4") * s.w2_sq(),
    }
}

fn erg_cross_growth_kernel(m: &CoefficientModel, s: &Sample, _: &Lookup<'_>) -> Terms {
    let (fc, _, wz, wzp) = cross_kernel(m, s);
    let (w, _, _) = kernel_diffs(s);
    let (wz2, wzp2) = (wz * wz, wzp * wzp);
    Terms {
        lhs: norm_sq(&fc),
        factor: (1.0 + wz2 + wzp2 + wz2 * wzp2) * norm_sq(&w),
        rest: 0.0,
    }
}

const fn upper(id: &'static str, eval: fn(&CoefficientModel, &Sample, &Lookup<'_>) -> Terms) -> Inequality {
    Inequality {
        id,
        form: Form::Upper,
        constant: Some(id),
        fixed: &[],
        eval,
    }
}

pub static INEQUALITIES: &[Inequality] = &[
    upper("one-sided-lipschitz", one_sided),
    upper("eu-b-sig.growth", drift_growth),
    upper("eu-b-sig.monotone", drift_monotone),
    upper("eu-f-g.monotone", kernel_monotone),
    upper("eu-f-g.poly-lipschitz", kernel_poly_lipschitz),
    Inequality {
        id: "anti-sys.antisymmetry",
        form: Form::Zero,
        constant: None,
        fixed: &[],
        eval: antisymmetry,
    },
    upper("anti-sys.moment", anti_moment),
    upper("anti-sys.growth", anti_growth),
    upper("b-poly", drift_poly_lipschitz),
    upper("mon-rate.drift", rate_drift),
    upper("mon-rate.kernel", rate_kernel),
    Inequality {
        id: "sch-gr-erg.drift",
        form: Form::Lower,
        constant: Some("Lhat_bsigma_1"),
        fixed: &["Lhat_bsigma_2"],
        eval: erg_growth_drift,
    },
    Inequality {
        id: "sch-gr-erg.kernel",
        form: Form::Lower,
        constant: Some("Lhat_fg_1"),
        fixed: &[],
        eval: erg_growth_kernel,
    },
    Inequality {
        id: "diff-b-f-erg.drift",
        form: Form::Upper,
        constant: Some("L_b_1"),
        fixed: &["L_b_2"],
        eval: erg_diff_drift,
    },
    Inequality {
        id: "diff-b-f-erg.kernel",
        form: Form::Upper,
        constant: Some("L_f_1"),
        fixed: &[],
        eval: erg_diff_kernel,
    },
    Inequality {
        id: "er-sch-b-f.drift",
        form: Form::Lower,
        constant: Some("L_bsigma_1"),
        fixed: &["L_bsigma_2"],
        eval: erg_mono_drift,
    },
    Inequality {
        id: "er-sch-b-f.kernel",
        form: Form::Lower,
        constant: Some("L_fg_1"),
        fixed: &[],
        eval: erg_mono_kernel,
    },
    Inequality {
        id: "er-sch-x-b-f.drift",
        form: Form::Upper,
        constant: Some("L_bsigma_3"),
        fixed: &["L_bsigma_4", "L_bsigma_5"],
        eval: erg_cross_drift,
    },
    Inequality {
        id: "er-sch-x-b-f.kernel",
        form: Form::Upper,
        constant: Some("L_fg_2"),
        fixed: &["L_fg_3"],
        eval: erg_cross_kernel,
    },
    Inequality {
        id: "er-sch-gr-b-f.drift",
        form: Form::Upper,
        constant: Some("L_b_3"),
        fixed: &["L_b_4"],
        eval: erg_cross_growth_drift,
    },
    Inequality {
        id: "er-sch-gr-b-f.kernel",
        form: Form::Upper,
        constant: Some("L_f_2"),
        fixed: &[],
        eval: erg_cross_growth_kernel,
    },
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FamilyId;

    fn spec(count: usize) -> SampleSpec {
        SampleSpec {
            count,
            radius: 5.0,
            seed: 11,
        }
    }

    fn pure_cubic(sign: f64) -> CoefficientModel {
        let family = if sign < 0.0 {
            FamilyId::CubicMeanField
        } else {
            FamilyId::CubicRepulsive
        };
        let mut m = CoefficientModel::new(family, 1, 1).unwrap();
        m.params = crate::model::ModelParams {
            cubic_drift: -sign,
            ..crate::model::ModelParams::ZERO
        };
        m
    }

    #[test]
    fn antisymmetry_margin_is_exactly_zero() {
        let m = CoefficientModel::new(FamilyId::CubicMeanField, 2, 2).unwrap();
        let r = probe_assumptions(&m, &[AssumptionSet::AntiSymmetric], &spec(500), &BTreeMap::new()).unwrap();
        let e = r.entry("anti-sys.antisymmetry").unwrap();
        assert!(e.holds);
        assert_eq!(e.worst_margin, 0.0);
        assert_eq!(e.fitted_constant, None);
    }

    #[test]
    fn cubic_decay_is_one_sided_lipschitz_with_zero_constant() {
        // (x - x')(x'^3 - x^3) <= 0 for all reals
        let m = pure_cubic(-1.0);
        let r = probe_assumptions(
            &m,
            &[AssumptionSet::OneSidedLipschitz],
            &spec(10_000),
            &BTreeMap::new(),
        )
        .unwrap();
        let e = r.entry("one-sided-lipschitz").unwrap();
        assert!(e.holds, "worst margin {}", e.worst_margin);
        assert!(e.fitted_constant.unwrap() <= 0.0);
    }

    #[test]
    fn cubic_growth_violates_one_sided_lipschitz() {
        let m = pure_cubic(1.0);
        let ineq = &AssumptionSet::OneSidedLipschitz.inequalities()[0];
        let s = Sample {
            x: vec![1.0],
            xp: vec![0.0],
            y: vec![0.0],
            yp: vec![0.0],
            mu: vec![0.0, 0.0],
            mup: vec![0.0, 0.0],
        };
        let t = ineq.terms(&m, &s, &|_| 0.0);
        assert_eq!(t.lhs, 1.0);
        assert!((ineq.margin(t, 0.0) - 1.0).abs() < 1e-11);

        let r = probe_assumptions(&m, &[AssumptionSet::OneSidedLipschitz], &spec(1000), &BTreeMap::new()).unwrap();
        let e = r.entry("one-sided-lipschitz").unwrap();
        assert!(!e.holds);
        assert!(e.worst_margin > 0.0);
    }

    #[test]
    fn degenerate_difference_skips_fit() {
        let m = CoefficientModel::new(FamilyId::CubicMeanField, 1, 1).unwrap();
        let ineq = &AssumptionSet::OneSidedLipschitz.inequalities()[0];
        let s = Sample {
            x: vec![2.0],
            xp: vec![2.0],
            y: vec![0.0],
            yp: vec![0.0],
            mu: vec![1.0, -1.0],
            mup: vec![1.0, -1.0],
        };
        let t = ineq.terms(&m, &s, &|_| 0.0);
        assert_eq!(t.factor, 0.0);
        assert_eq!(ineq.fit(t), None);
        assert!(ineq.margin(t, 0.0) <= 0.0);
    }

    #[test]
    fn override_constant_is_used() {
        let m = pure_cubic(1.0);
        let mut o = BTreeMap::new();
        o.insert("one-sided-lipschitz".to_string(), 1e6);
        let r = probe_assumptions(&m, &[AssumptionSet::OneSidedLipschitz], &spec(200), &o).unwrap();
        let e = &r.entries[0];
        assert!(e.holds);
        assert_eq!(e.constant_source, Some(ConstantSource::Override));
    }

    #[test]
    fn zero_count_rejected() {
        let m = pure_cubic(-1.0);
        assert!(probe_assumptions(&m, &[AssumptionSet::OneSidedLipschitz], &spec(0), &BTreeMap::new()).is_err());
        assert!(AssumptionSet::parse_group("not-a-set").is_err());
    }

    #[test]
    fn two_atom_w2_picks_cheaper_matching() {
        let s = Sample {
            x: vec![0.0],
            xp: vec![0.0],
            y: vec![0.0],
            yp: vec![0.0],
            mu: vec![0.0, 2.0],
            mup: vec![3.0, 1.0],
        };
        assert_eq!(s.w2_sq(), 1.0);
        assert_eq!(s.w2_origin_sq(), 2.0);
    }

    #[test]
    fn every_family_passes_its_documented_sets() {
        for family in FamilyId::ALL {
            for d in [1, 2] {
                let m = CoefficientModel::new(family, d, d).unwrap();
                let sets = m.documented_sets();
                let r = probe_assumptions(&m, &sets, &spec(2000), &BTreeMap::new()).unwrap();
                for e in &r.entries {
                    assert!(e.holds, "{family} d={d} {}: worst margin {}", e.assumption_id, e.worst_margin);
                }
            }
        }
    }

    #[test]
    fn ergodic_family_documents_long_time_sets() {
        let m = CoefficientModel::new(FamilyId::ErgodicDissipative, 1, 1).unwrap();
        let sets = m.documented_sets();
        for s in AssumptionSet::parse_group("ergodic").unwrap() {
            assert!(sets.contains(&s), "{s} missing");
        }
        let cubic = CoefficientModel::new(FamilyId::CubicMeanField, 1, 1).unwrap();
        assert!(!cubic.documented_sets().contains(&AssumptionSet::ErgodicGrowth));
        let rep = CoefficientModel::new(FamilyId::CubicRepulsive, 1, 1).unwrap();
        assert!(rep.documented_sets().is_empty());
    }
}
