//! C ABI over the `mvsde` core crate.
//!
//! Objects cross the boundary as opaque handles created by `*_new` and
//! released by `*_free`. Every fallible call returns an [`MvsdeStatus`]; on
//! failure the message is available from [`mvsde_last_error`] on the same
//! thread. Arrays are flat row-major `double` buffers whose lengths the caller
//! passes explicitly.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mvsde::config::parse_config;
use mvsde::experiments::{self, Verdict};
use mvsde::metrics::{w2, W2Method};
use mvsde::rng::make_tableau;
use mvsde::scheme::{simulate, RunOptions};
use mvsde::{
    BrownianTableau, CoefficientModel, EmpiricalMeasure, Error, ExperimentKind, FamilyId, ParticleEnsemble,
    SchemeConfig, TamedModel, TamingVariant, TimeGrid,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Config = 4,
    StepTooLarge = 5,
    ResourceBound = 6,
    Io = 7,
    BufferTooSmall = 8,
    /// The experiment ran and its outputs were written, but its verdict failed.
    VerdictFailed = 9,
    Panic = 10,
}

/// Coefficient model handle.
pub struct MvsdeModel(CoefficientModel);

/// Brownian increment tableau handle.
pub struct MvsdeTableau(BrownianTableau);

/// Particle ensemble handle.
pub struct MvsdeEnsemble(ParticleEnsemble);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("no interior nul"));
}

struct Failure(MvsdeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } | Error::UnequalAtomCounts(..) => MvsdeStatus::DimensionMismatch,
            Error::Config(_) => MvsdeStatus::Config,
            Error::StepTooLarge { .. } => MvsdeStatus::StepTooLarge,
            Error::ResourceBound(_) => MvsdeStatus::ResourceBound,
            Error::Io(_) | Error::Json(_) => MvsdeStatus::Io,
            _ => MvsdeStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: MvsdeStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MvsdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MvsdeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            MvsdeStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(MvsdeStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(MvsdeStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(MvsdeStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len < need {
        return fail(MvsdeStatus::BufferTooSmall, format!("{what} holds {len} values, {need} needed"));
    }
    if p.is_null() {
        return fail(MvsdeStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .map_or_else(|| fail(MvsdeStatus::NullPointer, format!("{what} is null")), Ok)
}

fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(MvsdeStatus::NullPointer, "output handle pointer is null");
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn mvsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mvsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a model of `family` (for example `"cubic-mean-field"`) with state
/// dimension `d`, noise dimension `l` and default parameters.
///
/// # Safety
/// `family` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvsde_model_new(
    family: *const c_char,
    d: usize,
    l: usize,
    out: *mut *mut MvsdeModel,
) -> MvsdeStatus {
    guard(|| {
        let family: FamilyId = str_arg(family, "family")?.parse()?;
        out_ptr(out, MvsdeModel(CoefficientModel::new(family, d, l)?))
    })
}

/// Overrides one family parameter by name.
///
/// # Safety
/// `model` must come from [`mvsde_model_new`]; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mvsde_model_set_param(model: *mut MvsdeModel, name: *const c_char, value: f64) -> MvsdeStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let m = model
            .as_mut()
            .map_or_else(|| fail(MvsdeStatus::NullPointer, "model is null"), Ok)?;
        m.0 = m.0.clone().with_param(name, value)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`mvsde_model_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn mvsde_model_free(model: *mut MvsdeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Evaluates the drift at `x` (length `d`) against the empirical measure of
/// `n_atoms` atoms (`atoms` has `n_atoms * d` values). With `taming_n == 0`
/// the untamed drift is returned; otherwise the drift tamed at level
/// `taming_n` with `taming` (`"finite"`, `"ergodic"`, ...).
///
/// # Safety
/// Buffers must hold the stated number of values; `out` holds `out_len`.
#[no_mangle]
pub unsafe extern "C" fn mvsde_model_drift(
    model: *const MvsdeModel,
    t: f64,
    x: *const f64,
    atoms: *const f64,
    n_atoms: usize,
    taming_n: u64,
    taming: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> MvsdeStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let x = slice_arg(x, m.d, "x")?;
        let atoms = slice_arg(atoms, n_atoms * m.d, "atoms")?;
        let mu = EmpiricalMeasure::new(atoms, m.d)?;
        let b = if taming_n == 0 {
            m.eval_drift_b(t, x, &mu)?
        } else {
            let variant: TamingVariant = str_arg(taming, "taming")?.parse()?;
            TamedModel::new(m.clone(), taming_n, variant)?.tamed_drift_b(t, x, &mu)?
        };
        out_slice(out, out_len, b.len(), "out")?.copy_from_slice(&b);
        Ok(())
    })
}

/// Creates the Brownian tableau for `particles` particles with `l` noise
/// components on `[0, horizon]` at `n_max` steps per unit time.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvsde_tableau_new(
    seed: u64,
    particles: usize,
    l: usize,
    horizon: f64,
    n_max: u64,
    out: *mut *mut MvsdeTableau,
) -> MvsdeStatus {
    guard(|| out_ptr(out, MvsdeTableau(make_tableau(seed, particles, l, horizon, n_max)?)))
}

/// Writes the `l` increments of `particle` over coarse step `step` at
/// `level` steps per unit time (`level` must divide `n_max`).
///
/// # Safety
/// `tableau` must be live; `out` holds `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn mvsde_tableau_increments(
    tableau: *const MvsdeTableau,
    level: u64,
    particle: usize,
    step: u64,
    out: *mut f64,
    out_len: usize,
) -> MvsdeStatus {
    guard(|| {
        let inc = handle(tableau, "tableau")?.0.increments_at_level(level, particle, step)?;
        out_slice(out, out_len, inc.len(), "out")?.copy_from_slice(&inc);
        Ok(())
    })
}

/// # Safety
/// `tableau` must come from [`mvsde_tableau_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn mvsde_tableau_free(tableau: *mut MvsdeTableau) {
    if !tableau.is_null() {
        drop(Box::from_raw(tableau));
    }
}

/// Creates an ensemble of `n` particles in dimension `d` from `states`
/// (`n * d` values, row-major).
///
/// # Safety
/// `states` holds `n * d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvsde_ensemble_new(
    n: usize,
    d: usize,
    states: *const f64,
    out: *mut *mut MvsdeEnsemble,
) -> MvsdeStatus {
    guard(|| {
        let states = slice_arg(states, n * d, "states")?.to_vec();
        out_ptr(out, MvsdeEnsemble(ParticleEnsemble::new(n, d, states)?))
    })
}

/// Number of particles, or 0 for a null handle.
///
/// # Safety
/// `ensemble` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn mvsde_ensemble_len(ensemble: *const MvsdeEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.0.len())
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `ensemble` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn mvsde_ensemble_dim(ensemble: *const MvsdeEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.0.dim())
}

/// Copies the `N * d` states into `out`.
///
/// # Safety
/// `ensemble` must be live; `out` holds `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn mvsde_ensemble_states(
    ensemble: *const MvsdeEnsemble,
    out: *mut f64,
    out_len: usize,
) -> MvsdeStatus {
    guard(|| {
        let states = handle(ensemble, "ensemble")?.0.states();
        out_slice(out, out_len, states.len(), "out")?.copy_from_slice(states);
        Ok(())
    })
}

/// # Safety
/// `ensemble` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mvsde_ensemble_free(ensemble: *mut MvsdeEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Runs the tamed Euler scheme from `initial` over `[0, horizon]` at `n`
/// steps per unit time, driven by `tableau`. `taming` names the variant
/// (null means `"finite"`). On success `*out` receives the final ensemble and
/// `*diverged_at` the divergence step, or -1.
///
/// # Safety
/// Handles must be live; `out` and `diverged_at` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvsde_simulate(
    model: *const MvsdeModel,
    tableau: *const MvsdeTableau,
    initial: *const MvsdeEnsemble,
    horizon: f64,
    n: u64,
    taming: *const c_char,
    out: *mut *mut MvsdeEnsemble,
    diverged_at: *mut i64,
) -> MvsdeStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let tableau = &handle(tableau, "tableau")?.0;
        let initial = handle(initial, "initial")?.0.clone();
        if diverged_at.is_null() {
            return fail(MvsdeStatus::NullPointer, "diverged_at is null");
        }
        let mut scheme = SchemeConfig::default();
        if !taming.is_null() {
            scheme.taming = str_arg(taming, "taming")?.parse()?;
        }
        let grid = TimeGrid::new(horizon, n)?;
        let outcome = simulate(model, &grid, tableau, &scheme, initial, &RunOptions::default(), &mut |_, _, _| {})?;
        *diverged_at = outcome.diverged_at.map_or(-1, |k| k as i64);
        out_ptr(out, MvsdeEnsemble(outcome.ensemble))
    })
}

/// Empirical W2 distance between two ensembles of equal size. `method` is
/// `"sorted_1d"`, `"exact_assignment"` or `"sliced"` (null picks
/// `"exact_assignment"`).
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvsde_w2(
    a: *const MvsdeEnsemble,
    b: *const MvsdeEnsemble,
    method: *const c_char,
    out: *mut f64,
) -> MvsdeStatus {
    guard(|| {
        let (a, b) = (&handle(a, "a")?.0, &handle(b, "b")?.0);
        let method: W2Method = if method.is_null() {
            "exact_assignment".parse()?
        } else {
            str_arg(method, "method")?.parse()?
        };
        if out.is_null() {
            return fail(MvsdeStatus::NullPointer, "out is null");
        }
        let (ma, mb) = (EmpiricalMeasure::new(a.states(), a.dim())?, EmpiricalMeasure::new(b.states(), b.dim())?);
        *out = w2(&ma, &mb, method)?;
        Ok(())
    })
}

/// Parses a TOML config, runs its experiment and writes the outputs.
/// `out_dir` (nullable) overrides the configured output directory. Returns
/// [`MvsdeStatus::VerdictFailed`] when the run completed but failed its
/// checks.
///
/// # Safety
/// `config` must be NUL-terminated; `out_dir` NUL-terminated or null.
#[no_mangle]
pub unsafe extern "C" fn mvsde_run_config(config: *const c_char, out_dir: *const c_char) -> MvsdeStatus {
    let mut verdict_failed = false;
    let status = guard(|| {
        let mut cfg = parse_config(str_arg(config, "config")?)?;
        if !out_dir.is_null() {
            cfg.run.out_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        }
        let verdict: Option<Verdict> = match cfg.experiment {
            ExperimentKind::Simulate => {
                experiments::run_simulate(&cfg)?.write_outputs(&cfg)?;
                None
            }
            ExperimentKind::StrongRate => {
                let r = experiments::run_strong_rate(&cfg)?;
                r.write_outputs(&cfg)?;
                Some(r.verdict)
            }
            ExperimentKind::PocRate => {
                let r = experiments::run_poc_rate(&cfg)?;
                r.write_outputs(&cfg)?;
                Some(r.verdict)
            }
            ExperimentKind::MomentStability => {
                let r = experiments::run_moment_stability(&cfg)?;
                r.write_outputs(&cfg)?;
                Some(r.verdict)
            }
            ExperimentKind::Ergodic => {
                let r = experiments::run_ergodic_contraction(&cfg)?;
                r.write_outputs(&cfg)?;
                Some(r.verdict)
            }
            ExperimentKind::ProbeAssumptions => {
                let r = experiments::run_probe_assumptions(&cfg)?;
                r.write_outputs(&cfg)?;
                Some(r.verdict)
            }
        };
        verdict_failed = verdict.is_some_and(|v| v.failed());
        Ok(())
    });
    if status == MvsdeStatus::Ok && verdict_failed {
        set_last_error("experiment verdict failed");
        return MvsdeStatus::VerdictFailed;
    }
    status
}
