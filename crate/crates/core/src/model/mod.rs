//! Coefficient models: drift `b`, diffusion `sigma`, Vlasov kernels `f`, `g`
//! and, for pairwise models, the two-point coefficients `b~`, `sigma~`.
//!
//! The interacting particle system driven by a model reads
//!
//! ```text
//! dX^i = ( b(t, X^i, mu) + 1/N sum_j f(X^i, X^j) ) dt
//!      + ( sigma(t, X^i, mu) + 1/N sum_j g(X^i, X^j) ) dW^i
//! ```
//!
//! where `mu` is the empirical measure of the particles. In pairwise mode the
//! measure dependence is itself a kernel average: `b(t, x, mu) = 1/N sum_j
//! b~(t, x, y_j)` and likewise for `sigma`.
//!
//! All built-in families share one parametric shape (see [`ModelParams`]) and
//! differ in their defaults, growth exponent and measure mode. Matrices are
//! `d x l`, stored row-major.

mod families;
pub mod probe;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::EmpiricalMeasure;
use crate::error::{check_dim, Error, Result};
use crate::vecops::{norm_sq, sub_into};

pub use families::{param_specs, ParamSpec, PARAM_NAMES};

/// Built-in model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyId {
    /// `b = -x|x|^2 + lambda * mean(mu)`, cubic attracting kernel, constant noise.
    CubicMeanField,
    /// `b = -x - x|x|^2`, `sigma = eps * diag(x)`; dissipative enough for the
    /// long-time (ergodic) assumptions.
    ErgodicDissipative,
    /// Pairwise form `b~ = -x|x|^2 + kappa (y - x)`, `sigma~ = c (y - x) + nu`.
    PairwiseVlasov,
    /// Globally Lipschitz sanity family (`q = 0`).
    LipschitzBaseline,
    /// `b = +x|x|^2`; violates one-sided Lipschitz bounds. Negative tests only.
    CubicRepulsive,
}

impl FamilyId {
    pub const ALL: [FamilyId; 5] = [
        FamilyId::CubicMeanField,
        FamilyId::ErgodicDissipative,
        FamilyId::PairwiseVlasov,
        FamilyId::LipschitzBaseline,
        FamilyId::CubicRepulsive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyId::CubicMeanField => "cubic-mean-field",
            FamilyId::ErgodicDissipative => "ergodic-dissipative",
            FamilyId::PairwiseVlasov => "pairwise-vlasov",
            FamilyId::LipschitzBaseline => "lipschitz-baseline",
            FamilyId::CubicRepulsive => "cubic-repulsive",
        }
    }

    pub fn measure_mode(self) -> MeasureMode {
        match self {
            FamilyId::PairwiseVlasov => MeasureMode::Pairwise,
            _ => MeasureMode::Functional,
        }
    }

    pub fn default_q(self) -> f64 {
        match self {
            FamilyId::LipschitzBaseline => 0.0,
            _ => 2.0,
        }
    }
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FamilyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "model family",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureMode {
    /// `b`, `sigma` take the empirical measure as a whole.
    Functional,
    /// `b`, `sigma` are averages of two-point coefficients over the atoms.
    Pairwise,
}

impl MeasureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasureMode::Functional => "functional",
            MeasureMode::Pairwise => "pairwise",
        }
    }
}

impl FromStr for MeasureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "functional" => Ok(MeasureMode::Functional),
            "pairwise" => Ok(MeasureMode::Pairwise),
            other => Err(Error::Unknown {
                kind: "measure mode",
                name: other.to_string(),
            }),
        }
    }
}

/// Real parameters of the shared parametric shape.
///
/// With `D(v)` the `d x l` matrix carrying `v_a` at `(a, a)` and `E` the
/// `d x l` identity pattern:
///
/// ```text
/// confinement  a(x)      = linear_drift * x + cubic_drift * x|x|^2
/// functional   b(x, mu)  = -a(x) + mean_coupling * mean(mu)
///              sigma(x)  = noise * E + state_noise * D(x)
/// pairwise     b~(x, y)  = -a(x) + pair_coupling * (y - x)
///              sigma~    = noise * E + pair_noise * D(y - x)
/// kernels      f(x, y)   = -kernel_linear * z - kernel_cubic * z|z|^2,  z = x - y
///              g(x, y)   = kernel_noise * D(z)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub linear_drift: f64,
    pub cubic_drift: f64,
    pub mean_coupling: f64,
    pub pair_coupling: f64,
    pub noise: f64,
    pub state_noise: f64,
    pub pair_noise: f64,
    pub kernel_linear: f64,
    pub kernel_cubic: f64,
    pub kernel_noise: f64,
}

impl ModelParams {
    pub const ZERO: ModelParams = ModelParams {
        linear_drift: 0.0,
        cubic_drift: 0.0,
        mean_coupling: 0.0,
        pair_coupling: 0.0,
        noise: 0.0,
        state_noise: 0.0,
        pair_noise: 0.0,
        kernel_linear: 0.0,
        kernel_cubic: 0.0,
        kernel_noise: 0.0,
    };

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "linear_drift" => self.linear_drift,
            "cubic_drift" => self.cubic_drift,
            "mean_coupling" => self.mean_coupling,
            "pair_coupling" => self.pair_coupling,
            "noise" => self.noise,
            "state_noise" => self.state_noise,
            "pair_noise" => self.pair_noise,
            "kernel_linear" => self.kernel_linear,
            "kernel_cubic" => self.kernel_cubic,
            "kernel_noise" => self.kernel_noise,
            _ => return None,
        })
    }

    pub(crate) fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "linear_drift" => &mut self.linear_drift,
            "cubic_drift" => &mut self.cubic_drift,
            "mean_coupling" => &mut self.mean_coupling,
            "pair_coupling" => &mut self.pair_coupling,
            "noise" => &mut self.noise,
            "state_noise" => &mut self.state_noise,
            "pair_noise" => &mut self.pair_noise,
            "kernel_linear" => &mut self.kernel_linear,
            "kernel_cubic" => &mut self.kernel_cubic,
            "kernel_noise" => &mut self.kernel_noise,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientModel {
    pub family: FamilyId,
    pub d: usize,
    pub l: usize,
    /// Polynomial growth exponent used by taming and assumption probes.
    pub q: f64,
    /// Integrability exponent of the initial law (enters the probes).
    pub p0: f64,
    /// Exponent of the rate-monotonicity probe.
    pub p1: f64,
    pub measure_mode: MeasureMode,
    pub f_antisymmetric: bool,
    pub params: ModelParams,
}

impl CoefficientModel {
    /// A family with its default parameters.
    pub fn new(family: FamilyId, d: usize, l: usize) -> Result<Self> {
        if d == 0 || l == 0 {
            return Err(Error::InvalidParameter(format!(
                "dimensions must be positive (d = {d}, l = {l})"
            )));
        }
        let q = family.default_q();
        Ok(CoefficientModel {
            family,
            d,
            l,
            q,
            p0: families::default_p0(q),
            p1: 4.0,
            measure_mode: family.measure_mode(),
            f_antisymmetric: true,
            params: families::defaults(family),
        })
    }

    /// A family with parameter overrides, as read from a config file.
    pub fn with_overrides(
        family: FamilyId,
        d: usize,
        l: usize,
        overrides: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let mut model = Self::new(family, d, l)?;
        for (name, &value) in overrides {
            model = model.with_param(name, value)?;
        }
        Ok(model)
    }

    /// Sets one family parameter; rejects names the family does not accept.
    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} = {value} is not finite")));
        }
        if !families::accepts(self.family, name) {
            return Err(Error::Unknown {
                kind: "parameter",
                name: format!("{name} (family {})", self.family),
            });
        }
        *self.params.slot(name).expect("accepted names are slots") = value;
        Ok(self)
    }

    pub fn with_q(mut self, q: f64) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q must be >= 0, got {q}")));
        }
        self.q = q;
        Ok(self)
    }

    pub fn with_p0(mut self, p0: f64) -> Result<Self> {
        if !(p0 >= 2.0 && p0.is_finite()) {
            return Err(Error::InvalidParameter(format!("p0 must be >= 2, got {p0}")));
        }
        self.p0 = p0;
        Ok(self)
    }

    pub fn with_p1(mut self, p1: f64) -> Result<Self> {
        if !(p1 > 2.0 && p1.is_finite()) {
            return Err(Error::InvalidParameter(format!("p1 must be > 2, got {p1}")));
        }
        self.p1 = p1;
        Ok(self)
    }

    /// Number of diagonal slots in a `d x l` matrix.
    #[inline]
    pub(crate) fn diag_len(&self) -> usize {
        self.d.min(self.l)
    }

    // ---- unchecked evaluation into caller buffers (hot path) ----

    #[inline]
    fn confinement_into(&self, x: &[f64], out: &mut [f64]) {
        let p = &self.params;
        let cubic = p.cubic_drift * norm_sq(x);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = -(p.linear_drift * xi) - cubic * xi;
        }
    }

    /// Two-point drift `b~(t, x, y)`; only meaningful in pairwise mode.
    #[inline]
    pub(crate) fn pair_drift_into(&self, _t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.confinement_into(x, out);
        let k = self.params.pair_coupling;
        for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
            *o += k * (yi - xi);
        }
    }

    /// Two-point diffusion `sigma~(t, x, y)`.
    #[inline]
    pub(crate) fn pair_sigma_into(&self, _t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let p = &self.params;
        for a in 0..self.diag_len() {
            out[a * self.l + a] = p.noise + p.pair_noise * (y[a] - x[a]);
        }
    }

    #[inline]
    pub(crate) fn drift_into(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure<'_>, out: &mut [f64]) {
        match self.measure_mode {
            MeasureMode::Functional => {
                self.confinement_into(x, out);
                let lambda = self.params.mean_coupling;
                if lambda != 0.0 {
                    for (o, m) in out.iter_mut().zip(mu.mean()) {
                        *o += lambda * m;
                    }
                }
            }
            MeasureMode::Pairwise => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let mut term = vec![0.0; self.d];
                for y in mu.atoms() {
                    self.pair_drift_into(t, x, y, &mut term);
                    for (o, v) in out.iter_mut().zip(&term) {
                        *o += v;
                    }
                }
                let n = mu.len() as f64;
                out.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    #[inline]
    pub(crate) fn sigma_into(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure<'_>, out: &mut [f64]) {
        match self.measure_mode {
            MeasureMode::Functional => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let p = &self.params;
                for a in 0..self.diag_len() {
                    out[a * self.l + a] = p.noise + p.state_noise * x[a];
                }
            }
            MeasureMode::Pairwise => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let mut term = vec![0.0; self.d * self.l];
                for y in mu.atoms() {
                    self.pair_sigma_into(t, x, y, &mut term);
                    for (o, v) in out.iter_mut().zip(&term) {
                        *o += v;
                    }
                }
                let n = mu.len() as f64;
                out.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    /// `f(x, y)`. Computed from `z = x - y` only, so `f(y, x) = -f(x, y)`
    /// holds bitwise for every built-in kernel.
    #[inline]
    pub(crate) fn kernel_f_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        sub_into(x, y, out);
        let nsq = norm_sq(out);
        self.kernel_f_from_diff(nsq, out);
    }

    /// Overwrites `z = x - y` (with `|z|^2 = nsq`) by `f(x, y)`.
    #[inline]
    pub(crate) fn kernel_f_from_diff(&self, nsq: f64, z: &mut [f64]) {
        let p = &self.params;
        let c = p.kernel_cubic * nsq;
        for o in z.iter_mut() {
            let v = *o;
            *o = -(p.kernel_linear * v) - c * v;
        }
    }

    #[inline]
    pub(crate) fn kernel_g_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let c = self.params.kernel_noise;
        if c != 0.0 {
            for a in 0..self.diag_len() {
                out[a * self.l + a] = c * (x[a] - y[a]);
            }
        }
    }

    /// Whether `g` vanishes identically.
    #[inline]
    pub(crate) fn kernel_g_is_zero(&self) -> bool {
        self.params.kernel_noise == 0.0
    }

    /// Adds `g(x, y) / den` to `acc` given `z = x - y`.
    #[inline]
    pub(crate) fn kernel_g_add_from_diff(&self, z: &[f64], den: f64, acc: &mut [f64]) {
        let c = self.params.kernel_noise;
        for a in 0..self.diag_len() {
            acc[a * self.l + a] += (c * z[a]) / den;
        }
    }

    // ---- checked public evaluation ----

    /// `b(t, x, mu)`.
    pub fn eval_drift_b(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure<'_>) -> Result<Vec<f64>> {
        self.check_point("eval_drift_b", x, Some(mu))?;
        let mut out = vec![0.0; self.d];
        self.drift_into(t, x, mu, &mut out);
        Ok(out)
    }

    /// `sigma(t, x, mu)` as a row-major `d x l` matrix.
    pub fn eval_sigma(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure<'_>) -> Result<Vec<f64>> {
        self.check_point("eval_sigma", x, Some(mu))?;
        let mut out = vec![0.0; self.d * self.l];
        self.sigma_into(t, x, mu, &mut out);
        Ok(out)
    }

    pub fn eval_kernel_f(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim("eval_kernel_f", self.d, x.len())?;
        check_dim("eval_kernel_f", self.d, y.len())?;
        let mut out = vec![0.0; self.d];
        self.kernel_f_into(x, y, &mut out);
        Ok(out)
    }

    pub fn eval_kernel_g(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim("eval_kernel_g", self.d, x.len())?;
        check_dim("eval_kernel_g", self.d, y.len())?;
        let mut out = vec![0.0; self.d * self.l];
        self.kernel_g_into(x, y, &mut out);
        Ok(out)
    }

    /// `b~(t, x, y)`; errors for functional-mode models.
    pub fn eval_pair_drift(&self, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.require_pairwise("eval_pair_drift")?;
        check_dim("eval_pair_drift", self.d, x.len())?;
        check_dim("eval_pair_drift", self.d, y.len())?;
        let mut out = vec![0.0; self.d];
        self.pair_drift_into(t, x, y, &mut out);
        Ok(out)
    }

    pub fn eval_pair_sigma(&self, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.require_pairwise("eval_pair_sigma")?;
        check_dim("eval_pair_sigma", self.d, x.len())?;
        check_dim("eval_pair_sigma", self.d, y.len())?;
        let mut out = vec![0.0; self.d * self.l];
        self.pair_sigma_into(t, x, y, &mut out);
        Ok(out)
    }

    fn require_pairwise(&self, op: &str) -> Result<()> {
        if self.measure_mode == MeasureMode::Pairwise {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{op} needs a pairwise model, {} is functional",
                self.family
            )))
        }
    }

    pub(crate) fn check_point(
        &self,
        context: &'static str,
        x: &[f64],
        mu: Option<&EmpiricalMeasure<'_>>,
    ) -> Result<()> {
        check_dim(context, self.d, x.len())?;
        if let Some(mu) = mu {
            check_dim(context, self.d, mu.dim())?;
            if mu.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "{context}: empirical measure has no atoms"
                )));
            }
        }
        Ok(())
    }
}
