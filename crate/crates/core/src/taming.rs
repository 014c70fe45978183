//! Tamed coefficients `b^n, sigma^n, f^n, g^n`.
//!
//! Each coefficient is divided by a penalty that is at least 1:
//!
//! ```text
//! finite                  1 + n^{-1/2} |v|^{2q}
//! ergodic                 1 + n^{-1/2} |v|^{q}
//! strong_order_candidate  1 + n^{-1}   |v|^{4q}
//! off                     1
//! ```
//!
//! with `v = x` for `(b, sigma)` and `v = x - y` for `(f, g)`. Norms are
//! Euclidean; matrices are divided entrywise, which scales the Frobenius norm.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::EmpiricalMeasure;
use crate::error::{check_dim, Error, Result};
use crate::model::CoefficientModel;
use crate::vecops::{norm_sq, pow_from_sq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamingVariant {
    Finite,
    Ergodic,
    StrongOrderCandidate,
    Off,
}

impl TamingVariant {
    pub const ALL: [TamingVariant; 4] = [
        TamingVariant::Finite,
        TamingVariant::Ergodic,
        TamingVariant::StrongOrderCandidate,
        TamingVariant::Off,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TamingVariant::Finite => "finite",
            TamingVariant::Ergodic => "ergodic",
            TamingVariant::StrongOrderCandidate => "strong_order_candidate",
            TamingVariant::Off => "off",
        }
    }
}

impl fmt::Display for TamingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TamingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TamingVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "taming variant",
                name: s.to_string(),
            })
    }
}

/// A model together with a taming variant and level `n = 1/h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TamedModel {
    pub base: CoefficientModel,
    pub n: u64,
    pub variant: TamingVariant,
    scale: f64,
    exponent: f64,
}

impl TamedModel {
    pub fn new(base: CoefficientModel, n: u64, variant: TamingVariant) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("taming level n must be >= 1".into()));
        }
        let nf = n as f64;
        let q = base.q;
        let (scale, exponent) = match variant {
            TamingVariant::Finite => (1.0 / nf.sqrt(), 2.0 * q),
            TamingVariant::Ergodic => (1.0 / nf.sqrt(), q),
            TamingVariant::StrongOrderCandidate => (1.0 / nf, 4.0 * q),
            TamingVariant::Off => (0.0, 0.0),
        };
        Ok(TamedModel {
            base,
            n,
            variant,
            scale,
            exponent,
        })
    }

    /// The taming denominator at a point whose squared norm is `nsq`.
    #[inline]
    pub fn denominator(&self, nsq: f64) -> f64 {
        if self.variant == TamingVariant::Off {
            1.0
        } else {
            1.0 + self.scale * pow_from_sq(nsq, self.exponent)
        }
    }

    #[inline]
    pub(crate) fn drift_into(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure<'_>, out: &mut [f64]) {
        self.base.drift_into(t, x, mu, out);
        divide(out, self.denominator(norm_sq(x)));
    }

    #[inline]
    pub(crate) fn sigma_into(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure<'_>, out: &mut [f64]) {
        self.base.sigma_into(t, x, mu, out);
        divide(out, self.denominator(norm_sq(x)));
    }

    pub fn tamed_drift_b(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure<'_>) -> Result<Vec<f64>> {
        self.base.check_point("tamed_drift_b", x, Some(mu))?;
        let mut out = vec![0.0; self.base.d];
        self.drift_into(t, x, mu, &mut out);
        Ok(out)
    }

    pub fn tamed_sigma(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure<'_>) -> Result<Vec<f64>> {
        self.base.check_point("tamed_sigma", x, Some(mu))?;
        let mut out = vec![0.0; self.base.d * self.base.l];
        self.sigma_into(t, x, mu, &mut out);
        Ok(out)
    }

    pub fn tamed_kernel_f(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim("tamed_kernel_f", self.base.d, x.len())?;
        check_dim("tamed_kernel_f", self.base.d, y.len())?;
        let mut out = vec![0.0; self.base.d];
        self.base.kernel_f_into(x, y, &mut out);
        let mut z = vec![0.0; self.base.d];
        crate::vecops::sub_into(x, y, &mut z);
        divide(&mut out, self.denominator(norm_sq(&z)));
        Ok(out)
    }

    pub fn tamed_kernel_g(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim("tamed_kernel_g", self.base.d, x.len())?;
        check_dim("tamed_kernel_g", self.base.d, y.len())?;
        let mut out = vec![0.0; self.base.d * self.base.l];
        self.base.kernel_g_into(x, y, &mut out);
        let mut z = vec![0.0; self.base.d];
        crate::vecops::sub_into(x, y, &mut z);
        divide(&mut out, self.denominator(norm_sq(&z)));
        Ok(out)
    }
}

#[inline]
fn divide(v: &mut [f64], den: f64) {
    if den != 1.0 {
        v.iter_mut().for_each(|c| *c /= den);
    }
}
