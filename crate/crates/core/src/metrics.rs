//! Wasserstein-2 distances between uniform empirical measures and log-log
//! rate fits.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ensemble::{sorted_sum, EmpiricalMeasure};
use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::vecops::{dot, norm};

pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;
pub const DEFAULT_PROJECTIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum W2Method {
    /// Monotone coupling; exact in `d = 1`.
    Sorted1d,
    /// Minimum-cost perfect matching; exact in any dimension.
    ExactAssignment { cap: usize },
    /// Monte Carlo average over random directions (approximate for `d > 1`).
    Sliced { projections: usize, seed: u64 },
}

impl W2Method {
    pub fn name(&self) -> &'static str {
        match self {
            W2Method::Sorted1d => "sorted_1d",
            W2Method::ExactAssignment { .. } => "exact_assignment",
            W2Method::Sliced { .. } => "sliced",
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, W2Method::Sliced { .. })
    }
}

impl fmt::Display for W2Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for W2Method {
    type Err = Error;

    /// Parses a method name with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sorted_1d" => Ok(W2Method::Sorted1d),
            "exact_assignment" => Ok(W2Method::ExactAssignment {
                cap: DEFAULT_ASSIGNMENT_CAP,
            }),
            "sliced" => Ok(W2Method::Sliced {
                projections: DEFAULT_PROJECTIONS,
                seed: 0,
            }),
            other => Err(Error::Unknown {
                kind: "W2 method",
                name: other.to_string(),
            }),
        }
    }
}

/// A distance together with its Monte Carlo standard error (sliced only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct W2Estimate {
    pub value: f64,
    pub stderr: Option<f64>,
}

pub fn w2(a: &EmpiricalMeasure<'_>, b: &EmpiricalMeasure<'_>, method: W2Method) -> Result<f64> {
    w2_estimate(a, b, method).map(|e| e.value)
}

pub fn w2_estimate(a: &EmpiricalMeasure<'_>, b: &EmpiricalMeasure<'_>, method: W2Method) -> Result<W2Estimate> {
    crate::error::check_dim("w2", a.dim(), b.dim())?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("w2 of an empty measure".into()));
    }
    let exact = |value| W2Estimate { value, stderr: None };
    match method {
        W2Method::Sorted1d => {
            equal_counts(a, b)?;
            if a.dim() != 1 {
                return Err(Error::InvalidParameter(format!(
                    "sorted_1d needs d = 1, got d = {}",
                    a.dim()
                )));
            }
            Ok(exact(quantile_w2_sq(a.as_slice().to_vec(), b.as_slice().to_vec()).sqrt()))
        }
        W2Method::ExactAssignment { cap } => {
            equal_counts(a, b)?;
            if a.len() > cap {
                return Err(Error::ResourceBound(format!(
                    "exact_assignment on {} atoms exceeds the cap of {cap}",
                    a.len()
                )));
            }
            Ok(exact(assignment_w2_sq(a, b).sqrt()))
        }
        W2Method::Sliced { projections, seed } => sliced(a, b, projections, seed),
    }
}

fn equal_counts(a: &EmpiricalMeasure<'_>, b: &EmpiricalMeasure<'_>) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::UnequalAtomCounts(a.len(), b.len()))
    }
}

/// Squared W2 between two 1D uniform empirical measures of any sizes,
/// integrating the squared quantile difference over `[0, 1]`.
fn quantile_w2_sq(mut xs: Vec<f64>, mut ys: Vec<f64>) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    ys.sort_unstable_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    if n == m {
        let mut terms: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (x - y) * (x - y)).collect();
        return sorted_sum(&mut terms) / n as f64;
    }
    // breakpoints i/n and j/m, merged exactly via integer cross-multiplication
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let total = (n as u128) * (m as u128);
    let mut terms = Vec::with_capacity(n + m);
    while i < n && j < m {
        let next_x = (i as u128 + 1) * m as u128;
        let next_y = (j as u128 + 1) * n as u128;
        let next = next_x.min(next_y);
        let diff = xs[i] - ys[j];
        terms.push(diff * diff * ((next - prev) as f64 / total as f64));
        prev = next;
        if next_x == next {
            i += 1;
        }
        if next_y == next {
            j += 1;
        }
    }
    sorted_sum(&mut terms)
}

/// Squared W2 via a shortest-augmenting-path assignment solver on the
/// squared-distance cost matrix.
fn assignment_w2_sq(a: &EmpiricalMeasure<'_>, b: &EmpiricalMeasure<'_>) -> f64 {
    let n = a.len();
    let cost: Vec<f64> = a
        .atoms()
        .flat_map(|x| {
            b.atoms()
                .map(move |y| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        })
        .collect();
    let matching = solve_assignment(&cost, n);
    let mut matched: Vec<f64> = matching.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    sorted_sum(&mut matched) / n as f64
}

/// Minimum-cost perfect matching of a dense `n x n` cost matrix; returns
/// the column assigned to each row.
pub(crate) fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials u (rows) and v (columns); column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + (c - 1)] - u[r] - v[c];
                if reduced < minv[c] {
                    minv[c] = reduced;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[row_of[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of[col0] = row_of[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for c in 1..=n {
        col_of_row[row_of[c] - 1] = c - 1;
    }
    col_of_row
}

fn sliced(a: &EmpiricalMeasure<'_>, b: &EmpiricalMeasure<'_>, projections: usize, seed: u64) -> Result<W2Estimate> {
    if projections == 0 {
        return Err(Error::InvalidParameter("sliced W2 needs >= 1 projection".into()));
    }
    let d = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(projections);
    let mut theta = vec![0.0; d];
    for _ in 0..projections {
        loop {
            for t in theta.iter_mut() {
                let (x, y) = (rng.next_u64(), rng.next_u64());
                *t = standard_normal(x, y);
            }
            let len = norm(&theta);
            if len > 0.0 {
                theta.iter_mut().for_each(|t| *t /= len);
                break;
            }
        }
        let pa: Vec<f64> = a.atoms().map(|x| dot(x, &theta)).collect();
        let pb: Vec<f64> = b.atoms().map(|y| dot(y, &theta)).collect();
        samples.push(quantile_w2_sq(pa, pb));
    }
    let k = projections as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let value = mean.sqrt();
    let stderr = if projections > 1 && value > 0.0 {
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (k - 1.0);
        // delta method for the square root
        (var / k).sqrt() / (2.0 * value)
    } else {
        0.0
    };
    Ok(W2Estimate {
        value,
        stderr: Some(stderr),
    })
}

/// Ordinary least squares of `ln y` on `ln x` (or on `x` for semilog fits).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
}

/// Fits `ln y = slope * ln x + intercept`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    check_fit_input(xs, ys)?;
    for (index, &value) in xs.iter().chain(ys).enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositive {
                index: index % xs.len(),
                value,
            });
        }
    }
    let points: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    ols(points)
}

/// Fits `ln y = slope * t + intercept`.
pub fn fit_semilog(ts: &[f64], ys: &[f64]) -> Result<RateFit> {
    check_fit_input(ts, ys)?;
    for (index, &value) in ys.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositive { index, value });
        }
    }
    ols(ts.iter().zip(ys).map(|(t, y)| (*t, y.ln())).collect())
}

fn check_fit_input(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "rate fit",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs >= 2 points, got {}",
            xs.len()
        )));
    }
    Ok(())
}

fn ols(points: Vec<(f64, f64)>) -> Result<RateFit> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("rate fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_stderr = if points.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(RateFit {
        points,
        slope,
        intercept,
        r_squared,
        slope_stderr,
    })
}
