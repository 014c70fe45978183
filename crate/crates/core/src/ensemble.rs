//! Particle states, empirical-measure views and moment statistics.
//!
//! Reductions over particles sum their terms in sorted order, so every
//! statistic is bit-identical under permutation of the particles and under
//! any thread count.

use std::io::Write;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::vecops::{norm_sq, pow_from_sq};

/// Value reported by statistics of an overflowed ensemble.
pub const EXPLOSION_SENTINEL: f64 = f64::INFINITY;

/// Sum after sorting, independent of the input order.
pub(crate) fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().fold(0.0, |acc, v| acc + v)
}

/// Uniform empirical measure over `len / d` atoms of a flat row-major buffer.
#[derive(Debug)]
pub struct EmpiricalMeasure<'a> {
    atoms: &'a [f64],
    d: usize,
    mean: OnceLock<Vec<f64>>,
}

impl<'a> EmpiricalMeasure<'a> {
    pub fn new(atoms: &'a [f64], d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("measure dimension must be >= 1".into()));
        }
        if !atoms.len().is_multiple_of(d) {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates do not split into atoms of dimension {d}",
                atoms.len()
            )));
        }
        Ok(EmpiricalMeasure {
            atoms,
            d,
            mean: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.atoms
    }

    pub fn atom(&self, i: usize) -> &'a [f64] {
        &self.atoms[i * self.d..(i + 1) * self.d]
    }

    pub fn atoms(&self) -> std::slice::ChunksExact<'a, f64> {
        self.atoms.chunks_exact(self.d)
    }

    /// Componentwise mean, computed once.
    pub fn mean(&self) -> &[f64] {
        self.mean.get_or_init(|| {
            let n = self.len() as f64;
            let mut column = Vec::with_capacity(self.len());
            (0..self.d)
                .map(|a| {
                    column.clear();
                    column.extend(self.atoms().map(|x| x[a]));
                    sorted_sum(&mut column) / n
                })
                .collect()
        })
    }

    /// `(1/N) sum_i |x_i|^p`.
    pub fn moment(&self, p: f64) -> f64 {
        let mut terms: Vec<f64> = self.atoms().map(|x| pow_from_sq(norm_sq(x), p)).collect();
        sorted_sum(&mut terms) / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    n: usize,
    d: usize,
    states: Vec<f64>,
    pub t_index: u64,
    overflow: bool,
}

impl ParticleEnsemble {
    /// Ensemble from a flat row-major `N x d` buffer.
    pub fn new(n: usize, d: usize, states: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "ensemble needs N >= 1 and d >= 1 (N = {n}, d = {d})"
            )));
        }
        crate::error::check_dim("ParticleEnsemble::new", n * d, states.len())?;
        let mut ens = ParticleEnsemble {
            n,
            d,
            states,
            t_index: 0,
            overflow: false,
        };
        ens.refresh_overflow();
        Ok(ens)
    }

    pub fn zeros(n: usize, d: usize) -> Result<Self> {
        Self::new(n, d, vec![0.0; n * d])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.d..(i + 1) * self.d]
    }

    pub fn overflowed(&self) -> bool {
        self.overflow
    }

    /// Replaces the state buffer (same shape) and recomputes the overflow flag.
    pub(crate) fn replace_states(&mut self, states: Vec<f64>) -> Vec<f64> {
        debug_assert_eq!(states.len(), self.states.len());
        let old = std::mem::replace(&mut self.states, states);
        self.refresh_overflow();
        old
    }

    fn refresh_overflow(&mut self) {
        self.overflow = self.states.iter().any(|v| !v.is_finite());
    }

    pub fn measure(&self) -> EmpiricalMeasure<'_> {
        EmpiricalMeasure::new(&self.states, self.d).expect("shape checked at construction")
    }

    /// `(1/N) sum_i |X^i|^p`, or the explosion sentinel once overflowed.
    pub fn empirical_moment(&self, p: f64) -> f64 {
        if self.overflow {
            return EXPLOSION_SENTINEL;
        }
        let m = self.measure().moment(p);
        if m.is_finite() {
            m
        } else {
            EXPLOSION_SENTINEL
        }
    }

    /// `W2(mu_N, delta_0)`.
    pub fn w2_to_origin(&self) -> f64 {
        self.empirical_moment(2.0).sqrt()
    }

    /// Largest coordinate magnitude (sentinel once overflowed).
    pub fn max_abs(&self) -> f64 {
        if self.overflow {
            return EXPLOSION_SENTINEL;
        }
        self.states.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Writes `# t=<time> N=<N> d=<d>` followed by one row per particle.
    pub fn snapshot_csv<W: Write>(&self, time: f64, sink: &mut W) -> Result<()> {
        writeln!(sink, "# t={time} N={} d={}", self.n, self.d)?;
        for row in self.states.chunks_exact(self.d) {
            let line: Vec<String> = row.iter().map(|v| format_coordinate(*v)).collect();
            writeln!(sink, "{}", line.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn format_coordinate(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ens(states: &[f64], d: usize) -> ParticleEnsemble {
        ParticleEnsemble::new(states.len() / d, d, states.to_vec()).unwrap()
    }

    #[test]
    fn moment_examples() {
        assert_eq!(ens(&[1.0, -1.0], 1).empirical_moment(2.0), 1.0);
        assert_eq!(ens(&[0.0, 0.0, 0.0], 1).empirical_moment(3.0), 0.0);
        assert_eq!(ens(&[3.0], 1).empirical_moment(4.0), 81.0);
    }

    #[test]
    fn w2_to_origin_examples() {
        assert_eq!(ens(&[0.0, 0.0], 1).w2_to_origin(), 0.0);
        assert_eq!(ens(&[3.0], 1).w2_to_origin(), 3.0);
        assert_eq!(ens(&[0.0, 4.0], 1).w2_to_origin(), 8f64.sqrt());
    }

    #[test]
    fn overflow_gives_sentinel() {
        let e = ens(&[1.0, f64::NAN], 1);
        assert!(e.overflowed());
        assert_eq!(e.empirical_moment(2.0), EXPLOSION_SENTINEL);
        assert_eq!(e.w2_to_origin(), EXPLOSION_SENTINEL);
        let mut out = Vec::new();
        ens(&[1.0, f64::INFINITY], 1).snapshot_csv(0.5, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "# t=0.5 N=2 d=1\n1.000000000000e0\ninf\n");
    }

    #[test]
    fn snapshot_rows_follow_particle_order() {
        let mut out = Vec::new();
        ens(&[1.0, 2.0, -3.5, 0.25], 2).snapshot_csv(1.0, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# t=1 N=2 d=2");
        assert_eq!(lines[1], "1.000000000000e0,2.000000000000e0");
        assert_eq!(lines[2], "-3.500000000000e0,2.500000000000e-1");
    }

    #[test]
    fn measure_rejects_ragged_buffer() {
        assert!(EmpiricalMeasure::new(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(ParticleEnsemble::new(2, 2, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn statistics_are_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 2), 1..40),
            seed in any::<u64>(),
        ) {
            let n = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let mut order: Vec<usize> = (0..n).collect();
            // deterministic shuffle
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let permuted: Vec<f64> = order.iter().flat_map(|&i| rows[i].clone()).collect();
            let a = ParticleEnsemble::new(n, 2, flat).unwrap();
            let b = ParticleEnsemble::new(n, 2, permuted).unwrap();
            for p in [1.0, 2.0, 3.5, 4.0] {
                prop_assert_eq!(a.empirical_moment(p).to_bits(), b.empirical_moment(p).to_bits());
            }
            prop_assert_eq!(a.w2_to_origin().to_bits(), b.w2_to_origin().to_bits());
            let (ma, mb) = (a.measure(), b.measure());
            for (x, y) in ma.mean().iter().zip(mb.mean()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
