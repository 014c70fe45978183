//! Reproducible Brownian increments with exact dyadic refinement.
//!
//! Every scalar finest-level increment is addressed by `(seed, particle,
//! component, step)`: the ChaCha12 stream id is `particle * l + component`
//! and step `k` reads the two 64-bit words at word position `4k`, which are
//! turned into a standard normal by Box–Muller. No increment depends on
//! sequential generator state, so results do not depend on thread count or
//! query order.
//!
//! Finest increments are quantized to integer multiples of [`QUANTUM`]
//! (2^-40) and coarse increments are integer sums of them. Any sum of fine
//! increments is therefore exact in `f64`, which makes refinement and
//! telescoping hold bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Resolution of stored increments.
pub const QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// Recorded in reports so reruns can check they use the same generator.
pub const RNG_METHOD: &str =
    "chacha12(stream = particle*l + component, word_pos = 4*step) + box-muller(cos); increments quantized to 2^-40";

/// Stream ids with the top bit set are reserved for initial-law draws.
const INITIAL_STREAM_BIT: u64 = 1 << 63;

/// Standard normal from two uniform 64-bit words (Box–Muller, cosine branch).
#[inline]
pub fn standard_normal(a: u64, b: u64) -> f64 {
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform `[0, 1)` from one 64-bit word.
#[inline]
pub fn unit_uniform(a: u64) -> f64 {
    (a >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Generator for the initial value of `particle`. Independent of the system
/// size, so the first `N` initial values agree across sizes.
pub fn initial_stream(seed: u64, particle: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(INITIAL_STREAM_BIT | particle);
    rng
}

fn quantize(x: f64) -> i64 {
    (x / QUANTUM).round() as i64
}

/// Storage and memory limits for a tableau.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableauPolicy {
    pub memory_cap_bytes: u64,
    /// Above the cap, compute increments on demand instead of failing.
    pub allow_regeneration: bool,
}

impl Default for TableauPolicy {
    fn default() -> Self {
        TableauPolicy {
            memory_cap_bytes: 1 << 30,
            allow_regeneration: false,
        }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    Stored(Vec<i64>),
    OnDemand,
}

/// Finest-level Brownian increments for `N` particles with `l` components
/// over `[0, T]`, `n_max` steps per unit time.
#[derive(Debug, Clone)]
pub struct BrownianTableau {
    seed: u64,
    particles: usize,
    l: usize,
    horizon: f64,
    n_max: u64,
    fine_steps: u64,
    sqrt_h: f64,
    storage: Storage,
}

/// `n * T` as an integer step count, if it is one.
pub(crate) fn step_count(n: u64, horizon: f64) -> Option<u64> {
    let steps = n as f64 * horizon;
    let rounded = steps.round();
    if rounded >= 1.0 && (steps - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        Some(rounded as u64)
    } else {
        None
    }
}

/// Builds a tableau with the default policy.
pub fn make_tableau(seed: u64, particles: usize, l: usize, horizon: f64, n_max: u64) -> Result<BrownianTableau> {
    BrownianTableau::new(seed, particles, l, horizon, n_max, TableauPolicy::default())
}

impl BrownianTableau {
    pub fn new(
        seed: u64,
        particles: usize,
        l: usize,
        horizon: f64,
        n_max: u64,
        policy: TableauPolicy,
    ) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be >= 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("T must be positive, got {horizon}")));
        }
        if particles == 0 || l == 0 {
            return Err(Error::InvalidParameter(format!(
                "tableau needs N >= 1 and l >= 1 (N = {particles}, l = {l})"
            )));
        }
        let fine_steps = step_count(n_max, horizon).ok_or_else(|| {
            Error::InvalidParameter(format!("n_max * T = {n_max} * {horizon} is not a positive integer"))
        })?;
        let mut tab = BrownianTableau {
            seed,
            particles,
            l,
            horizon,
            n_max,
            fine_steps,
            sqrt_h: (1.0 / n_max as f64).sqrt(),
            storage: Storage::OnDemand,
        };
        let cells = (particles as u128) * (l as u128) * (fine_steps as u128);
        let bytes = cells * std::mem::size_of::<i64>() as u128;
        if bytes > policy.memory_cap_bytes as u128 {
            if policy.allow_regeneration {
                return Ok(tab);
            }
            return Err(Error::ResourceBound(format!(
                "tableau needs {bytes} bytes ({particles} x {l} x {fine_steps} increments), cap is {} bytes",
                policy.memory_cap_bytes
            )));
        }
        let per_stream = fine_steps as usize;
        let mut data = vec![0i64; cells as usize];
        for (stream, chunk) in data.chunks_exact_mut(per_stream).enumerate() {
            let mut rng = tab.stream(stream as u64);
            for v in chunk.iter_mut() {
                let a = rng.next_u64();
                let b = rng.next_u64();
                *v = quantize(tab.sqrt_h * standard_normal(a, b));
            }
        }
        tab.storage = Storage::Stored(data);
        Ok(tab)
    }

    fn stream(&self, id: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn noise_dim(&self) -> usize {
        self.l
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    pub fn fine_steps(&self) -> u64 {
        self.fine_steps
    }

    pub fn is_stored(&self) -> bool {
        matches!(self.storage, Storage::Stored(_))
    }

    /// Quantized finest increment, in units of [`QUANTUM`].
    #[inline]
    fn fine_units(&self, particle: usize, component: usize, step: u64) -> i64 {
        let stream = (particle * self.l + component) as u64;
        match &self.storage {
            Storage::Stored(data) => data[stream as usize * self.fine_steps as usize + step as usize],
            Storage::OnDemand => {
                let mut rng = self.stream(stream);
                rng.set_word_pos(4 * step as u128);
                let a = rng.next_u64();
                let b = rng.next_u64();
                quantize(self.sqrt_h * standard_normal(a, b))
            }
        }
    }

    /// Checks that `level` divides `n_max` and returns the aggregation ratio.
    pub fn level_ratio(&self, level: u64) -> Result<u64> {
        if level == 0 || !self.n_max.is_multiple_of(level) {
            return Err(Error::NonDividingLevel {
                level,
                n_max: self.n_max,
            });
        }
        Ok(self.n_max / level)
    }

    /// Number of steps at `level`.
    pub fn steps_at_level(&self, level: u64) -> Result<u64> {
        Ok(self.fine_steps / self.level_ratio(level)?)
    }

    /// The `l` components of particle `i`'s increment over step `k` at `level`.
    pub fn increments_at_level(&self, level: u64, particle: usize, step: u64) -> Result<Vec<f64>> {
        let ratio = self.level_ratio(level)?;
        if particle >= self.particles {
            return Err(Error::InvalidParameter(format!(
                "particle {particle} out of range (N = {})",
                self.particles
            )));
        }
        let steps = self.fine_steps / ratio;
        if step >= steps {
            return Err(Error::InvalidParameter(format!(
                "step {step} out of range ({steps} steps at level {level})"
            )));
        }
        let mut out = vec![0.0; self.l];
        self.increment_into(ratio, particle, step, &mut out);
        Ok(out)
    }

    /// Unchecked hot-path variant of [`Self::increments_at_level`] taking the
    /// aggregation ratio `n_max / level`.
    #[inline]
    pub(crate) fn increment_into(&self, ratio: u64, particle: usize, step: u64, out: &mut [f64]) {
        let start = step * ratio;
        for (c, o) in out.iter_mut().enumerate() {
            let units: i64 = match &self.storage {
                Storage::Stored(data) => {
                    let base = (particle * self.l + c) * self.fine_steps as usize + start as usize;
                    data[base..base + ratio as usize].iter().sum()
                }
                Storage::OnDemand => (start..start + ratio).map(|m| self.fine_units(particle, c, m)).sum(),
            };
            *o = units as f64 * QUANTUM;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_fine_increments_sum_to_coarse() {
        let tab = make_tableau(1, 1, 1, 1.0, 2).unwrap();
        let a = tab.increments_at_level(2, 0, 0).unwrap()[0];
        let b = tab.increments_at_level(2, 0, 1).unwrap()[0];
        let c = tab.increments_at_level(1, 0, 0).unwrap()[0];
        assert_eq!(a + b, c);
    }

    #[test]
    fn same_seed_same_tableau() {
        let a = make_tableau(9, 3, 2, 1.0, 16).unwrap();
        let b = make_tableau(9, 3, 2, 1.0, 16).unwrap();
        for i in 0..3 {
            for k in 0..16 {
                assert_eq!(
                    a.increments_at_level(16, i, k).unwrap(),
                    b.increments_at_level(16, i, k).unwrap()
                );
            }
        }
        let c = make_tableau(10, 3, 2, 1.0, 16).unwrap();
        assert_ne!(
            a.increments_at_level(16, 0, 0).unwrap(),
            c.increments_at_level(16, 0, 0).unwrap()
        );
    }

    #[test]
    fn on_demand_matches_stored() {
        let stored = make_tableau(5, 4, 2, 2.0, 8).unwrap();
        let policy = TableauPolicy {
            memory_cap_bytes: 0,
            allow_regeneration: true,
        };
        let lazy = BrownianTableau::new(5, 4, 2, 2.0, 8, policy).unwrap();
        assert!(stored.is_stored() && !lazy.is_stored());
        for level in [1, 2, 4, 8] {
            for i in 0..4 {
                for k in 0..stored.steps_at_level(level).unwrap() {
                    assert_eq!(
                        stored.increments_at_level(level, i, k).unwrap(),
                        lazy.increments_at_level(level, i, k).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn memory_cap_without_regeneration_fails() {
        let policy = TableauPolicy {
            memory_cap_bytes: 64,
            allow_regeneration: false,
        };
        assert!(matches!(
            BrownianTableau::new(1, 100, 1, 1.0, 64, policy),
            Err(Error::ResourceBound(_))
        ));
    }

    #[test]
    fn non_dividing_level_rejected() {
        let tab = make_tableau(1, 1, 1, 1.0, 12).unwrap();
        assert!(matches!(
            tab.increments_at_level(5, 0, 0),
            Err(Error::NonDividingLevel { level: 5, n_max: 12 })
        ));
        assert!(tab.increments_at_level(3, 0, 2).is_ok());
        assert!(tab.increments_at_level(3, 0, 3).is_err());
    }

    #[test]
    fn telescoping_total_is_level_independent() {
        let tab = make_tableau(3, 2, 1, 1.0, 64).unwrap();
        for i in 0..2 {
            let total = |level: u64| -> f64 {
                (0..level)
                    .map(|k| tab.increments_at_level(level, i, k).unwrap()[0])
                    .fold(0.0, |acc, v| acc + v)
            };
            let reference = total(64);
            for level in [1, 2, 4, 8, 16, 32] {
                assert_eq!(total(level).to_bits(), reference.to_bits());
            }
        }
    }

    #[test]
    fn finest_variance_matches_step() {
        // 10^6 increments at h = 1/256: 1000 particles x 1 x 1000 steps (T = 1000/256)
        let tab = make_tableau(2024, 1000, 1, 1000.0 / 256.0, 256).unwrap();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0.0;
        for i in 0..1000 {
            for k in 0..1000 {
                let v = tab.increments_at_level(256, i, k).unwrap()[0];
                sum += v;
                sum_sq += v * v;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = sum_sq / count - mean * mean;
        let h = 1.0 / 256.0;
        assert!((var - h).abs() < 0.05 * h, "variance {var} vs {h}");
    }

    #[test]
    fn particle_streams_are_uncorrelated() {
        let tab = make_tableau(77, 2, 1, 1.0, 100_000).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|k| tab.increments_at_level(100_000, 0, k).unwrap()[0]).collect();
        let ys: Vec<f64> = (0..100_000).map(|k| tab.increments_at_level(100_000, 1, k).unwrap()[0]).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n;
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n;
        assert!((cov / (vx * vy).sqrt()).abs() < 0.01);
    }

    #[test]
    fn initial_streams_do_not_depend_on_system_size() {
        let mut a = initial_stream(4, 7);
        let mut b = initial_stream(4, 7);
        assert_eq!(a.next_u64(), b.next_u64());
        let mut c = initial_stream(4, 8);
        assert_ne!(initial_stream(4, 7).next_u64(), c.next_u64());
    }

    #[test]
    fn box_muller_is_finite_at_extremes() {
        assert!(standard_normal(0, 0).is_finite());
        assert!(standard_normal(u64::MAX, u64::MAX).is_finite());
        assert_eq!(standard_normal(u64::MAX, 0), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn every_level_is_an_exact_sum_of_the_finest(
            seed in proptest::prelude::any::<u64>(),
            particle in 0usize..4,
            log_n_max in 0u32..8,
            log_level in 0u32..8,
            horizon in 1u32..4,
        ) {
            let n_max = 1u64 << log_n_max;
            let level = 1u64 << log_level.min(log_n_max);
            let tab = make_tableau(seed, 4, 2, f64::from(horizon), n_max).unwrap();
            let ratio = n_max / level;
            let steps = tab.steps_at_level(level).unwrap();
            for k in 0..steps {
                let coarse = tab.increments_at_level(level, particle, k).unwrap();
                let mut sum = vec![0.0; 2];
                for j in k * ratio..(k + 1) * ratio {
                    let fine = tab.increments_at_level(n_max, particle, j).unwrap();
                    sum[0] += fine[0];
                    sum[1] += fine[1];
                }
                proptest::prop_assert_eq!(coarse, sum);
            }
        }
    }
}
