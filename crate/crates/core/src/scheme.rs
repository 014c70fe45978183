//! Fully explicit (tamed) Euler stepping of the interacting particle system:
//!
//! ```text
//! X^i_{k+1} = X^i_k + ( b^n(t_k, X^i_k, mu_k) + 1/N sum_j f^n(X^i_k, X^j_k) ) h
//!                   + ( sigma^n(t_k, X^i_k, mu_k) + 1/N sum_j g^n(X^i_k, X^j_k) ) dW^i_k
//! ```
//!
//! The sums run over all `j`, the diagonal included, in ascending order. The
//! step is parallel over `i` only, so results do not depend on thread count.

use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{EmpiricalMeasure, ParticleEnsemble};
use crate::error::{check_dim, Error, Result};
use crate::model::CoefficientModel;
use crate::rng::{initial_stream, standard_normal, step_count, unit_uniform, BrownianTableau};
use crate::taming::{TamedModel, TamingVariant};
use crate::vecops::{norm, norm_sq, sub_into};

/// Uniform grid `t_k = k / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n: u64,
    pub total_steps: u64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("steps per unit time n must be >= 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("T must be positive, got {horizon}")));
        }
        let total_steps = step_count(n, horizon).ok_or_else(|| {
            Error::InvalidParameter(format!("T = {horizon} is not a multiple of h = 1/{n}"))
        })?;
        Ok(TimeGrid {
            horizon,
            n,
            total_steps,
        })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn time(&self, k: u64) -> f64 {
        k as f64 / self.n as f64
    }

    /// Grid step `floor(n t)`, the index of `k_n(t)`.
    pub fn floor_index(&self, t: f64) -> u64 {
        ((t * self.n as f64).floor().max(0.0) as u64).min(self.total_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    TamedEuler,
    PlainEuler,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::TamedEuler => "tamed_euler",
            SchemeKind::PlainEuler => "plain_euler",
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tamed_euler" => Ok(SchemeKind::TamedEuler),
            "plain_euler" => Ok(SchemeKind::PlainEuler),
            other => Err(Error::Unknown {
                kind: "scheme kind",
                name: other.to_string(),
            }),
        }
    }
}

/// How the `f` interaction sum is evaluated. Both give identical bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// Every ordered pair evaluated.
    Naive,
    /// `f^n(x_i, x_j)` evaluated once per unordered pair and negated for
    /// `(j, i)`; needs an antisymmetric kernel.
    AntisymmetricPairs,
}

impl InteractionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InteractionMode::Naive => "naive",
            InteractionMode::AntisymmetricPairs => "antisymmetric_pairs",
        }
    }
}

impl FromStr for InteractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(InteractionMode::Naive),
            "antisymmetric_pairs" => Ok(InteractionMode::AntisymmetricPairs),
            other => Err(Error::Unknown {
                kind: "interaction mode",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub taming: TamingVariant,
    pub interaction: InteractionMode,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            kind: SchemeKind::TamedEuler,
            taming: TamingVariant::Finite,
            interaction: InteractionMode::Naive,
        }
    }
}

/// Named initial laws with finite moments of every order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialLaw {
    Point { at: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: f64 },
    UniformBall { center: Vec<f64>, radius: f64 },
}

impl InitialLaw {
    fn location(&self) -> &[f64] {
        match self {
            InitialLaw::Point { at } => at,
            InitialLaw::Gaussian { mean, .. } => mean,
            InitialLaw::UniformBall { center, .. } => center,
        }
    }

    /// Draws `X_0^i` for `i < n`. Particle `i` always uses the same draws,
    /// whatever `n` and whatever the law, so laws sharing a seed are
    /// synchronously coupled.
    pub fn sample(&self, seed: u64, n: usize, d: usize) -> Result<ParticleEnsemble> {
        check_dim("InitialLaw::sample", d, self.location().len())?;
        match self {
            InitialLaw::Gaussian { std, .. } if !(*std >= 0.0 && std.is_finite()) => {
                return Err(Error::InvalidParameter(format!("initial std must be >= 0, got {std}")));
            }
            InitialLaw::UniformBall { radius, .. } if !(*radius >= 0.0 && radius.is_finite()) => {
                return Err(Error::InvalidParameter(format!(
                    "initial radius must be >= 0, got {radius}"
                )));
            }
            _ => {}
        }
        let mut states = Vec::with_capacity(n * d);
        let mut z = vec![0.0; d];
        for i in 0..n {
            let mut rng = initial_stream(seed, i as u64);
            for v in z.iter_mut() {
                let a = rng.next_u64();
                let b = rng.next_u64();
                *v = standard_normal(a, b);
            }
            let u = unit_uniform(rng.next_u64());
            match self {
                InitialLaw::Point { at } => states.extend_from_slice(at),
                InitialLaw::Gaussian { mean, std } => {
                    states.extend(mean.iter().zip(&z).map(|(m, zi)| m + std * zi));
                }
                InitialLaw::UniformBall { center, radius } => {
                    let len = norm(&z);
                    let r = radius * u.powf(1.0 / d as f64);
                    let s = if len > 0.0 { r / len } else { 0.0 };
                    states.extend(center.iter().zip(&z).map(|(c, zi)| c + s * zi));
                }
            }
        }
        ParticleEnsemble::new(n, d, states)
    }
}

/// Advances ensembles one grid step using a shared tableau.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    tm: TamedModel,
    grid: TimeGrid,
    tableau: &'a BrownianTableau,
    ratio: u64,
    interaction: InteractionMode,
}

struct Scratch {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    fsum: Vec<f64>,
    gsum: Vec<f64>,
    z: Vec<f64>,
    f: Vec<f64>,
    dw: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, l: usize) -> Self {
        Scratch {
            drift: vec![0.0; d],
            diffusion: vec![0.0; d * l],
            fsum: vec![0.0; d],
            gsum: vec![0.0; d * l],
            z: vec![0.0; d],
            f: vec![0.0; d],
            dw: vec![0.0; l],
        }
    }
}

impl<'a> Stepper<'a> {
    pub fn new(
        model: &CoefficientModel,
        grid: &TimeGrid,
        tableau: &'a BrownianTableau,
        scheme: &SchemeConfig,
    ) -> Result<Self> {
        let variant = match scheme.kind {
            SchemeKind::TamedEuler => scheme.taming,
            SchemeKind::PlainEuler => TamingVariant::Off,
        };
        if scheme.interaction == InteractionMode::AntisymmetricPairs && !model.f_antisymmetric {
            return Err(Error::InvalidParameter(
                "antisymmetric_pairs interaction needs an antisymmetric kernel f".into(),
            ));
        }
        check_dim("Stepper::new (noise dimension)", model.l, tableau.noise_dim())?;
        let ratio = tableau.level_ratio(grid.n)?;
        if grid.horizon > tableau.horizon() * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "grid horizon {} exceeds tableau horizon {}",
                grid.horizon,
                tableau.horizon()
            )));
        }
        Ok(Stepper {
            tm: TamedModel::new(model.clone(), grid.n, variant)?,
            grid: *grid,
            tableau,
            ratio,
            interaction: scheme.interaction,
        })
    }

    pub fn tamed_model(&self) -> &TamedModel {
        &self.tm
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// One step from `ens` at its `t_index`; `ens` itself is not modified.
    pub fn step(&self, ens: &ParticleEnsemble) -> Result<ParticleEnsemble> {
        let mut next = ens.clone();
        let mut buf = vec![0.0; ens.states().len()];
        self.step_into(ens, &mut buf)?;
        next.replace_states(buf);
        next.t_index = ens.t_index + 1;
        Ok(next)
    }

    /// Writes the next states of `ens` into `out`.
    pub(crate) fn step_into(&self, ens: &ParticleEnsemble, out: &mut [f64]) -> Result<()> {
        let m = &self.tm.base;
        check_dim("step (state dimension)", m.d, ens.dim())?;
        if ens.overflowed() {
            return Err(Error::InvalidParameter("cannot step an overflowed ensemble".into()));
        }
        if ens.len() > self.tableau.particles() {
            return Err(Error::InvalidParameter(format!(
                "ensemble has {} particles, tableau only {}",
                ens.len(),
                self.tableau.particles()
            )));
        }
        if ens.t_index >= self.grid.total_steps {
            return Err(Error::InvalidParameter(format!(
                "step {} is past the end of the grid ({} steps)",
                ens.t_index, self.grid.total_steps
            )));
        }
        let pairs = match self.interaction {
            InteractionMode::Naive => None,
            InteractionMode::AntisymmetricPairs => Some(self.pair_table(ens)),
        };
        self.advance(ens, pairs.as_deref(), out);
        Ok(())
    }

    /// Upper-triangle table of `f^n(x_i, x_j)`, `i < j`, row by row.
    fn pair_table(&self, ens: &ParticleEnsemble) -> Vec<f64> {
        let n = ens.len();
        let d = ens.dim();
        let mut table = vec![0.0; n * (n - 1) / 2 * d];
        let mut rows: Vec<&mut [f64]> = Vec::with_capacity(n);
        let mut rest = table.as_mut_slice();
        for i in 0..n {
            let (row, tail) = rest.split_at_mut((n - 1 - i) * d);
            rows.push(row);
            rest = tail;
        }
        rows.into_par_iter().enumerate().for_each(|(i, row)| {
            let x = ens.particle(i);
            for (slot, j) in row.chunks_exact_mut(d).zip(i + 1..n) {
                sub_into(x, ens.particle(j), slot);
                let nsq = norm_sq(slot);
                self.tm.base.kernel_f_from_diff(nsq, slot);
                let den = self.tm.denominator(nsq);
                if den != 1.0 {
                    slot.iter_mut().for_each(|v| *v /= den);
                }
            }
        });
        table
    }

    fn advance(&self, ens: &ParticleEnsemble, pairs: Option<&[f64]>, out: &mut [f64]) {
        let m = &self.tm.base;
        let (n, d, l) = (ens.len(), m.d, m.l);
        let nf = n as f64;
        let h = self.grid.h();
        let k = ens.t_index;
        let t = self.grid.time(k);
        let mu: EmpiricalMeasure<'_> = ens.measure();
        mu.mean();
        let g_zero = m.kernel_g_is_zero();
        let row_start = |i: usize| i * (2 * n - i - 1) / 2;

        out.par_chunks_mut(d)
            .enumerate()
            .for_each_init(
                || Scratch::new(d, l),
                |s, (i, xi_next)| {
                    let x = ens.particle(i);
                    self.tm.drift_into(t, x, &mu, &mut s.drift);
                    self.tm.sigma_into(t, x, &mu, &mut s.diffusion);
                    s.fsum.iter_mut().for_each(|v| *v = 0.0);
                    s.gsum.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..n {
                        sub_into(x, ens.particle(j), &mut s.z);
                        let nsq = norm_sq(&s.z);
                        let den = self.tm.denominator(nsq);
                        match pairs {
                            Some(table) if j != i => {
                                if j > i {
                                    let off = (row_start(i) + (j - i - 1)) * d;
                                    for (acc, v) in s.fsum.iter_mut().zip(&table[off..off + d]) {
                                        *acc += v;
                                    }
                                } else {
                                    let off = (row_start(j) + (i - j - 1)) * d;
                                    for (acc, v) in s.fsum.iter_mut().zip(&table[off..off + d]) {
                                        *acc += -v;
                                    }
                                }
                            }
                            _ => {
                                s.f.copy_from_slice(&s.z);
                                m.kernel_f_from_diff(nsq, &mut s.f);
                                for (acc, v) in s.fsum.iter_mut().zip(&s.f) {
                                    *acc += if den != 1.0 { v / den } else { *v };
                                }
                            }
                        }
                        if !g_zero {
                            m.kernel_g_add_from_diff(&s.z, den, &mut s.gsum);
                        }
                    }
                    self.tableau.increment_into(self.ratio, i, k, &mut s.dw);
                    for a in 0..d {
                        let drift = s.drift[a] + s.fsum[a] / nf;
                        let mut noise = 0.0;
                        for c in 0..l {
                            let coeff = s.diffusion[a * l + c] + s.gsum[a * l + c] / nf;
                            noise += coeff * s.dw[c];
                        }
                        xi_next[a] = x[a] + drift * h + noise;
                    }
                },
            );
    }
}

/// One step of `ens` (convenience wrapper over [`Stepper`]).
pub fn step(
    ens: &ParticleEnsemble,
    model: &CoefficientModel,
    grid: &TimeGrid,
    tableau: &BrownianTableau,
    scheme: &SchemeConfig,
) -> Result<ParticleEnsemble> {
    Stepper::new(model, grid, tableau, scheme)?.step(ens)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Observer stride in steps; the final step is always observed.
    pub stride: u64,
    /// Treat `max |X| > threshold` as divergence.
    pub explosion_threshold: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stride: 1,
            explosion_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    /// Last ensemble reached (the diverged one if the run diverged).
    pub ensemble: ParticleEnsemble,
    pub diverged_at: Option<u64>,
}

impl SimOutcome {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Runs `initial` over the whole grid, calling `observer(ensemble, k, t_k)`
/// at `k = 0`, every `stride` steps, at the last step and at divergence.
pub fn simulate(
    model: &CoefficientModel,
    grid: &TimeGrid,
    tableau: &BrownianTableau,
    scheme: &SchemeConfig,
    initial: ParticleEnsemble,
    options: &RunOptions,
    observer: &mut dyn FnMut(&ParticleEnsemble, u64, f64),
) -> Result<SimOutcome> {
    let stepper = Stepper::new(model, grid, tableau, scheme)?;
    run_with(&stepper, initial, options, observer)
}

pub(crate) fn run_with(
    stepper: &Stepper<'_>,
    mut ens: ParticleEnsemble,
    options: &RunOptions,
    observer: &mut dyn FnMut(&ParticleEnsemble, u64, f64),
) -> Result<SimOutcome> {
    if options.stride == 0 {
        return Err(Error::InvalidParameter("observer stride must be >= 1".into()));
    }
    let grid = *stepper.grid();
    ens.t_index = 0;
    observer(&ens, 0, 0.0);
    if is_diverged(&ens, options) {
        return Ok(SimOutcome {
            ensemble: ens,
            diverged_at: Some(0),
        });
    }
    let mut buf = vec![0.0; ens.states().len()];
    for k in 0..grid.total_steps {
        stepper.step_into(&ens, &mut buf)?;
        buf = ens.replace_states(buf);
        ens.t_index = k + 1;
        let diverged = is_diverged(&ens, options);
        if diverged || (k + 1) % options.stride == 0 || k + 1 == grid.total_steps {
            observer(&ens, k + 1, grid.time(k + 1));
        }
        if diverged {
            return Ok(SimOutcome {
                ensemble: ens,
                diverged_at: Some(k + 1),
            });
        }
    }
    Ok(SimOutcome {
        ensemble: ens,
        diverged_at: None,
    })
}

fn is_diverged(ens: &ParticleEnsemble, options: &RunOptions) -> bool {
    ens.overflowed() || options.explosion_threshold.is_some_and(|thr| ens.max_abs() > thr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FamilyId, ModelParams};
    use crate::rng::make_tableau;

    fn model_with(family: FamilyId, d: usize, params: ModelParams) -> CoefficientModel {
        let mut m = CoefficientModel::new(family, d, d).unwrap();
        m.params = params;
        m
    }

    fn tamed_euler() -> SchemeConfig {
        SchemeConfig::default()
    }

    fn plain() -> SchemeConfig {
        SchemeConfig {
            kind: SchemeKind::PlainEuler,
            ..SchemeConfig::default()
        }
    }

    /// Tableau whose increments are irrelevant because `sigma = g = 0`.
    fn quiet_tableau(n: usize, horizon: f64, n_max: u64) -> BrownianTableau {
        make_tableau(0, n, 1, horizon, n_max).unwrap()
    }

    #[test]
    fn grid_rejects_fractional_step_count() {
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.3, 4).is_err());
        let g = TimeGrid::new(2.5, 4).unwrap();
        assert_eq!(g.total_steps, 10);
        assert_eq!(g.floor_index(0.6), 2);
    }

    #[test]
    fn tamed_single_particle_step() {
        let m = model_with(
            FamilyId::CubicMeanField,
            1,
            ModelParams {
                cubic_drift: 1.0,
                kernel_cubic: 1.0,
                ..ModelParams::ZERO
            },
        )
        .with_q(1.0)
        .unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let tab = quiet_tableau(1, 1.0, 4);
        let ens = ParticleEnsemble::new(1, 1, vec![1.0]).unwrap();
        let next = step(&ens, &m, &grid, &tab, &tamed_euler()).unwrap();
        assert!((next.states()[0] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn two_particle_interaction_step() {
        let m = model_with(
            FamilyId::CubicMeanField,
            1,
            ModelParams {
                kernel_cubic: 1.0,
                ..ModelParams::ZERO
            },
        );
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let tab = quiet_tableau(2, 1.0, 1);
        let ens = ParticleEnsemble::new(2, 1, vec![1.0, -1.0]).unwrap();
        let next = step(&ens, &m, &grid, &tab, &plain()).unwrap();
        assert_eq!(next.states(), &[-3.0, 3.0]);
    }

    #[test]
    fn plain_euler_blows_up_from_three() {
        let m = model_with(
            FamilyId::CubicMeanField,
            1,
            ModelParams {
                cubic_drift: 1.0,
                ..ModelParams::ZERO
            },
        );
        let grid = TimeGrid::new(10.0, 2).unwrap();
        let tab = quiet_tableau(1, 10.0, 2);
        let mut iterates = Vec::new();
        let out = simulate(
            &m,
            &grid,
            &tab,
            &plain(),
            ParticleEnsemble::new(1, 1, vec![3.0]).unwrap(),
            &RunOptions {
                stride: 1,
                explosion_threshold: Some(1e10),
            },
            &mut |e, _, _| iterates.push(e.states()[0]),
        )
        .unwrap();
        assert_eq!(iterates[1], -10.5);
        assert_eq!(iterates[2], 568.3125);
        assert!(out.diverged_at.unwrap() <= 10);
    }

    #[test]
    fn zero_model_keeps_initial_state() {
        let m = model_with(FamilyId::CubicMeanField, 2, ModelParams::ZERO);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let tab = make_tableau(3, 5, 2, 1.0, 8).unwrap();
        let init = InitialLaw::Gaussian {
            mean: vec![1.0, -2.0],
            std: 1.5,
        }
        .sample(11, 5, 2)
        .unwrap();
        let out = simulate(&m, &grid, &tab, &tamed_euler(), init.clone(), &RunOptions::default(), &mut |_, _, _| {})
            .unwrap();
        assert_eq!(out.ensemble.states(), init.states());
    }

    #[test]
    fn linear_decay_matches_euler_product() {
        let m = model_with(
            FamilyId::LipschitzBaseline,
            1,
            ModelParams {
                linear_drift: 1.0,
                ..ModelParams::ZERO
            },
        );
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let tab = quiet_tableau(1, 1.0, 100);
        let scheme = SchemeConfig {
            taming: TamingVariant::Off,
            ..SchemeConfig::default()
        };
        let out = simulate(
            &m,
            &grid,
            &tab,
            &scheme,
            ParticleEnsemble::new(1, 1, vec![1.0]).unwrap(),
            &RunOptions::default(),
            &mut |_, _, _| {},
        )
        .unwrap();
        let expected = 0.99f64.powi(100);
        assert!((out.ensemble.states()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.366_032_341_273_229_3).abs() < 1e-15);
    }

    #[test]
    fn cubic_mean_field_stays_finite_across_seeds() {
        let m = CoefficientModel::new(FamilyId::CubicMeanField, 1, 1).unwrap();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        for seed in 0..32 {
            let tab = make_tableau(seed, 64, 1, 1.0, 32).unwrap();
            let init = InitialLaw::Gaussian {
                mean: vec![0.0],
                std: 1.0,
            }
            .sample(seed, 64, 1)
            .unwrap();
            let out = simulate(&m, &grid, &tab, &tamed_euler(), init, &RunOptions::default(), &mut |_, _, _| {})
                .unwrap();
            assert!(!out.diverged());
            assert!(!out.ensemble.overflowed());
        }
    }

    #[test]
    fn center_of_mass_is_conserved() {
        let m = model_with(
            FamilyId::CubicMeanField,
            2,
            ModelParams {
                kernel_linear: 0.3,
                kernel_cubic: 1.0,
                ..ModelParams::ZERO
            },
        );
        let grid = TimeGrid::new(10.0, 100).unwrap();
        let tab = make_tableau(1, 16, 2, 10.0, 100).unwrap();
        let init = InitialLaw::UniformBall {
            center: vec![0.5, -0.25],
            radius: 2.0,
        }
        .sample(5, 16, 2)
        .unwrap();
        let com = |e: &ParticleEnsemble| -> Vec<f64> { e.measure().mean().to_vec() };
        let start = com(&init);
        let mut worst: f64 = 0.0;
        simulate(&m, &grid, &tab, &tamed_euler(), init, &RunOptions::default(), &mut |e, _, _| {
            for (a, b) in com(e).iter().zip(&start) {
                worst = worst.max((a - b).abs() / b.abs());
            }
        })
        .unwrap();
        assert!(worst < 1e-10, "relative drift {worst}");
    }

    #[test]
    fn step_is_a_pure_function_of_its_input() {
        let m = CoefficientModel::new(FamilyId::PairwiseVlasov, 2, 2).unwrap();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let tab = make_tableau(8, 10, 2, 1.0, 16).unwrap();
        let init = InitialLaw::Gaussian {
            mean: vec![0.0, 0.0],
            std: 1.0,
        }
        .sample(3, 10, 2)
        .unwrap();
        let a = step(&init, &m, &grid, &tab, &tamed_euler()).unwrap();
        let b = step(&init, &m, &grid, &tab, &tamed_euler()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.t_index, 1);
    }

    #[test]
    fn pair_table_matches_naive_loop_bitwise() {
        for family in [FamilyId::CubicMeanField, FamilyId::ErgodicDissipative, FamilyId::PairwiseVlasov] {
            let m = CoefficientModel::new(family, 3, 3).unwrap();
            let grid = TimeGrid::new(1.0, 32).unwrap();
            let tab = make_tableau(21, 16, 3, 1.0, 32).unwrap();
            let init = InitialLaw::Gaussian {
                mean: vec![0.0; 3],
                std: 2.0,
            }
            .sample(4, 16, 3)
            .unwrap();
            let run = |interaction| {
                let scheme = SchemeConfig {
                    interaction,
                    ..SchemeConfig::default()
                };
                simulate(&m, &grid, &tab, &scheme, init.clone(), &RunOptions::default(), &mut |_, _, _| {})
                    .unwrap()
                    .ensemble
            };
            let naive = run(InteractionMode::Naive);
            let pairs = run(InteractionMode::AntisymmetricPairs);
            let bits = |e: &ParticleEnsemble| e.states().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&naive), bits(&pairs), "{family}");
        }
    }

    #[test]
    fn one_step_displacement_is_bounded() {
        let m = CoefficientModel::new(FamilyId::CubicMeanField, 2, 2).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let tab = make_tableau(2, 12, 2, 1.0, 4).unwrap();
        let ens = InitialLaw::Gaussian {
            mean: vec![0.0; 2],
            std: 3.0,
        }
        .sample(9, 12, 2)
        .unwrap();
        let stepper = Stepper::new(&m, &grid, &tab, &tamed_euler()).unwrap();
        let next = stepper.step(&ens).unwrap();
        let tm = stepper.tamed_model();
        let mu = ens.measure();
        let h = grid.h();
        for i in 0..ens.len() {
            let x = ens.particle(i);
            let b = norm(&tm.tamed_drift_b(0.0, x, &mu).unwrap());
            let s = norm(&tm.tamed_sigma(0.0, x, &mu).unwrap());
            let (mut fmax, mut gmax) = (0.0f64, 0.0f64);
            for j in 0..ens.len() {
                let y = ens.particle(j);
                fmax = fmax.max(norm(&tm.tamed_kernel_f(x, y).unwrap()));
                gmax = gmax.max(norm(&tm.tamed_kernel_g(x, y).unwrap()));
            }
            let dw = norm(&tab.increments_at_level(4, i, 0).unwrap());
            let moved = norm(&crate::vecops::sub(next.particle(i), x));
            let bound = h * (b + fmax) + dw * (s + gmax);
            assert!(moved <= bound * (1.0 + 1e-12), "particle {i}: {moved} > {bound}");
        }
    }

    #[test]
    fn identical_seeds_couple_initial_laws() {
        let a = InitialLaw::Gaussian {
            mean: vec![0.0],
            std: 1.0,
        }
        .sample(3, 8, 1)
        .unwrap();
        let b = InitialLaw::Gaussian {
            mean: vec![5.0],
            std: 1.0,
        }
        .sample(3, 8, 1)
        .unwrap();
        for (x, y) in a.states().iter().zip(b.states()) {
            assert_eq!(x + 5.0, *y);
        }
        let small = InitialLaw::Gaussian {
            mean: vec![0.0],
            std: 1.0,
        }
        .sample(3, 4, 1)
        .unwrap();
        assert_eq!(small.states(), &a.states()[..4]);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let m = CoefficientModel::new(FamilyId::CubicMeanField, 1, 1).unwrap();
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let tab = make_tableau(1, 2, 1, 1.0, 8).unwrap();
        assert!(matches!(
            Stepper::new(&m, &grid, &tab, &tamed_euler()),
            Err(Error::NonDividingLevel { .. })
        ));
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let big = ParticleEnsemble::zeros(3, 1).unwrap();
        assert!(step(&big, &m, &grid, &tab, &tamed_euler()).is_err());
        let bad = ParticleEnsemble::new(1, 1, vec![f64::NAN]).unwrap();
        assert!(step(&bad, &m, &grid, &tab, &tamed_euler()).is_err());
    }
}
