//! Fast invariant checks run by `mvsde selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{EmpiricalMeasure, ParticleEnsemble};
use crate::metrics::{w2, W2Method};
use crate::model::{CoefficientModel, FamilyId};
use crate::rng::make_tableau;
use crate::scheme::{simulate, RunOptions, SchemeConfig, TimeGrid};
use crate::taming::{TamedModel, TamingVariant};
use crate::vecops::norm;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        check("taming_dominance", taming_dominance),
        check("kernel_antisymmetry", kernel_antisymmetry),
        check("w2_assignment_vs_brute_force", assignment_vs_brute_force),
        check("w2_sorted_vs_assignment", sorted_vs_assignment),
        check("refinement_coupling", refinement_coupling),
        check("zero_model_stays_put", zero_model),
    ]
}

fn check(name: &'static str, f: fn() -> Result<(), String>) -> CheckResult {
    match f() {
        Ok(()) => CheckResult {
            name,
            passed: true,
            detail: String::new(),
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-r..r)).collect()
}

fn taming_dominance() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for family in FamilyId::ALL {
        let m = CoefficientModel::new(family, 2, 2).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            let x = point(&mut rng, 2, 6.0);
            let atoms = point(&mut rng, 8, 6.0);
            let mu = EmpiricalMeasure::new(&atoms, 2).map_err(|e| e.to_string())?;
            let b = m.eval_drift_b(0.0, &x, &mu).map_err(|e| e.to_string())?;
            let mut last = 0.0;
            for n in [1, 4, 16, 256] {
                let tm = TamedModel::new(m.clone(), n, TamingVariant::Finite).map_err(|e| e.to_string())?;
                let bn = norm(&tm.tamed_drift_b(0.0, &x, &mu).map_err(|e| e.to_string())?);
                if bn > norm(&b) {
                    return Err(format!("{family}: |b^n| > |b| at x = {x:?}, n = {n}"));
                }
                if bn < last {
                    return Err(format!("{family}: |b^n| decreased in n at x = {x:?}"));
                }
                last = bn;
            }
        }
    }
    Ok(())
}

fn kernel_antisymmetry() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for family in FamilyId::ALL {
        let m = CoefficientModel::new(family, 3, 3).map_err(|e| e.to_string())?;
        let tm = TamedModel::new(m, 16, TamingVariant::Finite).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            let (x, y) = (point(&mut rng, 3, 5.0), point(&mut rng, 3, 5.0));
            let f = tm.tamed_kernel_f(&x, &y).map_err(|e| e.to_string())?;
            let back = tm.tamed_kernel_f(&y, &x).map_err(|e| e.to_string())?;
            if f.iter().zip(&back).any(|(a, b)| a.to_bits() != (-b).to_bits()) {
                return Err(format!("{family}: f^n(x, y) != -f^n(y, x) at x = {x:?}, y = {y:?}"));
            }
        }
    }
    Ok(())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..=p.len() {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

fn assignment_vs_brute_force() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(1..=7);
        let d = rng.random_range(1..=3);
        let a = point(&mut rng, n * d, 3.0);
        let b = point(&mut rng, n * d, 3.0);
        let (ma, mb) = (
            EmpiricalMeasure::new(&a, d).map_err(|e| e.to_string())?,
            EmpiricalMeasure::new(&b, d).map_err(|e| e.to_string())?,
        );
        let brute = permutations(n)
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &j)| ma.atom(i).iter().zip(mb.atom(j)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let exact = w2(&ma, &mb, W2Method::ExactAssignment { cap: 512 }).map_err(|e| e.to_string())?;
        let brute = (brute / n as f64).sqrt();
        if (exact - brute).abs() > 1e-10 {
            return Err(format!("N = {n}, d = {d}: assignment {exact} vs brute force {brute}"));
        }
    }
    Ok(())
}

fn sorted_vs_assignment() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(1..=64);
        let a = point(&mut rng, n, 4.0);
        let b = point(&mut rng, n, 4.0);
        let (ma, mb) = (
            EmpiricalMeasure::new(&a, 1).map_err(|e| e.to_string())?,
            EmpiricalMeasure::new(&b, 1).map_err(|e| e.to_string())?,
        );
        let s = w2(&ma, &mb, W2Method::Sorted1d).map_err(|e| e.to_string())?;
        let e = w2(&ma, &mb, W2Method::ExactAssignment { cap: 512 }).map_err(|e| e.to_string())?;
        if (s - e).abs() > 1e-10 {
            return Err(format!("N = {n}: sorted {s} vs assignment {e}"));
        }
    }
    Ok(())
}

fn refinement_coupling() -> Result<(), String> {
    let tab = make_tableau(5, 3, 2, 1.0, 64).map_err(|e| e.to_string())?;
    for level in [1u64, 2, 4, 8, 16, 32] {
        let ratio = 64 / level;
        for i in 0..3 {
            let mut total = vec![0.0; 2];
            for k in 0..level {
                let coarse = tab.increments_at_level(level, i, k).map_err(|e| e.to_string())?;
                let mut sum = vec![0.0; 2];
                for j in k * ratio..(k + 1) * ratio {
                    let fine = tab.increments_at_level(64, i, j).map_err(|e| e.to_string())?;
                    sum.iter_mut().zip(&fine).for_each(|(s, f)| *s += f);
                }
                if coarse != sum {
                    return Err(format!("level {level}, particle {i}, step {k}: {coarse:?} != {sum:?}"));
                }
                total.iter_mut().zip(&coarse).for_each(|(t, c)| *t += c);
            }
            let w_t: Vec<f64> = (0..64)
                .map(|j| tab.increments_at_level(64, i, j).unwrap())
                .fold(vec![0.0; 2], |mut acc, inc| {
                    acc.iter_mut().zip(&inc).for_each(|(a, v)| *a += v);
                    acc
                });
            if total != w_t {
                return Err(format!("level {level}, particle {i}: W_T differs from the finest level"));
            }
        }
    }
    Ok(())
}

fn zero_model() -> Result<(), String> {
    let mut m = CoefficientModel::new(FamilyId::LipschitzBaseline, 2, 2).map_err(|e| e.to_string())?;
    m.params = crate::model::ModelParams::ZERO;
    let tab = make_tableau(6, 4, 2, 1.0, 16).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(1.0, 16).map_err(|e| e.to_string())?;
    let x0 = ParticleEnsemble::new(4, 2, vec![1.0, -2.0, 0.5, 3.0, 0.0, 0.0, -1.0, 1.0]).map_err(|e| e.to_string())?;
    let out = simulate(&m, &grid, &tab, &SchemeConfig::default(), x0.clone(), &RunOptions::default(), &mut |_, _, _| {})
        .map_err(|e| e.to_string())?;
    if out.ensemble.states() != x0.states() {
        return Err("zero coefficients moved the particles".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_selftest_check_passes() {
        for r in run_selftest() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
