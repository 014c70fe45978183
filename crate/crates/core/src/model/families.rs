//! Family defaults and the analytically derived assumption constants each
//! family documents. The constants are upper (or, for dissipativity
//! constants, lower) bounds derived by hand from the parametric shape; the
//! probes check them numerically.

use std::collections::BTreeMap;

use super::probe::AssumptionSet;
use super::{CoefficientModel, FamilyId, MeasureMode, ModelParams};

pub const PARAM_NAMES: [&str; 10] = [
    "linear_drift",
    "cubic_drift",
    "mean_coupling",
    "pair_coupling",
    "noise",
    "state_noise",
    "pair_noise",
    "kernel_linear",
    "kernel_cubic",
    "kernel_noise",
];

/// A parameter accepted by a family, with its default.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
}

pub(super) fn defaults(family: FamilyId) -> ModelParams {
    let base = ModelParams::ZERO;
    match family {
        FamilyId::CubicMeanField => ModelParams {
            cubic_drift: 1.0,
            mean_coupling: 0.5,
            noise: 0.5,
            kernel_cubic: 1.0,
            kernel_noise: 0.5,
            ..base
        },
        FamilyId::ErgodicDissipative => ModelParams {
            linear_drift: 1.0,
            cubic_drift: 1.0,
            state_noise: 0.1,
            kernel_linear: 1.0,
            kernel_cubic: 1.0,
            kernel_noise: 0.2,
            ..base
        },
        FamilyId::PairwiseVlasov => ModelParams {
            cubic_drift: 1.0,
            pair_coupling: 1.0,
            noise: 0.5,
            pair_noise: 0.2,
            kernel_cubic: 1.0,
            kernel_noise: 0.2,
            ..base
        },
        FamilyId::LipschitzBaseline => ModelParams {
            linear_drift: 1.0,
            mean_coupling: 0.5,
            noise: 0.5,
            kernel_linear: 1.0,
            kernel_noise: 0.2,
            ..base
        },
        FamilyId::CubicRepulsive => ModelParams {
            cubic_drift: -1.0,
            ..base
        },
    }
}

pub(super) fn default_p0(q: f64) -> f64 {
    2.0 * (q + 1.0) + 2.0
}

pub(super) fn accepts(family: FamilyId, name: &str) -> bool {
    match name {
        "mean_coupling" | "state_noise" => family.measure_mode() == MeasureMode::Functional,
        "pair_coupling" | "pair_noise" => family.measure_mode() == MeasureMode::Pairwise,
        other => PARAM_NAMES.contains(&other),
    }
}

/// Parameters accepted by `family` together with their defaults.
pub fn param_specs(family: FamilyId) -> Vec<ParamSpec> {
    let d = defaults(family);
    PARAM_NAMES
        .iter()
        .filter(|n| accepts(family, n))
        .map(|&name| ParamSpec {
            name,
            default: d.get(name).expect("known name"),
        })
        .collect()
}

/// `|v|^2 <= s0 + sx |x|^2 + sm |m|^2` bound for the Frobenius norm of the
/// diagonal noise `noise * E + c * D(v)` with `v` in terms of `x` and the
/// measure mean `m`.
struct NoiseBound {
    s0: f64,
    sx: f64,
    sm: f64,
}

fn noise_bound(model: &CoefficientModel) -> NoiseBound {
    let p = &model.params;
    let k = model.diag_len() as f64;
    let nu2 = p.noise * p.noise;
    match model.measure_mode {
        MeasureMode::Functional => {
            let e2 = p.state_noise * p.state_noise;
            if e2 == 0.0 {
                NoiseBound { s0: k * nu2, sx: 0.0, sm: 0.0 }
            } else if nu2 == 0.0 {
                NoiseBound { s0: 0.0, sx: e2, sm: 0.0 }
            } else {
                NoiseBound { s0: 2.0 * k * nu2, sx: 2.0 * e2, sm: 0.0 }
            }
        }
        MeasureMode::Pairwise => {
            // |m - x|^2 <= 2|m|^2 + 2|x|^2
            let c2 = p.pair_noise * p.pair_noise;
            if c2 == 0.0 {
                NoiseBound { s0: k * nu2, sx: 0.0, sm: 0.0 }
            } else if nu2 == 0.0 {
                NoiseBound { s0: 0.0, sx: 2.0 * c2, sm: 2.0 * c2 }
            } else {
                NoiseBound { s0: 2.0 * k * nu2, sx: 4.0 * c2, sm: 4.0 * c2 }
            }
        }
    }
}

fn nonneg(v: f64) -> f64 {
    v.max(0.0)
}

/// Documented constants keyed by inequality id (single-constant
/// inequalities) or by the constant's own name (long-time assumptions).
pub(super) fn documented_constants(model: &CoefficientModel) -> BTreeMap<&'static str, f64> {
    let mut c = BTreeMap::new();
    let p = &model.params;
    let (alpha, beta) = (p.linear_drift, p.cubic_drift);
    let (a, cub, cg) = (p.kernel_linear, p.kernel_cubic, p.kernel_noise);
    let p0 = model.p0;
    let p1 = model.p1;
    let q = model.q;
    let signs_ok = alpha >= 0.0 && beta >= 0.0 && a >= 0.0 && cub >= 0.0;
    // the cubic pieces need (1 + |x| + |x'|)^q to dominate quadratic growth
    let growth_ok = (beta == 0.0 || q >= 2.0) && (cub == 0.0 || q >= 2.0);

    if !signs_ok {
        return c;
    }

    // kernels: f = -a z - c z|z|^2, g = cg D(z)
    c.insert("eu-f-g.monotone", nonneg((p0 - 1.0) * cg * cg - a));
    c.insert("anti-sys.antisymmetry", 0.0);
    c.insert("anti-sys.moment", 0.0);
    c.insert("anti-sys.growth", nonneg(2.0 * (p0 - 1.0) * cg * cg - a));
    c.insert("mon-rate.kernel", nonneg(2.0 * (p1 - 1.0) * cg * cg - a));
    if growth_ok {
        c.insert("eu-f-g.poly-lipschitz", a + cub);
    }

    let nb = noise_bound(model);
    match model.measure_mode {
        MeasureMode::Functional => {
            let lam = p.mean_coupling.abs();
            let e2 = p.state_noise * p.state_noise;
            c.insert("one-sided-lipschitz", -alpha);
            c.insert(
                "eu-b-sig.growth",
                nonneg(
                    ((p0 - 1.0) * nb.s0)
                        .max(lam / 2.0 - alpha + (p0 - 1.0) * nb.sx)
                        .max(lam / 2.0),
                ),
            );
            c.insert(
                "eu-b-sig.monotone",
                nonneg((lam / 2.0 - alpha + e2).max(lam / 2.0)),
            );
            c.insert(
                "mon-rate.drift",
                nonneg((lam / 2.0 - alpha + (p1 - 1.0) * e2).max(lam / 2.0)),
            );
            if growth_ok {
                c.insert("b-poly", alpha.max(1.5 * beta).max(lam));
            }

            // Long-time constants: derived for lambda = 0, nu = 0, q = 2 and
            // strictly dissipative kernels.
            let long_time = p.mean_coupling == 0.0
                && p.noise == 0.0
                && q == 2.0
                && beta > 0.0
                && cub > 0.0;
            if long_time {
                c.insert("Lhat_bsigma_1", (alpha - e2).min(beta));
                c.insert("Lhat_bsigma_2", 0.0);
                c.insert("Lhat_fg_1", (a - 2.0 * cg * cg).min(cub));
                c.insert("L_b_1", (2.0 * alpha * alpha).max(9.0 * beta * beta));
                c.insert("L_b_2", 0.0);
                c.insert("L_f_1", (2.0 * a * a).max(9.0 * cub * cub));
                c.insert("L_bsigma_1", (alpha - 2.0 * e2).min(beta / 2.0));
                c.insert("L_bsigma_2", 0.0);
                c.insert("L_fg_1", (a - 4.0 * cg * cg).min(cub / 2.0));
                c.insert("L_bsigma_3", alpha / 2.0);
                c.insert("L_bsigma_4", beta - 2.0 * e2);
                c.insert("L_bsigma_5", 0.0);
                c.insert("L_fg_2", a / 2.0);
                c.insert("L_fg_3", cub - 4.0 * cg * cg);
                c.insert("L_b_3", (alpha * alpha).max(2.0 * beta * beta));
                c.insert("L_b_4", 0.0);
                c.insert("L_f_2", (a * a).max(2.0 * cub * cub));
            }
        }
        MeasureMode::Pairwise => {
            let kappa = p.pair_coupling;
            if kappa < 0.0 {
                return c;
            }
            let c2 = p.pair_noise * p.pair_noise;
            c.insert("one-sided-lipschitz", -(alpha + kappa));
            c.insert(
                "eu-b-sig.growth",
                nonneg(
                    ((p0 - 1.0) * nb.s0)
                        .max(-alpha - kappa / 2.0 + (p0 - 1.0) * nb.sx)
                        .max(kappa / 2.0 + (p0 - 1.0) * nb.sm),
                ),
            );
            c.insert(
                "eu-b-sig.monotone",
                nonneg((-alpha - kappa / 2.0 + 2.0 * c2).max(kappa / 2.0 + 2.0 * c2)),
            );
            c.insert(
                "mon-rate.drift",
                nonneg(
                    (-alpha - kappa / 2.0 + 2.0 * (p1 - 1.0) * c2)
                        .max(kappa / 2.0 + 2.0 * (p1 - 1.0) * c2),
                ),
            );
            if growth_ok {
                c.insert("b-poly", (alpha + kappa).max(1.5 * beta));
            }
        }
    }
    c
}

/// Assumption sets whose every constant is documented for this model.
pub(super) fn documented_sets(model: &CoefficientModel) -> Vec<AssumptionSet> {
    let consts = documented_constants(model);
    AssumptionSet::ALL
        .into_iter()
        .filter(|set| {
            set.inequalities()
                .iter()
                .flat_map(|ineq| ineq.constant_names())
                .all(|name| consts.contains_key(name))
        })
        .collect()
}
