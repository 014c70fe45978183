//! End-to-end acceptance suite. Every criterion runs at its stated tolerance,
//! prints one PASS/FAIL line, and the test fails if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;

use mvsde::config::parse_config;
use mvsde::experiments::{
    run_ergodic_contraction, run_moment_stability, run_poc_rate, run_probe_assumptions, run_strong_rate,
    VerdictStatus,
};
use mvsde::metrics::{w2, W2Method};
use mvsde::model::probe::{probe_assumptions, SampleSpec};
use mvsde::rng::make_tableau;
use mvsde::{CoefficientModel, EmpiricalMeasure, FamilyId, TamedModel, TamingVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const STRONG_RATE: &str = include_str!("../../../configs/strong_rate.toml");
const POC_D1: &str = include_str!("../../../configs/poc_d1.toml");
const POC_D3: &str = include_str!("../../../configs/poc_d3.toml");
const MOMENT: &str = include_str!("../../../configs/moment_stability.toml");
const ERGODIC: &str = include_str!("../../../configs/ergodic.toml");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn strong_rate() -> Outcome {
    let cfg = parse_config(STRONG_RATE).map_err(err)?;
    let report = run_strong_rate(&cfg).map_err(err)?;
    let fit = report.fit.as_ref().ok_or("no fit")?;
    let diverged: usize = report.diverged.iter().sum();
    let detail = format!("slope {:.4}, r^2 {:.4}, diverged {diverged}", fit.slope, fit.r_squared);
    ensure((0.4..=0.6).contains(&fit.slope), || format!("slope out of [0.4, 0.6]: {detail}"))?;
    ensure(fit.r_squared >= 0.95, || format!("r^2 below 0.95: {detail}"))?;
    ensure(diverged == 0, || format!("diverged paths: {detail}"))?;
    Ok(detail)
}

fn poc_rate() -> Outcome {
    let mut slopes = Vec::new();
    for (name, text) in [("d=1", POC_D1), ("d=3", POC_D3)] {
        let cfg = parse_config(text).map_err(err)?;
        let report = run_poc_rate(&cfg).map_err(err)?;
        let fit = report.fit.as_ref().ok_or("no fit")?;
        ensure((-0.65..=-0.35).contains(&fit.slope), || {
            format!("{name}: slope {:.4} out of [-0.65, -0.35]", fit.slope)
        })?;
        ensure(report.diverged.iter().all(|&c| c == 0), || format!("{name}: diverged paths"))?;
        slopes.push(fit.slope);
    }
    let gap = (slopes[1] - slopes[0]).abs();
    let detail = format!("slope d=1 {:.4}, d=3 {:.4}, gap {gap:.4}", slopes[0], slopes[1]);
    ensure(gap <= 0.15, || format!("dimension gap above 0.15: {detail}"))?;
    Ok(detail)
}

fn moment_stability() -> Outcome {
    let cfg = parse_config(MOMENT).map_err(err)?;
    let report = run_moment_stability(&cfg).map_err(err)?;
    ensure(report.tamed_moments.iter().all(|m| m.is_finite()), || "tamed moment not finite".into())?;
    ensure(report.tamed.diverged_at.is_none(), || "tamed scheme diverged".into())?;
    let probe = &report.plain_probe;
    let at = probe.diverged_at.ok_or("plain Euler did not diverge")?;
    ensure(at <= 20, || format!("plain Euler diverged only at step {at}"))?;
    ensure(probe.iterates.len() >= 3, || "fewer than three plain iterates".into())?;
    ensure(probe.iterates[1] == -10.5 && probe.iterates[2] == 568.3125, || {
        format!("plain iterates {:?}", &probe.iterates[..3])
    })?;
    Ok(format!(
        "sup tamed moment {:.4e}, plain diverged at step {at}, iterates {:?}",
        report.tamed.sup_moment,
        &probe.iterates[..3]
    ))
}

fn ergodic() -> Outcome {
    let cfg = parse_config(ERGODIC).map_err(err)?;
    let report = run_ergodic_contraction(&cfg).map_err(err)?;
    let fit = report.decay_fit.as_ref().ok_or("no decay fit")?;
    let detail = format!(
        "decay slope {:.4}, r^2 {:.4}, W2(T)/W2(0) {:.3e}",
        fit.slope, fit.r_squared, report.contraction_ratio
    );
    ensure(fit.slope < 0.0, || format!("no decay: {detail}"))?;
    ensure(fit.r_squared >= 0.9, || format!("r^2 below 0.9: {detail}"))?;
    ensure(report.contraction_ratio < 0.05, || format!("ratio not below 0.05: {detail}"))?;
    ensure(report.verdict.status == VerdictStatus::Pass, || {
        format!("verdict {:?} {:?}: {detail}", report.verdict.status, report.verdict.checks)
    })?;
    Ok(detail)
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

fn brute_force_w2(a: &[f64], b: &[f64], d: usize) -> f64 {
    let n = a.len() / d;
    let cost = |i: usize, j: usize| -> f64 {
        (0..d).map(|k| (a[i * d + k] - b[j * d + k]).powi(2)).sum()
    };
    let best = permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    (best / n as f64).sqrt()
}

fn uniform(rng: &mut ChaCha20Rng, len: usize, r: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-r..r)).collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let exact = W2Method::ExactAssignment { cap: 512 };
    let mut worst_brute = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=7);
        let d = rng.random_range(1..=3);
        let (a, b) = (uniform(&mut rng, n * d, 3.0), uniform(&mut rng, n * d, 3.0));
        let ma = EmpiricalMeasure::new(&a, d).map_err(err)?;
        let mb = EmpiricalMeasure::new(&b, d).map_err(err)?;
        let got = w2(&ma, &mb, exact).map_err(err)?;
        let want = brute_force_w2(&a, &b, d);
        worst_brute = worst_brute.max((got - want).abs());
    }
    let mut worst_sorted = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=64);
        let (a, b) = (uniform(&mut rng, n, 4.0), uniform(&mut rng, n, 4.0));
        let ma = EmpiricalMeasure::new(&a, 1).map_err(err)?;
        let mb = EmpiricalMeasure::new(&b, 1).map_err(err)?;
        let s = w2(&ma, &mb, W2Method::Sorted1d).map_err(err)?;
        let e = w2(&ma, &mb, exact).map_err(err)?;
        worst_sorted = worst_sorted.max((s - e).abs());
    }
    let detail = format!("assignment vs brute force {worst_brute:.2e}, sorted vs assignment {worst_sorted:.2e}");
    ensure(worst_brute <= 1e-10 && worst_sorted <= 1e-10, || detail.clone())?;
    Ok(detail)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn taming_algebra() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(0x7a3e);
    let d = 2;
    let ns = [1u64, 4, 16, 256];
    for family in FamilyId::ALL {
        let model = CoefficientModel::new(family, d, d).map_err(err)?;
        let two_q = 2.0 * model.q;
        let tamed: Vec<TamedModel> = ns
            .iter()
            .map(|&n| TamedModel::new(model.clone(), n, TamingVariant::Finite))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        for _ in 0..10_000 {
            let x = uniform(&mut rng, d, 6.0);
            let y = uniform(&mut rng, d, 6.0);
            let atoms = uniform(&mut rng, 8 * d, 6.0);
            let mu = EmpiricalMeasure::new(&atoms, d).map_err(err)?;
            let b = norm(&model.eval_drift_b(0.0, &x, &mu).map_err(err)?);
            let nx = norm(&x);
            let mut last = 0.0;
            for (tm, &n) in tamed.iter().zip(&ns) {
                let bn = norm(&tm.tamed_drift_b(0.0, &x, &mu).map_err(err)?);
                ensure(bn <= b, || format!("{family}: |b^n| > |b| at x = {x:?}, n = {n}"))?;
                if nx > 0.0 {
                    let bound = (n as f64).sqrt() * b / nx.powf(two_q);
                    ensure(bn <= bound, || format!("{family}: growth bound fails at x = {x:?}, n = {n}"))?;
                }
                ensure(bn >= last, || format!("{family}: |b^n| decreases in n at x = {x:?}"))?;
                last = bn;
                let f = tm.tamed_kernel_f(&x, &y).map_err(err)?;
                let back = tm.tamed_kernel_f(&y, &x).map_err(err)?;
                ensure(f.iter().zip(&back).all(|(u, v)| *u == -*v), || {
                    format!("{family}: f^n(x, y) != -f^n(y, x) at x = {x:?}, y = {y:?}")
                })?;
            }
        }
    }
    Ok(format!("{} families x 10000 points, n in {ns:?}", FamilyId::ALL.len()))
}

fn refinement_coupling() -> Outcome {
    let mut chains = 0;
    for n_max in [1024u64, 96] {
        let (particles, l) = (3, 2);
        let tab = make_tableau(42, particles, l, 1.0, n_max).map_err(err)?;
        let levels: Vec<u64> = (1..=n_max).filter(|k| n_max % k == 0).collect();
        let fine: Vec<Vec<Vec<f64>>> = (0..particles)
            .map(|i| (0..n_max).map(|k| tab.increments_at_level(n_max, i, k)).collect())
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let w_t: Vec<Vec<f64>> = fine
            .iter()
            .map(|incs| (0..l).map(|c| incs.iter().map(|v| v[c]).sum()).collect())
            .collect();
        for &level in &levels {
            let ratio = n_max / level;
            for i in 0..particles {
                let mut total = vec![0.0; l];
                for k in 0..level {
                    let coarse = tab.increments_at_level(level, i, k).map_err(err)?;
                    let lo = (k * ratio) as usize;
                    let summed: Vec<f64> =
                        (0..l).map(|c| fine[i][lo..lo + ratio as usize].iter().map(|v| v[c]).sum()).collect();
                    ensure(coarse == summed, || {
                        format!("n_max {n_max}, level {level}, particle {i}, step {k}: {coarse:?} != {summed:?}")
                    })?;
                    total.iter_mut().zip(&coarse).for_each(|(t, v)| *t += v);
                }
                ensure(total == w_t[i], || format!("n_max {n_max}, level {level}: W_T differs"))?;
            }
            chains += 1;
        }
    }
    Ok(format!("{chains} levels checked exactly, W_T identical on every level"))
}

fn run_cli(threads: &str, config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_mvsde"))
        .args(["--threads", threads, "strong-rate"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(err)?;
    ensure(status.code() == Some(0), || format!("mvsde --threads {threads} exited with {status}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = dir.path().join("strong_rate.toml");
    fs::write(&config, STRONG_RATE).map_err(err)?;
    let (one, many) = (dir.path().join("t1"), dir.path().join("t8"));
    run_cli("1", &config, &one)?;
    run_cli("8", &config, &many)?;
    let mut names: Vec<_> = fs::read_dir(&one)
        .map_err(err)?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    names.sort();
    ensure(names.len() >= 2, || format!("expected csv and json outputs, got {names:?}"))?;
    for name in &names {
        let a = fs::read(one.join(name)).map_err(err)?;
        let b = fs::read(many.join(name)).map_err(|e| format!("{name:?}: {e}"))?;
        ensure(a == b, || format!("{name:?} differs between 1 and 8 threads"))?;
    }
    Ok(format!("{} output files byte-identical across 1 and 8 threads", names.len()))
}

fn probes() -> Outcome {
    let spec = SampleSpec {
        count: 10_000,
        radius: 5.0,
        seed: 7,
    };
    let mut lines = Vec::new();
    for family in [FamilyId::CubicMeanField, FamilyId::ErgodicDissipative, FamilyId::PairwiseVlasov] {
        let model = CoefficientModel::new(family, 2, 2).map_err(err)?;
        let report = probe_assumptions(&model, &model.documented_sets(), &spec, &Default::default()).map_err(err)?;
        let failing: Vec<_> = report.entries.iter().filter(|e| !e.holds).map(|e| &e.assumption_id).collect();
        ensure(failing.is_empty(), || format!("{family}: failing {failing:?}"))?;
        lines.push(format!("{family} {} ok", report.entries.len()));
    }
    let text = "config_version = 1\nexperiment = \"probe-assumptions\"\n[model]\nfamily = \"cubic-repulsive\"\nd = 2\n\
                [probe]\nset = \"one-sided-lipschitz\"\ncount = 10000\nradius = 5.0\nseed = 7\n";
    let cfg = parse_config(text).map_err(err)?;
    let report = run_probe_assumptions(&cfg).map_err(err)?;
    let entries = &report.probes.entries;
    ensure(!entries.is_empty(), || "no one-sided-lipschitz entries for cubic-repulsive".into())?;
    let worst = entries.iter().map(|e| e.worst_margin).fold(f64::NEG_INFINITY, f64::max);
    ensure(entries.iter().any(|e| !e.holds) && worst > 0.0, || {
        format!("cubic-repulsive passed one-sided-lipschitz (worst margin {worst})")
    })?;
    lines.push(format!("cubic-repulsive fails, worst margin {worst:.3e}"));
    Ok(lines.join("; "))
}

/// Written straight to stderr so the lines show even under output capture.
fn report(line: std::fmt::Arguments<'_>) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("strong rate in h", strong_rate),
        ("propagation of chaos in N", poc_rate),
        ("moment stability", moment_stability),
        ("ergodic contraction", ergodic),
        ("W2 metric oracles", metric_oracles),
        ("taming algebra", taming_algebra),
        ("Brownian refinement coupling", refinement_coupling),
        ("thread-count determinism", determinism),
        ("assumption probes", probes),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = std::time::Instant::now();
        let outcome = run();
        let secs = started.elapsed().as_secs_f64();
        match &outcome {
            Ok(detail) => report(format_args!("PASS [{}] {name}: {detail} ({secs:.1}s)", i + 1)),
            Err(detail) => {
                report(format_args!("FAIL [{}] {name}: {detail} ({secs:.1}s)", i + 1));
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
