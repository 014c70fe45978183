//! Command-line front end: argument parsing, thread pool, dispatch.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config_as, ExperimentKind, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{self, Verdict};
use crate::selftest::run_selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERDICT_FAIL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mvsde", version, about = "Tamed Euler experiments for McKean-Vlasov particle systems")]
pub struct Cli {
    /// Worker threads; numeric output does not depend on it.
    #[arg(long, global = true, env = "MVSDE_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write moment series and a final snapshot.
    Simulate(RunArgs),
    /// Strong convergence rate in the step size.
    StrongRate(RunArgs),
    /// Propagation-of-chaos rate in the number of particles.
    PocRate(RunArgs),
    /// Tamed against plain Euler on a superlinear drift.
    MomentStability(RunArgs),
    /// W2 contraction between synchronously coupled ensembles.
    Ergodic(RunArgs),
    /// Numerical checks of the model's assumption inequalities.
    ProbeAssumptions(RunArgs),
    /// Fast invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file.
    pub config: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `[run] out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    fn experiment(&self) -> Option<(ExperimentKind, &RunArgs)> {
        let pair = match self {
            Command::Simulate(a) => (ExperimentKind::Simulate, a),
            Command::StrongRate(a) => (ExperimentKind::StrongRate, a),
            Command::PocRate(a) => (ExperimentKind::PocRate, a),
            Command::MomentStability(a) => (ExperimentKind::MomentStability, a),
            Command::Ergodic(a) => (ExperimentKind::Ergodic, a),
            Command::ProbeAssumptions(a) => (ExperimentKind::ProbeAssumptions, a),
            Command::Selftest => return None,
        };
        Some(pair)
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_ERROR;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_ERROR;
        }
    };
    match pool.install(|| run(&cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<RunConfig> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", args.config.display())))
    })?;
    let mut cfg = parse_config_as(&text, Some(kind))?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.run.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(command: &Command) -> Result<i32> {
    let Some((kind, args)) = command.experiment() else {
        return Ok(selftest());
    };
    let cfg = load(kind, args)?;
    let verdict: Option<Verdict> = match kind {
        ExperimentKind::Simulate => {
            let report = experiments::run_simulate(&cfg)?;
            report.write_outputs(&cfg)?;
            match report.diverged_at {
                Some(k) => println!("simulate: diverged at step {k}"),
                None => println!("simulate: {} steps completed", report.steps.last().copied().unwrap_or(0)),
            }
            None
        }
        ExperimentKind::StrongRate => {
            let report = experiments::run_strong_rate(&cfg)?;
            report.write_outputs(&cfg)?;
            print_rate(&report);
            Some(report.verdict)
        }
        ExperimentKind::PocRate => {
            let report = experiments::run_poc_rate(&cfg)?;
            report.write_outputs(&cfg)?;
            print_rate(&report);
            Some(report.verdict)
        }
        ExperimentKind::MomentStability => {
            let report = experiments::run_moment_stability(&cfg)?;
            report.write_outputs(&cfg)?;
            println!(
                "tamed sup moment {}; plain diverged at {:?}; probe iterates {:?}",
                report.tamed.sup_moment,
                report.plain.diverged_at,
                &report.plain_probe.iterates[..report.plain_probe.iterates.len().min(3)]
            );
            Some(report.verdict)
        }
        ExperimentKind::Ergodic => {
            let report = experiments::run_ergodic_contraction(&cfg)?;
            report.write_outputs(&cfg)?;
            if let Some(fit) = &report.decay_fit {
                println!("decay rate {:.4} (r^2 {:.4})", fit.slope, fit.r_squared);
            }
            println!("W2(T)/W2(0) = {:.3e}", report.contraction_ratio);
            Some(report.verdict)
        }
        ExperimentKind::ProbeAssumptions => {
            let report = experiments::run_probe_assumptions(&cfg)?;
            report.write_outputs(&cfg)?;
            for e in &report.probes.entries {
                println!("{:<24} worst_margin {:>12.4e}  holds {}", e.assumption_id, e.worst_margin, e.holds);
            }
            Some(report.verdict)
        }
    };
    Ok(match verdict {
        Some(v) => {
            println!("verdict: {:?}", v.status);
            for (name, ok) in &v.checks {
                println!("  {name}: {}", if *ok { "ok" } else { "FAILED" });
            }
            if v.failed() {
                EXIT_VERDICT_FAIL
            } else {
                EXIT_OK
            }
        }
        None => EXIT_OK,
    })
}

fn print_rate(report: &experiments::RateReport) {
    for (i, level) in report.levels.iter().enumerate() {
        println!(
            "{} = {level:>6}  error {:.6e}  stderr {:.2e}  diverged {}",
            report.level_kind, report.errors[i], report.stderr[i], report.diverged[i]
        );
    }
    if let Some(fit) = &report.fit {
        println!("slope {:.4} (r^2 {:.4})", fit.slope, fit.r_squared);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

fn selftest() -> i32 {
    let results = run_selftest();
    for r in &results {
        if r.passed {
            println!("ok      {}", r.name);
        } else {
            println!("FAILED  {}: {}", r.name, r.detail);
        }
    }
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_VERDICT_FAIL
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_arguments_exit_with_error() {
        assert_eq!(main_with_args(["mvsde", "bogus"]), EXIT_ERROR);
        assert_eq!(main_with_args(["mvsde", "strong-rate", "/nonexistent/cfg.toml"]), EXIT_ERROR);
        assert_eq!(main_with_args(["mvsde", "--threads", "0", "selftest"]), EXIT_ERROR);
    }

    #[test]
    fn overrides_apply() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "config_version = 1\n[model]\nfamily = \"cubic-mean-field\"\n").unwrap();
        let args = RunArgs {
            config: path,
            seed: Some(99),
            out: Some(dir.path().join("o")),
        };
        let cfg = load(ExperimentKind::Simulate, &args).unwrap();
        assert_eq!(cfg.run.seed, 99);
        assert_eq!(cfg.run.out_dir, dir.path().join("o"));
        assert_eq!(cfg.experiment, ExperimentKind::Simulate);
    }
}
