#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! `sdd`: simulate and verify state-dependent delay equations from a TOML
//! run config.

mod config;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use sdd_core::delay::DelayError;
use sdd_core::scenarios::random_ensemble;
use sdd_core::verify::Section;
use sdd_core::{
    continuous_dependence_probe, dissipation_probe, hadamard_report, holder_regularity_probe, mild_residual, solve,
    uniqueness_probe, DependenceSettings, HadamardSettings, ScalarFunction, Status, VerifyError,
};
use serde_json::{json, Value};
use thiserror::Error;

use config::{ConfigError, Prepared};
use report::{error_section, section, to_value, write_atomic, RunReport};

const EXIT_CERTIFIED_FAIL: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CONFIG: u8 = 3;

const RESIDUAL_SAMPLES: usize = 10;
const DEFAULT_ENSEMBLE: usize = 8;

#[derive(Parser)]
#[command(name = "sdd", version, about = "State-dependent delay simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write the trajectory as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add the mild-formulation defect at evenly spaced times to the report.
        #[arg(long)]
        residual: bool,
        /// Prefix the CSV with the initial segment's knots at negative times.
        #[arg(long)]
        with_history: bool,
    },
    /// Evaluate the delay at the initial segment and fuzz its ignorance condition.
    CheckDelay {
        #[arg(long)]
        config: PathBuf,
        /// Fuzz seed; falls back to `[verify].seed`, then 0.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run verification suites and write a JSON report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        suite: Suite,
        /// Required here or as `[verify].seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Long-run dissipation and tail regularity over a random ensemble.
    Attractor {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        t_long: Option<f64>,
        #[arg(long)]
        ensemble_size: Option<usize>,
        /// Required here or as `[attractor].seed` / `[verify].seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Ignorance,
    Uniqueness,
    Dependence,
    Attractor,
    All,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Runtime(_) | CliError::Io { .. } => EXIT_RUNTIME,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Errors that a well-formed config can still trip over before any compute.
fn precondition(e: VerifyError) -> CliError {
    match e {
        VerifyError::Unbounded | VerifyError::Invalid(_) | VerifyError::OutsideLipschitzClass { .. } => {
            CliError::Usage(e.to_string())
        }
        other => runtime(other),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SDD_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let started = Instant::now();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            residual,
            with_history,
        } => cmd_simulate(&config, &out, residual, with_history),
        Command::CheckDelay { config, seed } => cmd_check_delay(&config, seed),
        Command::Verify {
            config,
            suite,
            seed,
            out,
        } => cmd_verify(&config, suite, seed, &out),
        Command::Attractor {
            config,
            t_long,
            ensemble_size,
            seed,
            out,
        } => cmd_attractor(&config, t_long, ensemble_size, seed, &out),
    };
    log::info!("finished in {:.3} s", started.elapsed().as_secs_f64());
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn emit_stdout(report: &RunReport) -> Result<(), CliError> {
    std::io::stdout()
        .write_all(report.to_json().as_bytes())
        .map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        })
}

fn emit_file(report: &RunReport, out: &Path) -> Result<(), CliError> {
    write_atomic(out, |w| w.write_all(report.to_json().as_bytes())).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })
}

fn cmd_simulate(config: &Path, out: &Path, residual: bool, with_history: bool) -> Result<u8, CliError> {
    let p = config::load(config)?;
    let mut report = RunReport::new("simulate", &p.config, &p.source);
    let tr = solve(p.problem.clone(), &p.initial, &p.solver).map_err(runtime)?;
    write_atomic(out, |w| tr.write_csv(w, with_history, p.solver.record_stride)).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })?;

    let log = tr.log();
    let picard_iterations: usize = log
        .picard_iterations
        .iter()
        .filter(|&&n| n > 1)
        .map(|&n| n as usize)
        .sum();
    let last = tr.path().last_value();
    let space = tr.space();
    let mut results = json!({
        "end_time": tr.end_time(),
        "steps": tr.times().len() - 1,
        "picard_steps": log.picard_steps,
        "picard_iterations": picard_iterations,
        "clamp_events": log.clamp_events,
        "min_delay": log.min_delay,
        "max_delay": log.max_delay,
        "final_norm": space.norm(last),
        "final_finite": last.iter().all(|x| x.is_finite()),
    });
    if residual {
        let end = tr.end_time();
        let times: Vec<f64> = (0..=RESIDUAL_SAMPLES)
            .map(|i| end * i as f64 / RESIDUAL_SAMPLES as f64)
            .collect();
        let max_defect = mild_residual(&tr, &times).map_err(runtime)?;
        results["residual"] = json!({ "max_defect": max_defect, "sample_times": times });
    }
    report.results(results);
    step_warnings(&mut report, log.clamp_events, log.picard_steps, picard_iterations);
    if matches!(
        p.problem.nonlinearity().scalar_function(),
        ScalarFunction::Nicholson { .. }
    ) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..tr.times().len() {
            for &x in tr.value(i) {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if lo < -0.1 * hi {
            report.warn(format!(
                "solution dips to {lo:.3e} against a maximum of {hi:.3e}; dt or n_modes may be too coarse"
            ));
        }
    }
    emit_stdout(&report)?;
    Ok(0)
}

fn step_warnings(report: &mut RunReport, clamps: usize, picard_steps: usize, picard_iters: usize) {
    if clamps > 0 {
        report.warn(format!(
            "{clamps} delay map outputs were clamped into their declared ranges"
        ));
    }
    if picard_steps > 0 {
        report.warn(format!(
            "{picard_steps} steps needed fixed-point iteration ({picard_iters} iterations in total)"
        ));
    }
}

fn cmd_check_delay(config: &Path, seed: Option<u64>) -> Result<u8, CliError> {
    let p = config::load(config)?;
    let seed = seed.or(p.config.verify.seed).unwrap_or(0);
    let mut report = RunReport::new("check-delay", &p.config, &p.source);
    report.seed(seed);
    let eta = p.problem.delay();
    let value = eta.evaluate(&p.initial).map_err(runtime)?;
    let mut results = json!({ "eta": value, "structured": eta.is_structured() });
    let mut code = 0;
    match eta.dependency_segment(&p.initial) {
        Ok(seg) => {
            results["segment"] = json!([-seg.theta_upper, -seg.theta_lower]);
            results["segment_report"] = to_value(&seg);
        }
        Err(DelayError::SegmentUnknown) => {
            results["segment"] = Value::Null;
            report.warn("delay declares no dependency segment; ignorance cannot be fuzzed");
        }
        Err(e) => return Err(runtime(e)),
    }
    if !results["segment"].is_null() {
        let ign = eta
            .verify_ignorance(&p.initial, p.config.verify.trials, seed)
            .map_err(runtime)?;
        if !ign.passes {
            code = EXIT_CERTIFIED_FAIL;
        }
        results["ignorance"] = to_value(&ign);
    }
    report.results(results);
    emit_stdout(&report)?;
    Ok(code)
}

fn require_seed(flag: Option<u64>, fallbacks: &[Option<u64>]) -> Result<u64, CliError> {
    flag.or_else(|| fallbacks.iter().find_map(|s| *s))
        .ok_or_else(|| CliError::Usage("a seed is required for stochastic suites (--seed or [verify].seed)".into()))
}

fn dependence_settings(p: &Prepared) -> DependenceSettings {
    let v = &p.config.verify;
    let mut s = DependenceSettings::new(v.omega, v.q);
    s.lipschitz_class = v.lipschitz_class;
    s
}

fn cmd_verify(config: &Path, suite: Suite, seed: Option<u64>, out: &Path) -> Result<u8, CliError> {
    let p = config::load(config)?;
    let seed = require_seed(seed, &[p.config.verify.seed])?;
    if suite == Suite::Attractor {
        attractor_inputs(&p, None, None)?;
    }
    let mut report = RunReport::new("verify", &p.config, &p.source);
    report.seed(seed);
    let v = &p.config.verify;
    let mut results = serde_json::Map::new();
    let mut certified = true;
    let mut failure: Option<CliError> = None;

    let mut record = |name: &str, outcome: Result<(bool, Value), CliError>| match outcome {
        Ok((pass, value)) => {
            certified &= pass;
            results.insert(name.to_string(), value);
        }
        Err(e) => {
            results.insert(name.to_string(), error_section(&e.to_string()));
            failure.get_or_insert(e);
        }
    };

    match suite {
        Suite::Ignorance => record("ignorance", ignorance_suite(&p, seed)),
        Suite::Uniqueness => record("uniqueness", {
            uniqueness_probe(p.problem.clone(), &p.initial, &p.solver, v.n_variants, seed)
                .map_err(runtime)
                .map(|u| {
                    (
                        u.status == Status::Pass,
                        section(u.status == Status::Pass, None, to_value(&u)),
                    )
                })
        }),
        Suite::Dependence => record("dependence", dependence_suite(&p, seed)),
        Suite::Attractor => record("attractor", attractor_suite(&p, None, None, seed)),
        Suite::All => {
            let settings = HadamardSettings {
                dependence: dependence_settings(&p),
                n_variants: v.n_variants,
                n_perturbations: v.n_perturbations,
                epsilon: v.epsilon,
                ignorance_trials: v.trials,
                seed,
            };
            let h = hadamard_report(p.problem.clone(), &p.initial, &p.solver, &settings);
            if let Section::Measured(s) = &h.solve {
                let s = s.clone();
                record("solve", Ok((true, to_value(&s))));
            }
            record(
                "hadamard",
                Ok((h.well_posed, section(h.well_posed, None, to_value(&h)))),
            );
            if p.problem.nonlinearity().is_bounded() && attractor_inputs(&p, None, None).is_ok() {
                record("attractor", attractor_suite(&p, None, None, seed));
            } else {
                record(
                    "attractor",
                    Ok((
                        true,
                        json!({ "pass": true, "skipped": "needs a bounded nonlinearity and [attractor].t_long" }),
                    )),
                );
            }
        }
    }
    report.results(Value::Object(results));
    emit_file(&report, out)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(if certified { 0 } else { EXIT_CERTIFIED_FAIL })
}

fn ignorance_suite(p: &Prepared, seed: u64) -> Result<(bool, Value), CliError> {
    match p
        .problem
        .delay()
        .verify_ignorance(&p.initial, p.config.verify.trials, seed)
    {
        Ok(r) => Ok((r.passes, section(r.passes, None, to_value(&r)))),
        Err(DelayError::SegmentUnknown) => Ok((
            false,
            json!({ "pass": false, "note": "precondition unverified: no dependency segment declared" }),
        )),
        Err(e) => Err(runtime(e)),
    }
}

fn dependence_suite(p: &Prepared, seed: u64) -> Result<(bool, Value), CliError> {
    let v = &p.config.verify;
    let r = continuous_dependence_probe(
        p.problem.clone(),
        &p.initial,
        &p.solver,
        &dependence_settings(p),
        v.n_perturbations,
        v.epsilon,
        seed,
    )
    .map_err(precondition)?;
    let pass = r.status == Status::Pass;
    Ok((pass, section(pass, Some(to_value(&r.constants)), to_value(&r))))
}

/// `(t_long, ensemble_size)` with flags taking precedence over the config.
fn attractor_inputs(p: &Prepared, t_long: Option<f64>, size: Option<usize>) -> Result<(f64, usize), CliError> {
    let a = &p.config.attractor;
    let t = t_long
        .or(a.t_long)
        .ok_or_else(|| CliError::Usage("attractor needs t_long (--t-long or [attractor].t_long)".into()))?;
    if !(t > p.problem.horizon()) {
        return Err(CliError::Usage(format!(
            "t_long = {t} must exceed the delay horizon {}",
            p.problem.horizon()
        )));
    }
    let n = size.or(a.ensemble_size).unwrap_or(DEFAULT_ENSEMBLE);
    if n == 0 {
        return Err(CliError::Usage("ensemble_size must be positive".into()));
    }
    if !p.problem.nonlinearity().is_bounded() {
        return Err(precondition(VerifyError::Unbounded));
    }
    Ok((t, n))
}

fn attractor_suite(
    p: &Prepared,
    t_long: Option<f64>,
    size: Option<usize>,
    seed: u64,
) -> Result<(bool, Value), CliError> {
    let (t_long, n) = attractor_inputs(p, t_long, size)?;
    let a = &p.config.attractor;
    let ensemble =
        random_ensemble(p.problem.operator().space(), p.problem.horizon(), n, a.max_norm, seed).map_err(runtime)?;
    let diag = dissipation_probe(p.problem.clone(), &p.solver, &ensemble, t_long).map_err(precondition)?;
    if diag.status != Status::Pass {
        return Ok((false, json!({ "pass": false, "dissipation": to_value(&diag) })));
    }
    let holder = holder_regularity_probe(&diag, a.pairs, seed).map_err(runtime)?;
    let pass = holder.l0_estimate.is_finite() && holder.l_tilde_estimate.is_finite();
    Ok((
        pass,
        json!({
            "pass": pass,
            "dissipation": to_value(&diag),
            "regularity": to_value(&holder),
        }),
    ))
}

fn cmd_attractor(
    config: &Path,
    t_long: Option<f64>,
    size: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<u8, CliError> {
    let p = config::load(config)?;
    let seed = require_seed(seed, &[p.config.attractor.seed, p.config.verify.seed])?;
    attractor_inputs(&p, t_long, size)?;
    let mut report = RunReport::new("attractor", &p.config, &p.source);
    report.seed(seed);
    let outcome = attractor_suite(&p, t_long, size, seed);
    let code = match &outcome {
        Ok((pass, value)) => {
            report.results(value.clone());
            if *pass {
                0
            } else {
                EXIT_CERTIFIED_FAIL
            }
        }
        Err(e) => {
            report.results(error_section(&e.to_string()));
            0
        }
    };
    emit_file(&report, out)?;
    outcome.map(|_| code)
}
