//! `mbr` command line.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::potential::check_growth;
use crate::replica::{closed_form_quadratic, free_energy_f, free_energy_fbar};

use super::config::{ExperimentConfig, OutputFormat, SeedSpec};
use super::report::{comparison, comparison_csv, csv_preamble, run_seeds, seed_csv, theory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_SAMPLER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mbr", version, about = "Replica predictions and Monte Carlo checks for mismatched Bayesian regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// First simulation seed; replaces `sim.seed_base` and any seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for seed-level parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Omit the `# generated_at_unix` line.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Output path; overrides `output.path`. Defaults to stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the fixed-point system; exits 3 if not converged.
    Solve,
    /// Both free-energy functionals at the fixed point.
    FreeEnergy,
    /// Closed-form solution for a quadratic potential.
    ClosedForm,
    /// Per-seed simulation results.
    Simulate,
    /// Theory against simulation, one row per parameter point.
    Compare,
    /// Theory rows over the sweep grid, with simulation if configured.
    Sweep,
    /// Growth and concavity scan of the potential.
    CheckPotential,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Unsupported(_) => EXIT_CONFIG,
        Error::SamplerHealth { .. } => EXIT_SAMPLER,
        _ => EXIT_OTHER,
    }
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let (Some(seed), Some(sim)) = (cli.seed, cfg.sim.as_mut()) {
        let count = sim.seed_list().len();
        sim.seeds = SeedSpec::Count(count);
        sim.seed_base = seed;
    }
    if let Some(out) = &cli.output {
        cfg.output.path = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, text: &str) -> Result<()> {
    match &cfg.output.path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json(cfg: &ExperimentConfig, cli: &Cli, mut value: serde_json::Value) -> Result<()> {
    if !cli.no_timestamp {
        let t = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        value["generated_at_unix"] = json!(t);
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    emit(cfg, &text)
}

fn single_or_list(mut v: Vec<serde_json::Value>, swept: bool) -> serde_json::Value {
    if swept || v.len() != 1 {
        serde_json::Value::Array(v)
    } else {
        v.remove(0)
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = load(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, &cfg))
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig) -> Result<i32> {
    let swept = cfg.sweep.is_some();
    match cli.command {
        Command::Solve | Command::FreeEnergy => {
            let mut all_converged = true;
            let mut out = Vec::new();
            for model in cfg.points()? {
                let params = model.params()?;
                let t = theory(&params, cfg)?;
                all_converged &= t.solver.converged;
                out.push(if cli.command == Command::Solve {
                    json!({ "params": params, "report": t.solver })
                } else {
                    let grid = cfg.solver.grid()?;
                    let s = t.solver.state;
                    json!({
                        "params": params,
                        "state": s,
                        "F": free_energy_f(&params, s.q, s.rho, &grid)?,
                        "Fbar": free_energy_fbar(&params, &s, &grid)?,
                        "free_energy_prediction": t.free_energy_prediction,
                        "converged": t.solver.converged,
                    })
                });
            }
            emit_json(cfg, cli, json!({ "config": cfg.resolved(), "results": single_or_list(out, swept) }))?;
            Ok(if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Command::ClosedForm => {
            let mut out = Vec::new();
            for model in cfg.points()? {
                let params = model.params()?;
                out.push(json!({ "params": params, "state": closed_form_quadratic(&params)? }));
            }
            emit_json(cfg, cli, json!({ "config": cfg.resolved(), "results": single_or_list(out, swept) }))?;
            Ok(EXIT_OK)
        }
        Command::CheckPotential => {
            let rep = check_growth(&cfg.model.potential, 10.0, 2001)?;
            emit_json(
                cfg,
                cli,
                json!({ "potential": cfg.model.potential, "ok": rep.ok(), "report": rep }),
            )?;
            Ok(EXIT_OK)
        }
        Command::Simulate => {
            let sim = cfg.sim.as_ref().ok_or_else(|| Error::Config("sim: section required for simulate".into()))?;
            let params = cfg.model.params()?;
            let (results, failed) = run_seeds(&params, cfg, true)?;
            match cfg.output.format {
                OutputFormat::Csv => {
                    let text = csv_preamble(cfg, !cli.no_timestamp)? + &seed_csv(&results, &failed, sim.n);
                    emit(cfg, &text)?;
                }
                OutputFormat::Json => emit_json(
                    cfg,
                    cli,
                    json!({ "config": cfg.resolved(), "seeds": results, "failed": failed }),
                )?,
            }
            Ok(if failed.is_empty() { EXIT_OK } else { EXIT_SAMPLER })
        }
        Command::Compare | Command::Sweep => {
            if cli.command == Command::Compare && cfg.sim.is_none() {
                return Err(Error::Config("sim: section required for compare".into()));
            }
            if cli.command == Command::Sweep && cfg.sweep.is_none() {
                return Err(Error::Config("sweep: section required for sweep".into()));
            }
            let report = comparison(cfg, true)?;
            match cfg.output.format {
                OutputFormat::Csv => {
                    let text = csv_preamble(cfg, !cli.no_timestamp)? + &comparison_csv(&report);
                    emit(cfg, &text)?;
                    if let Some(p) = &cfg.output.path {
                        let sidecar = format!("{p}.report.json");
                        std::fs::write(sidecar, serde_json::to_string_pretty(&report)? + "\n")?;
                    }
                }
                OutputFormat::Json => emit_json(cfg, cli, serde_json::to_value(&report)?)?,
            }
            // A point where every seed failed produced no simulation at all.
            let starved = report.rows.iter().any(|r| r.simulation.as_ref().is_some_and(|s| s.seeds_used == 0));
            Ok(if starved { EXIT_SAMPLER } else { EXIT_OK })
        }
    }
}
