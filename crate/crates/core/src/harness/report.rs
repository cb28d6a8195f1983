//! Theory rows, simulation aggregates and their CSV/JSON rendering.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replica::{free_energy_f, free_energy_fbar, solve_fixed_point, ModelParams, SolveReport};
use crate::simulate::{run_seed_dumping, SeedResult};
use crate::stats::{self, MeanSe};

use super::config::{ExperimentConfig, ModelConfig};

/// Reports flag any paired quantity with `|z|` above this.
pub const Z_FLAG: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub alpha: f64,
    pub delta_star: f64,
    /// Noise level of a quadratic potential, NaN otherwise.
    pub delta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub h: f64,
    pub beta: f64,
}

impl ParamPoint {
    fn new(model: &ModelConfig, params: &ModelParams) -> Self {
        ParamPoint {
            alpha: params.alpha,
            delta_star: params.delta_star,
            delta: model.potential.quadratic_delta().unwrap_or(f64::NAN),
            kappa: model.kappa,
            gamma: model.gamma.unwrap_or(f64::NAN),
            h: params.h,
            beta: model.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    pub q: f64,
    pub rho: f64,
    pub r: f64,
    pub rbar: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "Fbar")]
    pub fbar: f64,
    /// `-kappa gamma + F`; NaN without `gamma`.
    pub free_energy_prediction: f64,
    pub solver: SolveReport,
}

pub fn theory(params: &ModelParams, cfg: &ExperimentConfig) -> Result<Theory> {
    let grid = cfg.solver.grid()?;
    let report = solve_fixed_point(params, &grid, &cfg.solver.options())?;
    let s = report.state;
    let f = free_energy_f(params, s.q, s.rho, &grid)?;
    let fbar = free_energy_fbar(params, &s, &grid)?;
    let free_energy_prediction = params.gamma.map_or(f64::NAN, |g| -params.kappa * g + f);
    Ok(Theory { q: s.q, rho: s.rho, r: s.r, rbar: s.rbar, f, fbar, free_energy_prediction, solver: report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

/// Across-seed means and standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAggregate {
    pub n: usize,
    pub seeds_used: usize,
    pub failed: Vec<FailedSeed>,
    pub mse_per_n: MeanSe,
    pub free_energy: MeanSe,
    pub r11: MeanSe,
    pub r12: MeanSe,
    pub q11: MeanSe,
    pub q12: MeanSe,
}

impl SimAggregate {
    pub fn from_results(n: usize, results: &[SeedResult], failed: Vec<FailedSeed>) -> Self {
        let col = |f: &dyn Fn(&SeedResult) -> f64| stats::mean_se(&results.iter().map(f).collect::<Vec<_>>());
        let fe: Vec<f64> = results.iter().filter_map(|r| r.free_energy).collect();
        SimAggregate {
            n,
            seeds_used: results.len(),
            failed,
            mse_per_n: col(&|r| r.mse_per_n),
            free_energy: stats::mean_se(&fe),
            r11: col(&|r| r.overlaps.r11.mean),
            r12: col(&|r| r.overlaps.r12.mean),
            q11: col(&|r| r.overlaps.q11.mean),
            q12: col(&|r| r.overlaps.q12.mean),
        }
    }
}

/// Runs every seed of the sim section on the current rayon pool.
///
/// Sampler-health failures are recorded per seed; any other error aborts.
pub fn run_seeds(params: &ModelParams, cfg: &ExperimentConfig, dump: bool) -> Result<(Vec<SeedResult>, Vec<FailedSeed>)> {
    let sim = cfg.sim.as_ref().ok_or_else(|| Error::Config("sim: section required".into()))?;
    let settings = sim.settings(&params.potential);
    let dir = if dump { sim.dump_samples.as_deref().map(Path::new) } else { None };
    let outcomes: Vec<(u64, Result<SeedResult>)> = sim
        .seed_list()
        .into_par_iter()
        .map(|s| (s, run_seed_dumping(params, &settings, s, dir)))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(r) => ok.push(r),
            Err(e @ Error::SamplerHealth { .. }) => failed.push(FailedSeed { seed, error: e.to_string() }),
            Err(e) => return Err(e),
        }
    }
    Ok((ok, failed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScores {
    pub mse: f64,
    pub free_energy: f64,
    pub r11: f64,
    pub r12: f64,
    pub q11: f64,
    pub q12: f64,
}

impl ZScores {
    /// Pairs `mse ~ q`, `free energy ~ -kappa gamma + F`, `r11 ~ rho`,
    /// `r12 ~ q`, `q11 ~ rbar`, `q12 ~ r`.
    pub fn new(t: &Theory, s: &SimAggregate) -> Self {
        let z = |m: &MeanSe, th: f64| stats::z_score(m.mean, th, m.se);
        ZScores {
            mse: z(&s.mse_per_n, t.q),
            free_energy: z(&s.free_energy, t.free_energy_prediction),
            r11: z(&s.r11, t.rho),
            r12: z(&s.r12, t.q),
            q11: z(&s.q11, t.rbar),
            q12: z(&s.q12, t.r),
        }
    }

    fn all(&self) -> [f64; 6] {
        [self.mse, self.free_energy, self.r11, self.r12, self.q11, self.q12]
    }

    pub fn flagged(&self) -> bool {
        self.all().iter().any(|z| z.abs() > Z_FLAG)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub params: ParamPoint,
    pub theory: Theory,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_scores: Option<ZScores>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// The configuration with all defaults filled in.
    pub config: ExperimentConfig,
    pub z_flag: f64,
    pub rows: Vec<ComparisonRow>,
}

/// One row per parameter point, in grid order.
pub fn comparison(cfg: &ExperimentConfig, with_sim: bool) -> Result<ComparisonReport> {
    let mut rows = Vec::new();
    for model in cfg.points()? {
        let params = model.params()?;
        let theory = theory(&params, cfg)?;
        let (simulation, z_scores) = if with_sim && cfg.sim.is_some() {
            let (results, failed) = run_seeds(&params, cfg, false)?;
            let agg = SimAggregate::from_results(cfg.sim.as_ref().map_or(0, |s| s.n), &results, failed);
            let z = ZScores::new(&theory, &agg);
            (Some(agg), Some(z))
        } else {
            (None, None)
        };
        let flagged = z_scores.as_ref().is_some_and(ZScores::flagged);
        rows.push(ComparisonRow { params: ParamPoint::new(&model, &params), theory, simulation, z_scores, flagged });
    }
    Ok(ComparisonReport { config: cfg.resolved(), z_flag: Z_FLAG, rows })
}

/// Column order of every comparison and sweep CSV.
pub const COMPARISON_COLUMNS: &[&str] = &[
    "alpha", "delta_star", "delta", "kappa", "gamma", "h", "beta",
    "q", "rho", "r", "rbar", "F", "free_energy_prediction",
    "converged", "iterations", "residual", "multistart_spread", "clamp_events",
    "n", "seeds_used", "seeds_failed",
    "mse_mean", "mse_se", "free_energy_mean", "free_energy_se",
    "r11_mean", "r11_se", "r12_mean", "r12_se", "q11_mean", "q11_se", "q12_mean", "q12_se",
    "z_mse", "z_free_energy", "z_r11", "z_r12", "z_q11", "z_q12", "flagged",
];

pub const SEED_COLUMNS: &[&str] = &[
    "seed", "n", "method", "status", "mse_per_n", "free_energy",
    "r11", "r11_se", "r12", "r12_se", "q11", "q11_se", "q12", "q12_se", "acceptance_rate",
];

/// Round-trip formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn push_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

pub fn comparison_csv(report: &ComparisonReport) -> String {
    let mut out = String::new();
    push_row(&mut out, &COMPARISON_COLUMNS.iter().map(|c| c.to_string()).collect::<Vec<_>>());
    for row in &report.rows {
        let p = &row.params;
        let t = &row.theory;
        let f = fmt_f64;
        let mut cells = vec![
            f(p.alpha), f(p.delta_star), f(p.delta), f(p.kappa), f(p.gamma), f(p.h), f(p.beta),
            f(t.q), f(t.rho), f(t.r), f(t.rbar), f(t.f), f(t.free_energy_prediction),
            t.solver.converged.to_string(), t.solver.iterations.to_string(), f(t.solver.residual),
            f(t.solver.multistart_spread), t.solver.clamp_events.to_string(),
        ];
        match &row.simulation {
            Some(s) => {
                cells.extend([s.n.to_string(), s.seeds_used.to_string(), s.failed.len().to_string()]);
                for m in [&s.mse_per_n, &s.free_energy, &s.r11, &s.r12, &s.q11, &s.q12] {
                    cells.extend([f(m.mean), f(m.se)]);
                }
            }
            None => {
                cells.extend(["0".into(), "0".into(), "0".into()]);
                cells.extend(std::iter::repeat_n(f(f64::NAN), 12));
            }
        }
        match &row.z_scores {
            Some(z) => cells.extend(z.all().map(f)),
            None => cells.extend(std::iter::repeat_n(f(f64::NAN), 6)),
        }
        cells.push(row.flagged.to_string());
        push_row(&mut out, &cells);
    }
    out
}

pub fn seed_csv(results: &[SeedResult], failed: &[FailedSeed], n: usize) -> String {
    let mut out = String::new();
    push_row(&mut out, &SEED_COLUMNS.iter().map(|c| c.to_string()).collect::<Vec<_>>());
    let f = fmt_f64;
    for r in results {
        let o = &r.overlaps;
        let method = serde_json::to_value(r.method).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        push_row(
            &mut out,
            &[
                r.seed.to_string(), n.to_string(), method, "ok".into(), f(r.mse_per_n),
                f(r.free_energy.unwrap_or(f64::NAN)),
                f(o.r11.mean), f(o.r11.se), f(o.r12.mean), f(o.r12.se),
                f(o.q11.mean), f(o.q11.se), f(o.q12.mean), f(o.q12.se),
                f(r.acceptance_rate.unwrap_or(f64::NAN)),
            ],
        );
    }
    for s in failed {
        let mut cells = vec![s.seed.to_string(), n.to_string(), "mala".into(), "sampler_health".into()];
        cells.extend(std::iter::repeat_n(f(f64::NAN), 11));
        push_row(&mut out, &cells);
    }
    out
}

/// Comment lines prepended to CSV output.
pub fn csv_preamble(cfg: &ExperimentConfig, timestamp: bool) -> Result<String> {
    let mut out = String::new();
    if timestamp {
        let t = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(out, "# generated_at_unix={t}");
    }
    let _ = writeln!(out, "# config={}", serde_json::to_string(&cfg.resolved())?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.41421356237309503] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn flag_threshold() {
        let z = ZScores { mse: 0.0, free_energy: -3.5, r11: 0.0, r12: 0.0, q11: 0.0, q12: 0.0 };
        assert!(z.flagged());
        let z = ZScores { free_energy: 3.0, ..z };
        assert!(!z.flagged());
        let z = ZScores { free_energy: f64::NAN, ..z };
        assert!(!z.flagged());
    }

    #[test]
    fn theory_row_without_sim() {
        let cfg = ExperimentConfig::from_json(
            r#"{"model": {"alpha": 2, "delta_star": 1, "kappa": 0.5, "gamma": 1,
                "potential": {"kind": "quadratic", "delta": 1.0}}}"#,
        )
        .unwrap();
        let rep = comparison(&cfg, true).unwrap();
        assert_eq!(rep.rows.len(), 1);
        let t = &rep.rows[0].theory;
        assert!((t.q - (2f64.sqrt() - 1.0)).abs() < 1e-9);
        assert!((t.f - t.fbar).abs() < 1e-10);
        let csv = comparison_csv(&rep);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), COMPARISON_COLUMNS.len());
    }
}
