//! The single JSON document that drives every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::quadrature::{QuadratureGrid, DEFAULT_NODES};
use crate::replica::{beta_reparametrize, ModelParams, SolveOptions};
use crate::simulate::{RunSettings, SamplerConfig, SamplerKind, XStarMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    pub delta_star: f64,
    pub kappa: f64,
    /// Limiting `||x*||^2 / N`; sets `h = 2 kappa sqrt(gamma)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Explicit field, for spin-glass runs without a ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Inverse temperature; quadratic potentials only unless 1.
    #[serde(default = "one")]
    pub beta: f64,
    pub potential: Potential,
}

fn one() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn params(&self) -> Result<ModelParams> {
        let base = match (self.gamma, self.h) {
            (Some(gamma), h) => {
                let p = ModelParams::regression(self.alpha, self.delta_star, self.kappa, gamma, self.potential)
                    .map_err(|e| prefix("model", e))?;
                if let Some(h) = h {
                    if (h - p.h).abs() > 1e-12 * p.h.max(1.0) {
                        return Err(Error::Config(format!(
                            "model.h: {h} differs from 2 kappa sqrt(gamma) = {}",
                            p.h
                        )));
                    }
                }
                p
            }
            (None, Some(h)) => ModelParams::with_field(self.alpha, self.delta_star, self.kappa, h, self.potential)
                .map_err(|e| prefix("model", e))?,
            (None, None) => return Err(Error::Config("model: one of gamma or h is required".into())),
        };
        if self.beta == 1.0 {
            Ok(base)
        } else {
            beta_reparametrize(&base, self.beta).map_err(|e| prefix("model.beta", e))
        }
    }
}

fn prefix(path: &str, e: Error) -> Error {
    match e {
        Error::Config(m) | Error::Unsupported(m) | Error::Domain(m) => Error::Config(format!("{path}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub quad_nodes_inner: usize,
    pub quad_nodes_outer: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolveOptions::default();
        SolverConfig {
            damping: o.damping,
            tol: o.tol,
            max_iter: o.max_iter,
            n_starts: o.n_starts,
            quad_nodes_inner: DEFAULT_NODES,
            quad_nodes_outer: DEFAULT_NODES,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        SolveOptions { damping: self.damping, tol: self.tol, max_iter: self.max_iter, init: None, n_starts: self.n_starts }
    }

    pub fn grid(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::new(self.quad_nodes_outer, self.quad_nodes_inner).map_err(|e| prefix("solver", e))
    }
}

/// Seeds as a count (`base .. base + count`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(usize),
    List(Vec<u64>),
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Count(32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    /// Defaults to `exact_gaussian` for quadratic or zero potentials and to
    /// `mala` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<SamplerKind>,
    pub step: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub target_accept: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        SamplerSection { kind: None, step: d.step, burn_in: d.burn_in, samples: d.samples, thin: d.thin, target_accept: d.target_accept }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    #[serde(default)]
    pub seeds: SeedSpec,
    /// First seed when `seeds` is a count; `--seed` overrides it.
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub x_star_mode: XStarMode,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default = "two")]
    pub n_replicas: usize,
    /// Debug: directory for raw MALA chains of the `simulate` command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_samples: Option<String>,
}

fn two() -> usize {
    2
}

impl SimConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            SeedSpec::Count(c) => (0..*c as u64).map(|i| self.seed_base + i).collect(),
            SeedSpec::List(l) => l.clone(),
        }
    }

    pub fn sampler_config(&self, potential: &Potential) -> SamplerConfig {
        let s = self.sampler;
        let kind = self.sampler.kind.unwrap_or(if matches!(potential, Potential::Quadratic { .. } | Potential::Zero) {
            SamplerKind::ExactGaussian
        } else {
            SamplerKind::Mala
        });
        SamplerConfig { kind, step: s.step, burn_in: s.burn_in, samples: s.samples, thin: s.thin, target_accept: s.target_accept }
    }

    pub fn settings(&self, potential: &Potential) -> RunSettings {
        RunSettings { n: self.n, mode: self.x_star_mode, sampler: self.sampler_config(potential), n_replicas: self.n_replicas }
    }
}

/// Scalars a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    DeltaStar,
    Delta,
    Kappa,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param_name: SweepParam,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub format: OutputFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the field path of any structural error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.params()?;
        self.solver.options().validate().map_err(|e| prefix("solver", e))?;
        self.solver.grid()?;
        if let Some(sim) = &self.sim {
            if sim.n == 0 {
                return Err(Error::Config("sim.n: must be >= 1".into()));
            }
            if sim.seed_list().is_empty() {
                return Err(Error::Config("sim.seeds: no seeds".into()));
            }
            let cfg = sim.sampler_config(&self.model.potential);
            cfg.validate().map_err(|e| prefix("sim.sampler", e))?;
            if cfg.kind == SamplerKind::ExactGaussian && !matches!(self.model.potential, Potential::Quadratic { .. } | Potential::Zero) {
                return Err(Error::Config("sim.sampler.kind: exact_gaussian needs a quadratic or zero potential".into()));
            }
            if cfg.kind == SamplerKind::Mala && sim.n_replicas < 2 {
                return Err(Error::Config("sim.n_replicas: overlap estimates need at least 2 replicas".into()));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.grid.is_empty() {
                return Err(Error::Config("sweep.grid: empty grid".into()));
            }
            for &v in &sweep.grid {
                self.model_at(sweep.param_name, v)?.params().map_err(|e| prefix("sweep", e))?;
            }
        }
        Ok(())
    }

    /// Copy of the model section with one swept scalar replaced.
    pub fn model_at(&self, param: SweepParam, value: f64) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        match param {
            SweepParam::Alpha => m.alpha = value,
            SweepParam::DeltaStar => m.delta_star = value,
            SweepParam::Kappa => {
                m.kappa = value;
                if m.gamma.is_some() {
                    m.h = None;
                }
            }
            SweepParam::Gamma => {
                m.gamma = Some(value);
                m.h = None;
            }
            SweepParam::Beta => m.beta = value,
            SweepParam::Delta => match m.potential {
                Potential::Quadratic { .. } => m.potential = Potential::Quadratic { delta: value },
                _ => return Err(Error::Config("sweep.param_name: delta needs a quadratic potential".into())),
            },
        }
        Ok(m)
    }

    /// The model sections of every parameter point, in grid order.
    pub fn points(&self) -> Result<Vec<ModelConfig>> {
        match &self.sweep {
            None => Ok(vec![self.model.clone()]),
            Some(s) => s.grid.iter().map(|&v| self.model_at(s.param_name, v)).collect(),
        }
    }

    /// The configuration with every default made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(sim) = &mut c.sim {
            sim.sampler.kind = Some(sim.sampler_config(&self.model.potential).kind);
        }
        c
    }
}
