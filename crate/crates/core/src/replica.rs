//! Replica-symmetric order parameters `(q, rho, r, rbar)`.
//!
//! The maps `psi: (r, rbar) -> (q, rho)` and `phi: (q, rho) -> (r, rbar)` are
//! iterated with damping until they agree. The fixed point gives the limiting
//! free energy `F(q, rho)` of the spin-glass model and, on the regression side,
//! the limiting mean-square error per coordinate `q` and the limiting free
//! energy `-kappa gamma + F(q, rho)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{Loss, Potential};
use crate::quadrature::{nested_expect, nested_expect_many, QuadratureGrid, ThetaSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Smallest admissible `2 kappa + r - rbar`.
pub const DOMAIN_EPS: f64 = 1e-12;

/// Problem constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Sample ratio `M / N`.
    pub alpha: f64,
    /// Variance of the true Gaussian noise.
    pub delta_star: f64,
    /// Prior (ridge) strength.
    pub kappa: f64,
    /// External field; `2 kappa sqrt(gamma)` on the regression side.
    pub h: f64,
    /// Limiting squared norm per coordinate of the ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub potential: Potential,
}

impl ModelParams {
    /// Spin-glass parameters with an explicit field `h` and no ground truth.
    pub fn with_field(alpha: f64, delta_star: f64, kappa: f64, h: f64, potential: Potential) -> Result<Self> {
        let p = ModelParams { alpha, delta_star, kappa, h, gamma: None, potential };
        p.validate()?;
        Ok(p)
    }

    /// Regression parameters; the field is `h = 2 kappa sqrt(gamma)`.
    pub fn regression(alpha: f64, delta_star: f64, kappa: f64, gamma: f64, potential: Potential) -> Result<Self> {
        let p = ModelParams {
            alpha,
            delta_star,
            kappa,
            h: 2.0 * kappa * gamma.max(0.0).sqrt(),
            gamma: Some(gamma),
            potential,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.delta_star, self.kappa, self.h].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config(format!("model parameters must be finite: {self:?}")));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if !(self.delta_star >= 0.0) {
            return Err(Error::Config(format!("delta_star must be >= 0, got {}", self.delta_star)));
        }
        if let Some(gamma) = self.gamma {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::Config(format!("gamma must be >= 0, got {gamma}")));
            }
            let field = 2.0 * self.kappa * gamma.sqrt();
            if (self.h - field).abs() > 1e-12 * field.max(1.0) {
                return Err(Error::Config(format!(
                    "h = {} is inconsistent with 2 kappa sqrt(gamma) = {field}",
                    self.h
                )));
            }
        }
        self.potential.validate()
    }

    /// Replaces `delta` by `delta / beta` and `kappa` by `beta kappa`, the
    /// quadratic model at inverse temperature `beta`.
    ///
    /// `gamma` is kept, so the regression-side field becomes
    /// `2 beta kappa sqrt(gamma) = beta h`.
    pub fn with_inverse_temperature(&self, beta: f64) -> Result<Self> {
        beta_reparametrize(self, beta)
    }
}

/// Order parameters of the replica-symmetric solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapState {
    pub q: f64,
    pub rho: f64,
    pub r: f64,
    pub rbar: f64,
}

impl OverlapState {
    pub fn as_array(&self) -> [f64; 4] {
        [self.q, self.rho, self.r, self.rbar]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        OverlapState { q: a[0], rho: a[1], r: a[2], rbar: a[3] }
    }

    pub fn sup_distance(&self, other: &OverlapState) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks `0 <= q < rho` and `2 kappa + r - rbar > 0`.
    pub fn validate(&self, kappa: f64) -> Result<()> {
        if !(self.q >= 0.0 && self.q < self.rho) {
            return Err(Error::Domain(format!("overlaps need 0 <= q < rho, got q={}, rho={}", self.q, self.rho)));
        }
        if !(2.0 * kappa + self.r - self.rbar > 0.0) {
            return Err(Error::Domain(format!(
                "overlaps need 2 kappa + r - rbar > 0, got {}",
                2.0 * kappa + self.r - self.rbar
            )));
        }
        Ok(())
    }
}

/// `(q, rho) = (psi(r, rbar), psi_bar(r, rbar))`.
pub fn map_psi(params: &ModelParams, r: f64, rbar: f64) -> Result<(f64, f64)> {
    let denom = 2.0 * params.kappa + r - rbar;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!("psi needs 2 kappa + r - rbar > 0, got {denom}")));
    }
    let q = (r + params.h * params.h) / (denom * denom);
    Ok((q, q + 1.0 / denom))
}

/// `(r, rbar) = (phi(q, rho), phi_bar(q, rho))`.
pub fn map_phi(params: &ModelParams, q: f64, rho: f64, grid: &QuadratureGrid) -> Result<(f64, f64)> {
    check_q_rho(q, rho)?;
    let theta = ThetaSpec::new(params.delta_star, q, rho)?;
    let [r, rbar] = nested_expect_many(grid, theta, &params.potential, |m| [m.mean_du * m.mean_du, m.mean_d2])?;
    Ok((params.alpha * r, params.alpha * rbar))
}

fn check_q_rho(q: f64, rho: f64) -> Result<()> {
    if !(q >= 0.0 && q < rho) {
        return Err(Error::Domain(format!("need 0 <= q < rho, got q={q}, rho={rho}")));
    }
    Ok(())
}

/// `alpha E_z ln E_xi exp u(theta)`.
fn energy_term<L: Loss + ?Sized>(params: &ModelParams, loss: &L, q: f64, rho: f64, grid: &QuadratureGrid) -> Result<f64> {
    let theta = ThetaSpec::new(params.delta_star, q, rho)?;
    Ok(params.alpha * nested_expect(grid, theta, loss, |m| m.ln_e0)?)
}

/// `F(q, rho)`.
pub fn free_energy_f(params: &ModelParams, q: f64, rho: f64, grid: &QuadratureGrid) -> Result<f64> {
    check_q_rho(q, rho)?;
    let a = rho - q;
    let h2 = params.h * params.h;
    let entropy = 0.5 * (a.ln() + h2 * a + rho / a - 2.0 * params.kappa * rho + LN_2PI);
    Ok(energy_term(params, &params.potential, q, rho, grid)? + entropy)
}

/// `Fbar(q, rho, r, rbar)`.
pub fn free_energy_fbar(params: &ModelParams, state: &OverlapState, grid: &QuadratureGrid) -> Result<f64> {
    state.validate(params.kappa)?;
    let OverlapState { q, rho, r, rbar } = *state;
    let denom = 2.0 * params.kappa + r - rbar;
    let h2 = params.h * params.h;
    let entropy = 0.5 * ((r + h2) / denom - denom.ln() + r * q - rbar * rho + LN_2PI);
    Ok(energy_term(params, &params.potential, q, rho, grid)? + entropy)
}

/// Damped iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Mixing weight of the new iterate, in `(0, 1]`.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting state; the `t = 0` state of [`reference_endpoints`] if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<OverlapState>,
    pub n_starts: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { damping: 0.5, tol: 1e-10, max_iter: 10_000, init: None, n_starts: 4 }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must be in (0, 1], got {}", self.damping)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Config("n_starts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub state: OverlapState,
    pub iterations: usize,
    /// Sup-norm of `T(x) - x` at the last iterate, `T = psi . phi`.
    pub residual: f64,
    pub converged: bool,
    /// Largest pairwise sup-distance between the solutions of all starts.
    pub multistart_spread: f64,
    /// Number of times `rbar` had to be clamped to keep `2 kappa + r - rbar > 0`.
    pub clamp_events: usize,
    /// `multistart_spread > 1e-6`.
    pub uniqueness_warning: bool,
    /// Starts (including the primary one) that reached the tolerance.
    pub starts_converged: usize,
}

const SPREAD_WARNING: f64 = 1e-6;

struct RunOutcome {
    state: OverlapState,
    iterations: usize,
    residual: f64,
    converged: bool,
    clamp_events: usize,
}

/// One application of `T = psi . phi` with the domain projection.
fn apply_map(params: &ModelParams, x: &OverlapState, grid: &QuadratureGrid, clamps: &mut usize) -> Result<OverlapState> {
    let (r, mut rbar) = map_phi(params, x.q, x.rho, grid)?;
    if 2.0 * params.kappa + r - rbar <= DOMAIN_EPS {
        rbar = 2.0 * params.kappa + r - DOMAIN_EPS;
        *clamps += 1;
    }
    let (q, rho) = map_psi(params, r, rbar)?;
    Ok(OverlapState { q, rho, r, rbar })
}

fn run_from(params: &ModelParams, grid: &QuadratureGrid, opts: &SolveOptions, init: OverlapState) -> Result<RunOutcome> {
    check_q_rho(init.q, init.rho)?;
    let mut x = init;
    let mut clamp_events = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let tx = apply_map(params, &x, grid, &mut clamp_events)?;
        residual = tx.sup_distance(&x);
        if !residual.is_finite() {
            return Err(Error::Numerical(format!("fixed-point iterate became non-finite at iteration {it}")));
        }
        if residual <= opts.tol {
            // Return the image, which satisfies psi exactly.
            return Ok(RunOutcome { state: tx, iterations: it, residual, converged: true, clamp_events });
        }
        let d = opts.damping;
        x = OverlapState::from_array(std::array::from_fn(|i| (1.0 - d) * x.as_array()[i] + d * tx.as_array()[i]));
    }
    Ok(RunOutcome { state: x, iterations: opts.max_iter, residual, converged: false, clamp_events })
}

/// Deterministic multiplicative perturbations of `q` and `rho - q` by factors
/// in `[0.5, 2]`.
fn perturbed_starts(init: OverlapState, n_starts: usize) -> Vec<OverlapState> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_0ff1);
    let mut starts = vec![init];
    for _ in 1..n_starts {
        let fq = 2f64.powf(rng.random_range(-1.0..=1.0));
        let fa = 2f64.powf(rng.random_range(-1.0..=1.0));
        let fr = 2f64.powf(rng.random_range(-1.0..=1.0));
        let q = init.q * fq;
        let rho = q + (init.rho - init.q) * fa;
        starts.push(OverlapState { q, rho, r: init.r * fr, rbar: init.rbar * fr });
    }
    starts
}

pub fn solve_fixed_point(params: &ModelParams, grid: &QuadratureGrid, opts: &SolveOptions) -> Result<SolveReport> {
    params.validate()?;
    opts.validate()?;
    let init = opts.init.unwrap_or_else(|| reference_endpoints(params).state0);
    let outcomes = perturbed_starts(init, opts.n_starts)
        .into_iter()
        .map(|start| run_from(params, grid, opts, start))
        .collect::<Result<Vec<_>>>()?;

    let mut spread = 0.0_f64;
    for i in 0..outcomes.len() {
        for j in i + 1..outcomes.len() {
            spread = spread.max(outcomes[i].state.sup_distance(&outcomes[j].state));
        }
    }
    let starts_converged = outcomes.iter().filter(|o| o.converged).count();
    let primary = &outcomes[0];
    Ok(SolveReport {
        state: primary.state,
        iterations: primary.iterations,
        residual: primary.residual,
        converged: primary.converged,
        multistart_spread: spread,
        clamp_events: primary.clamp_events,
        uniqueness_warning: spread > SPREAD_WARNING,
        starts_converged,
    })
}

/// Unique solution for `u(s) = -s^2 / (2 delta)`.
pub fn closed_form_quadratic(params: &ModelParams) -> Result<OverlapState> {
    let delta = params
        .potential
        .quadratic_delta()
        .ok_or_else(|| Error::Unsupported(format!("closed form needs a quadratic potential, got {}", params.potential.name())))?;
    let ModelParams { alpha, delta_star, kappa, h, .. } = *params;
    let b = 2.0 * kappa * delta + alpha - 1.0;
    let c = ((b * b + 8.0 * kappa * delta).sqrt() - b) / (4.0 * kappa);
    let dc = delta + c;
    let denom = dc * dc - alpha * c * c;
    if !(denom > 0.0) {
        return Err(Error::Numerical(format!("closed-form denominator (delta + c)^2 - alpha c^2 = {denom} is not positive")));
    }
    let q = c * c * (h * h * dc * dc + delta_star * alpha) / denom;
    let rho = q + c;
    let r = alpha * (delta_star + q) / (dc * dc);
    let rbar = r - alpha / dc;
    Ok(OverlapState { q, rho, r, rbar })
}

/// Regression-side limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionPrediction {
    /// Limit of `||x_hat - x*||^2 / N`.
    pub mse_per_n: f64,
    /// Limit of `(1/N) ln Z`, `-kappa gamma + F(q, rho)`.
    pub free_energy: f64,
    pub state: OverlapState,
    pub report: SolveReport,
}

pub fn predict_regression(params: &ModelParams, grid: &QuadratureGrid, opts: &SolveOptions) -> Result<RegressionPrediction> {
    let gamma = params
        .gamma
        .ok_or_else(|| Error::Config("regression prediction needs gamma".into()))?;
    let report = solve_fixed_point(params, grid, opts)?;
    let state = report.state;
    let f = free_energy_f(params, state.q, state.rho, grid)?;
    Ok(RegressionPrediction { mse_per_n: state.q, free_energy: -params.kappa * gamma + f, state, report })
}

/// `delta -> delta / beta`, `kappa -> beta kappa`, `h -> beta h`.
pub fn beta_reparametrize(params: &ModelParams, beta: f64) -> Result<ModelParams> {
    let delta = params
        .potential
        .quadratic_delta()
        .ok_or_else(|| Error::Unsupported("inverse-temperature reparametrization needs a quadratic potential".into()))?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be > 0, got {beta}")));
    }
    if beta == 1.0 {
        return Ok(*params);
    }
    let kappa = beta * params.kappa;
    let h = match params.gamma {
        Some(gamma) => 2.0 * kappa * gamma.sqrt(),
        None => beta * params.h,
    };
    let out = ModelParams { kappa, h, potential: Potential::Quadratic { delta: delta / beta }, ..*params };
    out.validate()?;
    Ok(out)
}

/// Values at the start of the interpolation path, where the data term is
/// switched off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEndpoints {
    /// `alpha u(0) + h^2 / (4 kappa) + ln(pi / kappa) / 2`.
    pub f0: f64,
    /// `psi(0, 0)` with `r = rbar = 0`.
    pub state0: OverlapState,
}

pub fn reference_endpoints(params: &ModelParams) -> ReferenceEndpoints {
    let ModelParams { alpha, kappa, h, .. } = *params;
    let u0 = params.potential.value(0.0).u;
    let q0 = h * h / (4.0 * kappa * kappa);
    ReferenceEndpoints {
        f0: alpha * u0 + h * h / (4.0 * kappa) + 0.5 * (PI / kappa).ln(),
        state0: OverlapState { q: q0, rho: 1.0 / (2.0 * kappa) + q0, r: 0.0, rbar: 0.0 },
    }
}
