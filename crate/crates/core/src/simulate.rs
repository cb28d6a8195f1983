//! Finite-N Monte Carlo for the regression model
//! `y = G_bar x* + z`, `G_bar = G / sqrt(N)`, `z ~ N(0, delta_star)`.
//!
//! The posterior `exp(sum_k u((G_bar x)_k - y_k) - kappa ||x||^2)` is handled
//! exactly when `u` is quadratic (or zero) and by MALA otherwise. Overlap
//! estimators use `sigma = x - x*` and evaluate `u'`, `u''` at the residuals
//! `(G_bar x)_k - y_k`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{Loss, Potential};
use crate::replica::ModelParams;
use crate::stats::{self, MeanSe};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Minimum post-burn-in acceptance rate before a run is declared unhealthy.
pub const MIN_ACCEPTANCE: f64 = 0.05;

/// Construction of the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum XStarMode {
    /// `x* = sqrt(gamma) 1`, so `||x*||^2 / N = gamma` exactly.
    #[default]
    DeterministicNorm,
    /// `x*_i ~ N(0, gamma)` iid.
    Gaussian,
}

/// Labelled random streams derived from one root seed. Each label maps to a
/// distinct ChaCha stream, so adding chains never perturbs the instance.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Design,
    Noise,
    XStar,
    StDesign,
    StNoise,
    Chain(u32),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Design => 1,
            Stream::Noise => 2,
            Stream::XStar => 3,
            Stream::StDesign => 4,
            Stream::StNoise => 5,
            Stream::Chain(i) => 1_000 + i as u64,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

fn normal_vector(rng: &mut impl Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn design_matrix(rng: &mut impl Rng, m: usize, n: usize) -> DMatrix<f64> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(m, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// One realization of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationInstance {
    pub n: usize,
    pub m: usize,
    pub g_bar: DMatrix<f64>,
    pub z: DVector<f64>,
    pub x_star: DVector<f64>,
    pub y: DVector<f64>,
    pub seed: u64,
    pub mode: XStarMode,
}

impl SimulationInstance {
    /// `||x*||^2 / N`.
    pub fn gamma_n(&self) -> f64 {
        self.x_star.norm_squared() / self.n as f64
    }

    /// Residuals `G_bar x - y`.
    pub fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.g_bar * x - &self.y
    }
}

pub fn generate_instance(params: &ModelParams, n: usize, seed: u64, mode: XStarMode) -> Result<SimulationInstance> {
    params.validate()?;
    let gamma = params
        .gamma
        .ok_or_else(|| Error::Config("simulation needs gamma for the ground truth".into()))?;
    if n == 0 {
        return Err(Error::Config("dimension n must be >= 1".into()));
    }
    let m = (params.alpha * n as f64).floor() as usize;
    if m == 0 {
        return Err(Error::Config(format!("floor(alpha n) = 0 for alpha={}, n={n}", params.alpha)));
    }
    let g_bar = design_matrix(&mut stream_rng(seed, Stream::Design), m, n);
    let z = normal_vector(&mut stream_rng(seed, Stream::Noise), m, params.delta_star.sqrt());
    let x_star = match mode {
        XStarMode::DeterministicNorm => DVector::from_element(n, gamma.sqrt()),
        XStarMode::Gaussian => normal_vector(&mut stream_rng(seed, Stream::XStar), n, gamma.sqrt()),
    };
    let y = &g_bar * &x_star + &z;
    Ok(SimulationInstance { n, m, g_bar, z, x_star, y, seed, mode })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMethod {
    ExactGaussian,
    Mala,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub x_hat: DVector<f64>,
    /// `||x_hat - x*||^2 / N`.
    pub mse_per_n: f64,
    /// `(1/N) ln Z`; only available for the exact Gaussian posterior.
    pub free_energy: Option<f64>,
    pub method: PosteriorMethod,
}

enum Precision {
    /// `P = K / delta` with `K = G_bar^T G_bar + 2 kappa delta I = L L^T`.
    Quadratic { delta: f64, l: DMatrix<f64> },
    /// `P = 2 kappa I`.
    Prior,
}

/// Exact Gaussian posterior for a quadratic or zero potential.
pub struct GaussianPosterior {
    precision: Precision,
    kappa: f64,
    x_hat: DVector<f64>,
    ln_z: f64,
    n: usize,
}

impl GaussianPosterior {
    pub fn new(instance: &SimulationInstance, potential: &Potential, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be > 0, got {kappa}")));
        }
        let n = instance.n;
        match *potential {
            Potential::Quadratic { delta } => {
                potential.validate()?;
                // Ridge normal equations: (G^T G + 2 kappa delta I) x = G^T y.
                let ridge = 2.0 * kappa * delta;
                let mut k = instance.g_bar.tr_mul(&instance.g_bar);
                for i in 0..n {
                    k[(i, i)] += ridge;
                }
                let chol = Cholesky::new(k)
                    .ok_or_else(|| Error::Numerical("Cholesky factorization of the posterior precision failed".into()))?;
                let gty = instance.g_bar.tr_mul(&instance.y);
                let x_hat = chol.solve(&gty);
                let ln_det_k: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let ln_det_p = ln_det_k - n as f64 * delta.ln();
                let quad = x_hat.dot(&gty) / delta;
                let ln_z = -instance.y.norm_squared() / (2.0 * delta) + 0.5 * quad + 0.5 * n as f64 * LN_2PI - 0.5 * ln_det_p;
                Ok(GaussianPosterior { precision: Precision::Quadratic { delta, l: chol.l() }, kappa, x_hat, ln_z, n })
            }
            Potential::Zero => {
                let nf = n as f64;
                let ln_z = 0.5 * nf * LN_2PI - 0.5 * nf * (2.0 * kappa).ln();
                Ok(GaussianPosterior { precision: Precision::Prior, kappa, x_hat: DVector::zeros(n), ln_z, n })
            }
            _ => Err(Error::Unsupported(format!(
                "exact posterior needs a quadratic or zero potential, got {}",
                potential.name()
            ))),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.x_hat
    }

    /// `(1/N) ln Z`.
    pub fn free_energy(&self) -> f64 {
        self.ln_z / self.n as f64
    }

    pub fn summary(&self, instance: &SimulationInstance) -> PosteriorSummary {
        PosteriorSummary {
            x_hat: self.x_hat.clone(),
            mse_per_n: (&self.x_hat - &instance.x_star).norm_squared() / self.n as f64,
            free_energy: Some(self.free_energy()),
            method: PosteriorMethod::ExactGaussian,
        }
    }

    /// One exact draw `x_hat + P^{-1/2} xi`.
    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let xi = normal_vector(rng, self.n, 1.0);
        match &self.precision {
            Precision::Quadratic { delta, l } => {
                let v = l.tr_solve_lower_triangular(&xi).expect("triangular factor is non-singular");
                &self.x_hat + v * delta.sqrt()
            }
            Precision::Prior => xi / (2.0 * self.kappa).sqrt(),
        }
    }

    /// Gibbs averages of the four overlaps in closed form, i.e. the limit of
    /// infinitely many replicas.
    pub fn gibbs_overlaps(&self, instance: &SimulationInstance) -> OverlapEstimates {
        let nf = self.n as f64;
        let w = &self.x_hat - &instance.x_star;
        let r12 = w.norm_squared() / nf;
        let (trace_cov, q11, q12) = match &self.precision {
            Precision::Quadratic { delta, l } => {
                let linv_gt = l
                    .solve_lower_triangular(&instance.g_bar.transpose())
                    .expect("triangular factor is non-singular");
                let mut identity = DMatrix::<f64>::identity(self.n, self.n);
                l.solve_lower_triangular_mut(&mut identity);
                let trace_cov = delta * identity.norm_squared();
                let mean_res = instance.residuals(&self.x_hat);
                let mut q11 = 0.0;
                let mut q12 = 0.0;
                for k in 0..instance.m {
                    let var_k = delta * linv_gt.column(k).norm_squared();
                    let s = mean_res[k];
                    q12 += (s / delta).powi(2);
                    q11 += (s * s + var_k) / (delta * delta) - 1.0 / delta;
                }
                (trace_cov, q11 / nf, q12 / nf)
            }
            Precision::Prior => (nf / (2.0 * self.kappa), 0.0, 0.0),
        };
        let exact = |mean| MeanSe { mean, se: 0.0, count: 0 };
        OverlapEstimates {
            r11: exact(r12 + trace_cov / nf),
            r12: exact(r12),
            q11: exact(q11),
            q12: exact(q12),
            n_replicas: 0,
            centered: true,
        }
    }
}

pub fn exact_posterior(instance: &SimulationInstance, potential: &Potential, kappa: f64) -> Result<PosteriorSummary> {
    Ok(GaussianPosterior::new(instance, potential, kappa)?.summary(instance))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    ExactGaussian,
    Mala,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Initial MALA step size; adapted during burn-in.
    pub step: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    /// Acceptance target used during burn-in only.
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { kind: SamplerKind::Mala, step: 0.1, burn_in: 5_000, samples: 20_000, thin: 1, target_accept: 0.57 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("sampler step must be > 0, got {}", self.step)));
        }
        if self.samples == 0 || self.thin == 0 {
            return Err(Error::Config("sampler samples and thin must be >= 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target_accept must be in (0, 1), got {}", self.target_accept)));
        }
        Ok(())
    }
}

/// Draws of one chain, stored row-major (one row per kept iteration).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub dim: usize,
    pub rows: Vec<f64>,
}

impl ChainSamples {
    fn with_capacity(dim: usize, len: usize) -> Self {
        ChainSamples { dim, rows: Vec::with_capacity(dim * len) }
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t * self.dim..(t + 1) * self.dim]
    }

    /// Little-endian f64 columns, one row per iteration, no header.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for v in &self.rows {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Replica chains targeting the same posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub chains: Vec<ChainSamples>,
    /// Post-burn-in acceptance rate averaged over chains; 1 for exact draws.
    pub acceptance_rate: f64,
    /// Frozen step size of each chain; empty for exact draws.
    pub steps: Vec<f64>,
    pub method: PosteriorMethod,
}

impl SampleSet {
    /// Per-coordinate posterior mean with batch-means standard errors pooled
    /// over chains.
    pub fn posterior_mean(&self) -> (DVector<f64>, DVector<f64>) {
        let dim = self.chains[0].dim;
        let c = self.chains.len() as f64;
        let mut mean = DVector::zeros(dim);
        let mut se = DVector::zeros(dim);
        for chain in &self.chains {
            let len = chain.len();
            let mut column = vec![0.0; len];
            for i in 0..dim {
                for (t, slot) in column.iter_mut().enumerate() {
                    *slot = chain.rows[t * dim + i];
                }
                let s = stats::batch_means(&column);
                mean[i] += s.mean / c;
                se[i] += s.se * s.se / (c * c);
            }
        }
        (mean, se.map(f64::sqrt))
    }
}

struct LogTarget<'a, L: Loss + ?Sized> {
    instance: &'a SimulationInstance,
    loss: &'a L,
    kappa: f64,
    residual: DVector<f64>,
    slope: DVector<f64>,
}

impl<'a, L: Loss + ?Sized> LogTarget<'a, L> {
    fn new(instance: &'a SimulationInstance, loss: &'a L, kappa: f64) -> Self {
        LogTarget { instance, loss, kappa, residual: DVector::zeros(instance.m), slope: DVector::zeros(instance.m) }
    }

    /// Writes the gradient into `grad` and returns the log density.
    fn eval(&mut self, x: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        self.instance.g_bar.mul_to(x, &mut self.residual);
        self.residual -= &self.instance.y;
        let mut log_density = -self.kappa * x.norm_squared();
        for k in 0..self.instance.m {
            let v = self.loss.value(self.residual[k]);
            log_density += v.u;
            self.slope[k] = v.du;
        }
        self.instance.g_bar.tr_mul_to(&self.slope, grad);
        grad.axpy(-2.0 * self.kappa, x, 1.0);
        log_density
    }
}

fn mala_chain<L: Loss + ?Sized>(
    instance: &SimulationInstance,
    loss: &L,
    kappa: f64,
    cfg: &SamplerConfig,
    rng: &mut ChaCha20Rng,
) -> (ChainSamples, f64, f64) {
    let n = instance.n;
    let mut target = LogTarget::new(instance, loss, kappa);
    let mut x = DVector::zeros(n);
    let mut grad = DVector::zeros(n);
    let mut logp = target.eval(&x, &mut grad);
    let mut prop = DVector::zeros(n);
    let mut prop_grad = DVector::zeros(n);
    let mut log_step = cfg.step.ln();
    let kept = cfg.samples;
    let mut out = ChainSamples::with_capacity(n, kept);
    let mut accepted = 0usize;
    let total = cfg.burn_in + kept * cfg.thin;

    for it in 0..total {
        let step = log_step.exp();
        let half_sq = 0.5 * step * step;
        for i in 0..n {
            prop[i] = x[i] + half_sq * grad[i] + step * rng.sample::<f64, _>(StandardNormal);
        }
        let prop_logp = target.eval(&prop, &mut prop_grad);
        // log q(x | x') - log q(x' | x) for the Langevin proposal.
        let mut fwd = 0.0;
        let mut rev = 0.0;
        for i in 0..n {
            let f = prop[i] - x[i] - half_sq * grad[i];
            let r = x[i] - prop[i] - half_sq * prop_grad[i];
            fwd += f * f;
            rev += r * r;
        }
        let log_ratio = prop_logp - logp + (fwd - rev) / (2.0 * step * step);
        let accept_prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
        let accept = rng.random::<f64>() < accept_prob;
        if accept {
            std::mem::swap(&mut x, &mut prop);
            std::mem::swap(&mut grad, &mut prop_grad);
            logp = prop_logp;
        }
        if it < cfg.burn_in {
            let gain = 1.0 / ((it + 1) as f64).powf(0.6);
            log_step += gain * (accept_prob - cfg.target_accept);
        } else {
            if accept {
                accepted += 1;
            }
            if (it - cfg.burn_in + 1).is_multiple_of(cfg.thin) {
                out.rows.extend(x.iter());
            }
        }
    }
    let post = (total - cfg.burn_in) as f64;
    (out, accepted as f64 / post, log_step.exp())
}

/// `n_replicas` independent MALA chains on the posterior of `instance`.
///
/// Chain `i` draws from stream `Chain(i)` of `seed`.
pub fn mala_sample<L: Loss + ?Sized>(
    instance: &SimulationInstance,
    loss: &L,
    kappa: f64,
    cfg: &SamplerConfig,
    n_replicas: usize,
    seed: u64,
) -> Result<SampleSet> {
    cfg.validate()?;
    if n_replicas == 0 {
        return Err(Error::Config("need at least one replica".into()));
    }
    if !(kappa > 0.0) {
        return Err(Error::Config(format!("kappa must be > 0, got {kappa}")));
    }
    let report = crate::potential::check_growth(loss, 10.0, 201)?;
    if !report.ok() {
        return Err(Error::Config("MALA target needs a concave, non-positive potential".into()));
    }
    let mut chains = Vec::with_capacity(n_replicas);
    let mut steps = Vec::with_capacity(n_replicas);
    let mut acc = 0.0;
    for i in 0..n_replicas {
        let mut rng = stream_rng(seed, Stream::Chain(i as u32));
        let (chain, rate, step) = mala_chain(instance, loss, kappa, cfg, &mut rng);
        chains.push(chain);
        steps.push(step);
        acc += rate / n_replicas as f64;
    }
    if acc < MIN_ACCEPTANCE {
        return Err(Error::SamplerHealth { acceptance: acc, threshold: MIN_ACCEPTANCE });
    }
    Ok(SampleSet { chains, acceptance_rate: acc, steps, method: PosteriorMethod::Mala })
}

/// Independent exact draws from a Gaussian posterior, one "chain" per replica.
pub fn exact_sample(posterior: &GaussianPosterior, n_replicas: usize, samples: usize, seed: u64) -> SampleSet {
    let chains = (0..n_replicas)
        .map(|i| {
            let mut rng = stream_rng(seed, Stream::Chain(i as u32));
            let mut chain = ChainSamples::with_capacity(posterior.n, samples);
            for _ in 0..samples {
                chain.rows.extend(posterior.sample(&mut rng).iter());
            }
            chain
        })
        .collect();
    SampleSet { chains, acceptance_rate: 1.0, steps: Vec::new(), method: PosteriorMethod::ExactGaussian }
}

/// Estimates of the overlaps with their standard errors.
///
/// `n_replicas == 0` marks exact Gibbs averages with zero standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapEstimates {
    /// `||sigma^1||^2 / N`.
    pub r11: MeanSe,
    /// `sigma^1 . sigma^2 / N`.
    pub r12: MeanSe,
    /// `(1/N) sum_k (A_k^2 + B_k)`.
    pub q11: MeanSe,
    /// `(1/N) <A^1, A^2>`.
    pub q12: MeanSe,
    pub n_replicas: usize,
    pub centered: bool,
}

/// Overlaps from replica chains. Pair quantities average over all unordered
/// replica pairs at equal iteration index; standard errors are batch means
/// over iterations.
#[allow(clippy::needless_range_loop)]
pub fn estimate_overlaps<L: Loss + ?Sized>(
    instance: &SimulationInstance,
    samples: &SampleSet,
    loss: &L,
    centered: bool,
) -> Result<OverlapEstimates> {
    let reps = samples.chains.len();
    if reps < 2 {
        return Err(Error::Config(format!("pair overlaps need at least 2 replicas, got {reps}")));
    }
    let len = samples.chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if len == 0 {
        return Err(Error::Config("empty sample set".into()));
    }
    let n = instance.n;
    let nf = n as f64;
    let pairs = (reps * (reps - 1) / 2) as f64;
    let mut series = [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let mut sigma: Vec<DVector<f64>> = vec![DVector::zeros(n); reps];
    let mut slope: Vec<DVector<f64>> = vec![DVector::zeros(instance.m); reps];
    let mut residual = DVector::zeros(instance.m);
    for t in 0..len {
        let mut r11 = 0.0;
        let mut q11 = 0.0;
        for l in 0..reps {
            let x = DVector::from_column_slice(samples.chains[l].row(t));
            instance.g_bar.mul_to(&x, &mut residual);
            residual -= &instance.y;
            let mut self_q = 0.0;
            for k in 0..instance.m {
                let v = loss.value(residual[k]);
                slope[l][k] = v.du;
                self_q += v.du * v.du + v.d2u;
            }
            sigma[l] = if centered { x - &instance.x_star } else { x };
            r11 += sigma[l].norm_squared() / nf;
            q11 += self_q / nf;
        }
        let mut r12 = 0.0;
        let mut q12 = 0.0;
        for a in 0..reps {
            for b in a + 1..reps {
                r12 += sigma[a].dot(&sigma[b]) / nf;
                q12 += slope[a].dot(&slope[b]) / nf;
            }
        }
        series[0][t] = r11 / reps as f64;
        series[1][t] = r12 / pairs;
        series[2][t] = q11 / reps as f64;
        series[3][t] = q12 / pairs;
    }
    let summarize = |s: &[f64]| match samples.method {
        PosteriorMethod::ExactGaussian => stats::mean_se(s),
        PosteriorMethod::Mala => stats::batch_means(s),
    };
    Ok(OverlapEstimates {
        r11: summarize(&series[0]),
        r12: summarize(&series[1]),
        q11: summarize(&series[2]),
        q12: summarize(&series[3]),
        n_replicas: reps,
        centered,
    })
}

/// Both sides of `E ||x_hat - x*||^2 = E ||<sigma>||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StEquivalence {
    /// `||x_hat - x*||^2 / N` on the regression instance.
    pub lhs: f64,
    /// `||<sigma>||^2 / N` for the spin-glass Hamiltonian on an independent
    /// design and noise with field `h_N = 2 kappa sqrt(||x*||^2 / N)`.
    pub rhs: f64,
    pub h_n: f64,
}

/// The two sides agree in distribution over seeds, not seed by seed.
pub fn st_model_equivalence(instance: &SimulationInstance, params: &ModelParams) -> Result<StEquivalence> {
    let delta = params
        .potential
        .quadratic_delta()
        .ok_or_else(|| Error::Unsupported("spin-glass equivalence check needs a quadratic potential".into()))?;
    let kappa = params.kappa;
    let lhs = exact_posterior(instance, &params.potential, kappa)?.mse_per_n;

    let (n, m) = (instance.n, instance.m);
    let g = design_matrix(&mut stream_rng(instance.seed, Stream::StDesign), m, n);
    let z = normal_vector(&mut stream_rng(instance.seed, Stream::StNoise), m, params.delta_star.sqrt());
    let h_n = 2.0 * kappa * instance.gamma_n().sqrt();
    // Mean of exp(-||G s + z||^2 / (2 delta) - h_N 1.s - kappa ||s||^2):
    // (G^T G + 2 kappa delta I) <s> = -(G^T z + delta h_N 1).
    let mut k = g.tr_mul(&g);
    for i in 0..n {
        k[(i, i)] += 2.0 * kappa * delta;
    }
    let chol = Cholesky::new(k).ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))?;
    let rhs_vec = -(g.tr_mul(&z) + DVector::from_element(n, delta * h_n));
    let mean = chol.solve(&rhs_vec);
    Ok(StEquivalence { lhs, rhs: mean.norm_squared() / n as f64, h_n })
}

/// Everything measured on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub mse_per_n: f64,
    pub free_energy: Option<f64>,
    pub overlaps: OverlapEstimates,
    pub acceptance_rate: Option<f64>,
    pub method: PosteriorMethod,
}

/// Simulation settings shared by all seeds of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub n: usize,
    pub mode: XStarMode,
    pub sampler: SamplerConfig,
    pub n_replicas: usize,
}

/// Generates the instance for `seed` and measures it.
///
/// Exact Gaussian runs report Gibbs averages in closed form; MALA runs
/// estimate the posterior mean and the overlaps from `n_replicas` chains.
pub fn run_seed(params: &ModelParams, settings: &RunSettings, seed: u64) -> Result<SeedResult> {
    run_seed_dumping(params, settings, seed, None)
}

/// As [`run_seed`], also writing each MALA chain to
/// `dump_dir/seed<seed>_chain<i>.bin` when a directory is given.
pub fn run_seed_dumping(params: &ModelParams, settings: &RunSettings, seed: u64, dump_dir: Option<&Path>) -> Result<SeedResult> {
    let instance = generate_instance(params, settings.n, seed, settings.mode)?;
    match settings.sampler.kind {
        SamplerKind::ExactGaussian => {
            let post = GaussianPosterior::new(&instance, &params.potential, params.kappa)?;
            let summary = post.summary(&instance);
            Ok(SeedResult {
                seed,
                mse_per_n: summary.mse_per_n,
                free_energy: summary.free_energy,
                overlaps: post.gibbs_overlaps(&instance),
                acceptance_rate: None,
                method: PosteriorMethod::ExactGaussian,
            })
        }
        SamplerKind::Mala => {
            let set = mala_sample(&instance, &params.potential, params.kappa, &settings.sampler, settings.n_replicas, seed)?;
            if let Some(dir) = dump_dir {
                std::fs::create_dir_all(dir)?;
                for (i, chain) in set.chains.iter().enumerate() {
                    chain.write_binary(&dir.join(format!("seed{seed}_chain{i}.bin")))?;
                }
            }
            let (x_hat, _) = set.posterior_mean();
            let overlaps = estimate_overlaps(&instance, &set, &params.potential, true)?;
            Ok(SeedResult {
                seed,
                mse_per_n: (x_hat - &instance.x_star).norm_squared() / instance.n as f64,
                free_energy: None,
                overlaps,
                acceptance_rate: Some(set.acceptance_rate),
                method: PosteriorMethod::Mala,
            })
        }
    }
}

/// Across-seed spread of the overlaps at one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub seeds: usize,
    pub mean_r11: f64,
    pub var_r11: f64,
    pub mean_r12: f64,
    pub var_r12: f64,
    /// Standard error of `var_r12`.
    pub var_r12_se: f64,
    pub mean_q11: f64,
    pub var_q11: f64,
    pub mean_q12: f64,
    pub var_q12: f64,
}

pub fn concentration_scan(
    params: &ModelParams,
    n_list: &[usize],
    seeds: &[u64],
    mode: XStarMode,
    sampler: &SamplerConfig,
    n_replicas: usize,
) -> Result<Vec<ConcentrationRow>> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("concentration scan needs strictly increasing n".into()));
    }
    n_list
        .iter()
        .map(|&n| {
            let settings = RunSettings { n, mode, sampler: *sampler, n_replicas };
            let results = seeds
                .par_iter()
                .map(|&s| run_seed(params, &settings, s))
                .collect::<Result<Vec<_>>>()?;
            let col = |f: fn(&OverlapEstimates) -> f64| results.iter().map(|r| f(&r.overlaps)).collect::<Vec<_>>();
            let r11 = col(|o| o.r11.mean);
            let r12 = col(|o| o.r12.mean);
            let q11 = col(|o| o.q11.mean);
            let q12 = col(|o| o.q12.mean);
            Ok(ConcentrationRow {
                n,
                seeds: seeds.len(),
                mean_r11: stats::mean(&r11),
                var_r11: stats::variance(&r11),
                mean_r12: stats::mean(&r12),
                var_r12: stats::variance(&r12),
                var_r12_se: stats::variance_se(&r12),
                mean_q11: stats::mean(&q11),
                var_q11: stats::variance(&q11),
                mean_q12: stats::mean(&q12),
                var_q12: stats::variance(&q12),
            })
        })
        .collect()
}
