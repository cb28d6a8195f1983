//! Gauss-Hermite evaluation of the nested Gaussian expectations
//! `E_z[g(E_xi[...])]` with `theta = z sqrt(delta_star + q) + xi sqrt(rho - q)`.
//!
//! Rules are normalized to standard-normal expectations: weights sum to one and
//! the abscissae are roots of the probabilists' Hermite polynomial.
//!
//! The inner `xi` integral is recentred on the mode of `u(theta) - xi^2 / 2`
//! and rescaled by its curvature before the rule is applied. For quadratic `u`
//! the integrand then becomes a constant times the reference Gaussian and the
//! rule is exact; for other concave `u` the integrand stays well resolved when
//! `rho - q` is large compared to the width of `exp u`. All inner sums carry an
//! explicit log-scale, so `E0` never underflows.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::potential::Loss;

pub const MIN_NODES: usize = 2;
pub const MAX_NODES: usize = 512;
pub const DEFAULT_NODES: usize = 80;

/// A Gauss-Hermite rule for `E f(Z)`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    pub fn new(n: usize) -> Result<Self> {
        if !(MIN_NODES..=MAX_NODES).contains(&n) {
            return Err(Error::Config(format!(
                "quadrature node count must be in [{MIN_NODES}, {MAX_NODES}], got {n}"
            )));
        }
        Ok(hermite_rule(n))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E f(Z)` under the rule.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Outer (`z`) and inner (`xi`) rules.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub outer: HermiteRule,
    pub inner: HermiteRule,
}

impl QuadratureGrid {
    pub fn new(n_outer: usize, n_inner: usize) -> Result<Self> {
        Ok(QuadratureGrid { outer: HermiteRule::new(n_outer)?, inner: HermiteRule::new(n_inner)? })
    }
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        let rule = hermite_rule(DEFAULT_NODES);
        QuadratureGrid { outer: rule.clone(), inner: rule }
    }
}

pub fn make_grid(n_outer: usize, n_inner: usize) -> Result<QuadratureGrid> {
    QuadratureGrid::new(n_outer, n_inner)
}

/// Orthonormal Hermite recurrence at `x` up to degree `n`.
///
/// Returns `(p_n(x) / p_n'(x), ln sum_{k<n} p_k(x)^2)`. Values are rescaled
/// on the fly so that no intermediate overflows for `n <= MAX_NODES`.
fn recurrence(n: usize, x: f64) -> (f64, f64) {
    const BIG: f64 = 1e120;
    let mut p_prev = 0.0;
    let mut p = 1.0;
    let mut dp_prev = 0.0;
    let mut dp = 0.0;
    let mut sum_sq = 0.0;
    let mut log_scale = 0.0;
    for k in 0..n {
        sum_sq += p * p;
        let sk = (k as f64).sqrt();
        let sk1 = ((k + 1) as f64).sqrt();
        let p_next = (x * p - sk * p_prev) / sk1;
        let dp_next = (p + x * dp - sk * dp_prev) / sk1;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
        if p.abs() > BIG || dp.abs() > BIG {
            p /= BIG;
            p_prev /= BIG;
            dp /= BIG;
            dp_prev /= BIG;
            sum_sq /= BIG * BIG;
            log_scale += BIG.ln();
        }
    }
    (p / dp, sum_sq.ln() + 2.0 * log_scale)
}

fn hermite_rule(n: usize) -> HermiteRule {
    // Golub-Welsch on the Jacobi matrix of He_k, then Newton refinement
    // of each root and Christoffel-function weights.
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut roots: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut nodes = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    for &x0 in &roots {
        let mut x = x0;
        for _ in 0..8 {
            let (step, _) = recurrence(n, x);
            x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, log_sum_sq) = recurrence(n, x);
        nodes.push(x);
        log_weights.push(-log_sum_sq);
    }

    // Enforce exact symmetry.
    let mut sym_nodes = vec![0.0; n];
    let mut sym_log_w = vec![0.0; n];
    for i in 0..n {
        let j = n - 1 - i;
        sym_nodes[i] = 0.5 * (nodes[i] - nodes[j]);
        sym_log_w[i] = 0.5 * (log_weights[i] + log_weights[j]);
    }
    if n % 2 == 1 {
        sym_nodes[n / 2] = 0.0;
    }
    let max_log = sym_log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = sym_log_w.iter().map(|&l| (l - max_log).exp()).collect();
    // Sum smallest first.
    let total: f64 = {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| weights[a].partial_cmp(&weights[b]).unwrap());
        idx.iter().map(|&i| weights[i]).sum()
    };
    for w in &mut weights {
        *w /= total;
    }
    HermiteRule { nodes: sym_nodes, weights }
}

/// Coefficients of `z` and `xi` in `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSpec {
    pub m_coeff: f64,
    pub s_coeff: f64,
}

impl ThetaSpec {
    /// `m = sqrt(delta_star + q)`, `s = sqrt(rho - q)`.
    pub fn new(delta_star: f64, q: f64, rho: f64) -> Result<Self> {
        if !(delta_star + q >= 0.0) {
            return Err(Error::Domain(format!("delta_star + q must be >= 0, got {}", delta_star + q)));
        }
        if !(rho >= q) {
            return Err(Error::Domain(format!("theta needs rho >= q, got q={q}, rho={rho}")));
        }
        Ok(ThetaSpec { m_coeff: (delta_star + q).sqrt(), s_coeff: (rho - q).sqrt() })
    }
}

/// Inner expectations over `xi` at a fixed outer abscissa.
///
/// Stored as `ln E0` and the normalized ratios `E1/E0`, `E2/E0`, `E12/E0`,
/// which is what the fixed-point maps and the free energy consume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerMoments {
    /// `ln E_xi exp u(theta)`.
    pub ln_e0: f64,
    /// `E_xi u'(theta) e^u / E0`.
    pub mean_du: f64,
    /// `E_xi (u''(theta) + u'(theta)^2) e^u / E0`.
    pub mean_d2: f64,
    /// `E_xi u(theta) e^u / E0`.
    pub mean_u: f64,
}

impl InnerMoments {
    pub fn e0(&self) -> f64 {
        self.ln_e0.exp()
    }
    pub fn e1(&self) -> f64 {
        self.mean_du * self.e0()
    }
    pub fn e2(&self) -> f64 {
        self.mean_d2 * self.e0()
    }
    pub fn e12(&self) -> f64 {
        self.mean_u * self.e0()
    }
}

/// Mode of `l(xi) = u(m + s xi) - xi^2 / 2`.
///
/// `l'` is strictly decreasing with slope <= -1, so the root lies between 0
/// and `l'(0)`; Newton steps leaving that bracket fall back to bisection.
fn inner_mode<L: Loss + ?Sized>(loss: &L, m: f64, s: f64) -> f64 {
    let slope = |xi: f64| s * loss.value(m + s * xi).du - xi;
    let g0 = slope(0.0);
    if g0 == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = if g0 > 0.0 { (0.0, g0) } else { (g0, 0.0) };
    let mut xi = 0.0;
    for _ in 0..200 {
        let v = loss.value(m + s * xi);
        let g = s * v.du - xi;
        if g > 0.0 {
            lo = xi;
        } else if g < 0.0 {
            hi = xi;
        } else {
            return xi;
        }
        let dg = s * s * v.d2u - 1.0;
        let mut next = xi - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - xi).abs() <= 1e-15 * (1.0 + xi.abs()) || hi - lo <= 1e-15 * (1.0 + xi.abs());
        xi = next;
        if done {
            break;
        }
    }
    xi
}

pub fn inner_moments<L: Loss + ?Sized>(grid: &QuadratureGrid, theta: ThetaSpec, loss: &L, z_tilde: f64) -> InnerMoments {
    inner_moments_with(&grid.inner, theta, loss, z_tilde)
}

fn inner_moments_with<L: Loss + ?Sized>(rule: &HermiteRule, theta: ThetaSpec, loss: &L, z_tilde: f64) -> InnerMoments {
    let m = theta.m_coeff * z_tilde;
    let s = theta.s_coeff;
    if s == 0.0 {
        let v = loss.value(m);
        return InnerMoments { ln_e0: v.u, mean_du: v.du, mean_d2: v.d2u + v.du * v.du, mean_u: v.u };
    }
    let mu = inner_mode(loss, m, s);
    let at_mode = loss.value(m + s * mu);
    let tau = 1.0 / (1.0 - s * s * at_mode.d2u).sqrt();
    let l_mode = at_mode.u - 0.5 * mu * mu;

    let (mut s0, mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0, 0.0);
    for (t, w) in rule.iter() {
        let xi = mu + tau * t;
        let v = loss.value(m + s * xi);
        let e = w * (v.u - 0.5 * xi * xi + 0.5 * t * t - l_mode).exp();
        s0 += e;
        s1 += e * v.du;
        s2 += e * (v.d2u + v.du * v.du);
        s12 += e * v.u;
    }
    InnerMoments { ln_e0: tau.ln() + l_mode + s0.ln(), mean_du: s1 / s0, mean_d2: s2 / s0, mean_u: s12 / s0 }
}

/// `E_z g(inner moments at z)`.
pub fn nested_expect<L, G>(grid: &QuadratureGrid, theta: ThetaSpec, loss: &L, g: G) -> Result<f64>
where
    L: Loss + ?Sized,
    G: Fn(&InnerMoments) -> f64,
{
    let mut acc = 0.0;
    for (node, (z, w)) in grid.outer.iter().enumerate() {
        let value = g(&inner_moments_with(&grid.inner, theta, loss, z));
        if !value.is_finite() {
            return Err(Error::Evaluation { node, abscissa: z, value });
        }
        acc += w * value;
    }
    Ok(acc)
}

/// Several nested expectations sharing one pass over the outer nodes.
pub fn nested_expect_many<L, G, const K: usize>(grid: &QuadratureGrid, theta: ThetaSpec, loss: &L, g: G) -> Result<[f64; K]>
where
    L: Loss + ?Sized,
    G: Fn(&InnerMoments) -> [f64; K],
{
    let mut acc = [0.0; K];
    for (node, (z, w)) in grid.outer.iter().enumerate() {
        let values = g(&inner_moments_with(&grid.inner, theta, loss, z));
        for (a, &v) in acc.iter_mut().zip(values.iter()) {
            if !v.is_finite() {
                return Err(Error::Evaluation { node, abscissa: z, value: v });
            }
            *a += w * v;
        }
    }
    Ok(acc)
}
