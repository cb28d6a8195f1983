//! Concave, non-positive mismatch potentials `u` and their first two
//! derivatives.
//!
//! The posterior over regression coefficients weights each residual `s` by
//! `exp u(s)`. All built-in kinds are concave and satisfy `u <= 0`; the
//! [`check_growth`] scan reports the smallest growth constant `d` that a grid
//! of residuals supports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value and derivatives of a potential at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialValue {
    pub u: f64,
    pub du: f64,
    pub d2u: f64,
}

/// Extension point for potentials other than the built-ins.
///
/// Implementors must be concave and non-positive; [`check_growth`] can be used
/// to sanity-check a new implementation on a grid.
pub trait Loss: Send + Sync {
    /// `(u(s), u'(s), u''(s))` for finite `s`.
    fn value(&self, s: f64) -> PotentialValue;

    /// `true` when `u` is a quadratic form `-s^2 / (2 delta)` or identically
    /// zero, in which case the posterior is Gaussian.
    fn is_gaussian(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    /// `u(s) = -s^2 / (2 delta)`.
    Quadratic { delta: f64 },
    /// `u(s) = b^2 (1 - sqrt(1 + s^2 / b^2))`.
    PseudoHuber { scale: f64 },
    /// `u = 0`.
    Zero,
}

impl Potential {
    pub fn quadratic(delta: f64) -> Result<Self> {
        let p = Potential::Quadratic { delta };
        p.validate()?;
        Ok(p)
    }

    pub fn pseudo_huber(scale: f64) -> Result<Self> {
        let p = Potential::PseudoHuber { scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Potential::Quadratic { delta } if !(delta > 0.0 && delta.is_finite()) => Err(
                Error::Config(format!("quadratic potential needs delta > 0, got {delta}")),
            ),
            Potential::PseudoHuber { scale } if !(scale > 0.0 && scale.is_finite()) => Err(
                Error::Config(format!("pseudo-Huber potential needs scale > 0, got {scale}")),
            ),
            _ => Ok(()),
        }
    }

    /// Evaluates `(u, u', u'')` at `s`.
    pub fn eval(&self, s: f64) -> Result<PotentialValue> {
        if !s.is_finite() {
            return Err(Error::Domain(format!("potential argument must be finite, got {s}")));
        }
        Ok(self.value(s))
    }

    /// The Gaussian noise variance of a quadratic potential.
    pub fn quadratic_delta(&self) -> Option<f64> {
        match *self {
            Potential::Quadratic { delta } => Some(delta),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Potential::Quadratic { .. } => "quadratic",
            Potential::PseudoHuber { .. } => "pseudo_huber",
            Potential::Zero => "zero",
        }
    }
}

impl Loss for Potential {
    #[inline]
    fn value(&self, s: f64) -> PotentialValue {
        match *self {
            Potential::Quadratic { delta } => PotentialValue {
                u: -s * s / (2.0 * delta),
                du: -s / delta,
                d2u: -1.0 / delta,
            },
            Potential::PseudoHuber { scale } => {
                let t = s / scale;
                let root = (1.0 + t * t).sqrt();
                PotentialValue {
                    // b^2 (1 - root) written to avoid cancellation near 0.
                    u: -scale * scale * t * t / (1.0 + root),
                    du: -s / root,
                    d2u: -1.0 / (root * root * root),
                }
            }
            Potential::Zero => PotentialValue { u: 0.0, du: 0.0, d2u: 0.0 },
        }
    }

    fn is_gaussian(&self) -> bool {
        matches!(self, Potential::Quadratic { .. } | Potential::Zero)
    }
}

/// Result of a grid scan of the growth condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Smallest `d` with `max(|u(0)|, |u'(0)|, sup|u''|) <= d` and
    /// `|u'(s)| <= d (1 + sqrt|u(s)|)` at every grid point.
    pub d: f64,
    /// Largest value of `|u'(s)| / (1 + sqrt|u(s)|)` on the grid.
    pub growth_ratio: f64,
    pub max_abs_d2u: f64,
    /// Grid points where `u(s) > 0`.
    pub positive_violations: usize,
    /// Grid points where `u''(s) > 0`.
    pub convexity_violations: usize,
    pub grid_half_width: f64,
    pub grid_points: usize,
}

impl GrowthReport {
    pub fn ok(&self) -> bool {
        self.positive_violations == 0 && self.convexity_violations == 0
    }
}

/// Scans `s` on `grid_points` equispaced points of `[-w, w]`.
///
/// Third and fourth derivatives are not checked.
pub fn check_growth<L: Loss + ?Sized>(loss: &L, grid_half_width: f64, grid_points: usize) -> Result<GrowthReport> {
    if grid_points < 2 {
        return Err(Error::Config(format!("growth check needs at least 2 grid points, got {grid_points}")));
    }
    if !(grid_half_width > 0.0 && grid_half_width.is_finite()) {
        return Err(Error::Config(format!("grid half width must be positive, got {grid_half_width}")));
    }
    let at_zero = loss.value(0.0);
    let mut growth_ratio = 0.0_f64;
    let mut max_abs_d2u = 0.0_f64;
    let mut positive_violations = 0;
    let mut convexity_violations = 0;
    let step = 2.0 * grid_half_width / (grid_points - 1) as f64;
    for i in 0..grid_points {
        let s = -grid_half_width + step * i as f64;
        let v = loss.value(s);
        if v.u > 0.0 {
            positive_violations += 1;
        }
        if v.d2u > 0.0 {
            convexity_violations += 1;
        }
        growth_ratio = growth_ratio.max(v.du.abs() / (1.0 + v.u.abs().sqrt()));
        max_abs_d2u = max_abs_d2u.max(v.d2u.abs());
    }
    let d = growth_ratio
        .max(max_abs_d2u)
        .max(at_zero.u.abs())
        .max(at_zero.du.abs());
    Ok(GrowthReport {
        d,
        growth_ratio,
        max_abs_d2u,
        positive_violations,
        convexity_violations,
        grid_half_width,
        grid_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds() -> Vec<Potential> {
        vec![
            Potential::Quadratic { delta: 1.0 },
            Potential::Quadratic { delta: 0.3 },
            Potential::PseudoHuber { scale: 1.0 },
            Potential::PseudoHuber { scale: 2.5 },
            Potential::Zero,
        ]
    }

    #[test]
    fn quadratic_spot_values() {
        let v = Potential::Quadratic { delta: 1.0 }.eval(0.0).unwrap();
        assert_eq!((v.u, v.du, v.d2u), (0.0, 0.0, -1.0));
        let v = Potential::Quadratic { delta: 2.0 }.eval(2.0).unwrap();
        assert_eq!((v.u, v.du, v.d2u), (-1.0, -1.0, -0.5));
    }

    #[test]
    fn pseudo_huber_at_origin_matches_finite_differences() {
        let p = Potential::PseudoHuber { scale: 1.0 };
        let v = p.eval(0.0).unwrap();
        assert_eq!(v.u, 0.0);
        assert_eq!(v.du, 0.0);
        assert_eq!(v.d2u, -1.0);
        let h = 1e-5;
        let u = |s: f64| 1.0 - (1.0 + s * s).sqrt();
        let fd1 = (u(h) - u(-h)) / (2.0 * h);
        let fd2 = (u(h) - 2.0 * u(0.0) + u(-h)) / (h * h);
        assert!(fd1.abs() < 1e-9);
        assert!((fd2 + 1.0).abs() < 1e-4);
    }

    #[test]
    fn non_finite_argument_is_rejected() {
        let p = Potential::Zero;
        assert!(matches!(p.eval(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(p.eval(f64::INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(Potential::quadratic(0.0).is_err());
        assert!(Potential::quadratic(-1.0).is_err());
        assert!(Potential::pseudo_huber(f64::NAN).is_err());
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let h = 1e-5;
        for p in kinds() {
            for i in 0..=200 {
                let s = -10.0 + 0.1 * i as f64;
                let fd = (p.value(s + h).u - p.value(s - h).u) / (2.0 * h);
                let exact = p.value(s).du;
                let scale = exact.abs().max(1.0);
                assert!((fd - exact).abs() <= 1e-6 * scale, "{p:?} s={s} fd={fd} exact={exact}");
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let h = 1e-5;
        for p in kinds() {
            for i in 0..=200 {
                let s = -10.0 + 0.1 * i as f64;
                let fd = (p.value(s + h).du - p.value(s - h).du) / (2.0 * h);
                let exact = p.value(s).d2u;
                let scale = exact.abs().max(1.0);
                assert!((fd - exact).abs() <= 1e-5 * scale, "{p:?} s={s} fd={fd} exact={exact}");
            }
        }
    }

    #[test]
    fn inverse_temperature_scaling_of_quadratic() {
        // u with delta / beta equals beta * u with delta.
        for &beta in &[0.1, 0.5, 2.0, 10.0] {
            let base = Potential::Quadratic { delta: 1.7 };
            let scaled = Potential::Quadratic { delta: 1.7 / beta };
            for i in 0..=40 {
                let s = -5.0 + 0.25 * i as f64;
                let lhs = scaled.value(s).u;
                let rhs = beta * base.value(s).u;
                assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn growth_check_quadratic() {
        let r = check_growth(&Potential::Quadratic { delta: 1.0 }, 10.0, 1001).unwrap();
        assert!(r.ok());
        // |u'| = |s| and sqrt|u| = |s| / sqrt 2, so the ratio increases in |s|
        // towards sqrt 2 and is maximal at the grid edge.
        let oracle = (0..1001)
            .map(|i| {
                let s: f64 = -10.0 + 0.02 * i as f64;
                s.abs() / (1.0 + s.abs() / 2f64.sqrt())
            })
            .fold(0.0, f64::max);
        assert!((r.growth_ratio - oracle).abs() < 1e-12);
        assert!(r.growth_ratio < 2f64.sqrt());
        assert!((r.d - oracle.max(1.0)).abs() < 1e-12);
    }

    #[test]
    fn growth_check_zero_and_pseudo_huber() {
        let r = check_growth(&Potential::Zero, 10.0, 101).unwrap();
        assert!(r.ok());
        assert_eq!(r.d, 0.0);

        let b = 1.0;
        let r = check_growth(&Potential::PseudoHuber { scale: b }, 10.0, 1001).unwrap();
        assert!(r.ok());
        let mut oracle = 0.0_f64;
        for i in 0..1001 {
            let s: f64 = -10.0 + 0.02 * i as f64;
            let u = b * b * (1.0 - (1.0 + s * s / (b * b)).sqrt());
            let du = -s / (1.0 + s * s / (b * b)).sqrt();
            oracle = oracle.max(du.abs() / (1.0 + u.abs().sqrt()));
        }
        assert!((r.growth_ratio - oracle).abs() < 1e-12);
        assert!(r.growth_ratio <= b);
        assert_eq!(r.max_abs_d2u, 1.0);
    }

    #[test]
    fn growth_check_flags_convex_positive_loss() {
        struct Bad;
        impl Loss for Bad {
            fn value(&self, s: f64) -> PotentialValue {
                PotentialValue { u: s * s, du: 2.0 * s, d2u: 2.0 }
            }
        }
        let r = check_growth(&Bad, 1.0, 11).unwrap();
        assert_eq!(r.convexity_violations, 11);
        assert_eq!(r.positive_violations, 10);
        assert!(!r.ok());
        assert!(check_growth(&Bad, 1.0, 1).is_err());
    }

    #[test]
    fn json_fragment() {
        let p: Potential = serde_json::from_str(r#"{"kind": "quadratic", "delta": 1.0}"#).unwrap();
        assert_eq!(p, Potential::Quadratic { delta: 1.0 });
        let p: Potential = serde_json::from_str(r#"{"kind": "pseudo_huber", "scale": 2.0}"#).unwrap();
        assert_eq!(p, Potential::PseudoHuber { scale: 2.0 });
        let p: Potential = serde_json::from_str(r#"{"kind": "zero"}"#).unwrap();
        assert_eq!(p, Potential::Zero);
    }
}
