use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use mbr_core::potential::Potential;
use mbr_core::quadrature::QuadratureGrid;
use mbr_core::replica::*;

fn quadratic(alpha: f64, delta: f64, delta_star: f64, kappa: f64, gamma: f64) -> ModelParams {
    ModelParams::regression(alpha, delta_star, kappa, gamma, Potential::Quadratic { delta }).unwrap()
}

/// 3 x 3 x 2 x 2 x 2 = 72 points, including h = 0.
fn oracle_grid() -> Vec<ModelParams> {
    let mut out = Vec::new();
    for alpha in [0.25, 1.5, 4.0] {
        for delta in [0.25, 1.0, 4.0] {
            for delta_star in [0.25, 4.0] {
                for kappa in [0.1, 2.0] {
                    for gamma in [0.0, 2.0] {
                        out.push(quadratic(alpha, delta, delta_star, kappa, gamma));
                    }
                }
            }
        }
    }
    out
}

#[test]
fn solver_matches_closed_form_on_grid() {
    let grid = QuadratureGrid::default();
    let mut worst = 0.0_f64;
    for p in oracle_grid() {
        let rep = solve_fixed_point(&p, &grid, &SolveOptions::default()).unwrap();
        assert!(rep.converged, "{p:?}");
        assert!(!rep.uniqueness_warning, "{p:?}: spread {}", rep.multistart_spread);
        worst = worst.max(rep.state.sup_distance(&closed_form_quadratic(&p).unwrap()));
    }
    assert!(worst <= 1e-8, "worst sup error {worst:e}");
}

fn fixed_points() -> Vec<(ModelParams, OverlapState)> {
    let grid = QuadratureGrid::default();
    let potentials = [Potential::Quadratic { delta: 1.0 }, Potential::PseudoHuber { scale: 1.0 }, Potential::PseudoHuber { scale: 3.0 }];
    let mut out = Vec::new();
    for potential in potentials {
        for (alpha, kappa, gamma) in [(2.0, 0.5, 1.0), (0.5, 1.0, 0.3), (4.0, 0.2, 2.0)] {
            let p = ModelParams::regression(alpha, 1.0, kappa, gamma, potential).unwrap();
            let rep = solve_fixed_point(&p, &grid, &SolveOptions::default()).unwrap();
            assert!(rep.converged, "{p:?}");
            out.push((p, rep.state));
        }
    }
    out
}

#[test]
fn both_free_energies_agree_at_fixed_points() {
    let grid = QuadratureGrid::default();
    for (p, s) in fixed_points() {
        let f = free_energy_f(&p, s.q, s.rho, &grid).unwrap();
        let fbar = free_energy_fbar(&p, &s, &grid).unwrap();
        assert!((f - fbar).abs() <= 1e-10, "{p:?}: F {f} Fbar {fbar}");
    }
}

#[test]
fn fbar_is_stationary_at_fixed_points() {
    let grid = QuadratureGrid::default();
    let step = 1e-4;
    for (p, s) in fixed_points() {
        for k in 0..4 {
            let shifted = |d: f64| {
                let mut a = s.as_array();
                a[k] += d;
                free_energy_fbar(&p, &OverlapState::from_array(a), &grid).unwrap()
            };
            let g = (shifted(step) - shifted(-step)) / (2.0 * step);
            assert!(g.abs() <= 1e-5, "{p:?}: component {k} gradient {g:e}");
        }
    }
}

#[test]
fn q_is_invariant_under_inverse_temperature() {
    let grid = QuadratureGrid::default();
    let base = quadratic(2.0, 1.0, 1.0, 0.5, 1.0);
    let q_ref = closed_form_quadratic(&base).unwrap().q;
    for beta in [0.1, 0.5, 1.0, 2.0, 10.0] {
        let p = beta_reparametrize(&base, beta).unwrap();
        assert_abs_diff_eq!(closed_form_quadratic(&p).unwrap().q, q_ref, epsilon = 1e-10);
        let rep = solve_fixed_point(&p, &grid, &SolveOptions::default()).unwrap();
        assert_abs_diff_eq!(rep.state.q, q_ref, epsilon = 1e-10);
    }
}

#[test]
fn mse_grows_with_true_noise() {
    let grid = QuadratureGrid::default();
    let mut last = f64::NEG_INFINITY;
    for delta_star in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let p = quadratic(2.0, 1.0, delta_star, 0.5, 1.0);
        let q = solve_fixed_point(&p, &grid, &SolveOptions::default()).unwrap().state.q;
        assert!(q > last, "delta* {delta_star}: {q} <= {last}");
        last = q;
    }
}

#[test]
fn pseudo_huber_flattens_toward_zero_potential() {
    // u(s) ~ -b|s| away from the origin, so a tiny scale is close to u = 0.
    let grid = QuadratureGrid::default();
    let zero = ModelParams::regression(2.0, 1.0, 0.5, 1.0, Potential::Zero).unwrap();
    let s0 = solve_fixed_point(&zero, &grid, &SolveOptions::default()).unwrap().state;
    let near = ModelParams::regression(2.0, 1.0, 0.5, 1.0, Potential::PseudoHuber { scale: 1e-4 }).unwrap();
    let s = solve_fixed_point(&near, &grid, &SolveOptions::default()).unwrap().state;
    assert!(s.sup_distance(&s0) < 1e-6, "{s:?} vs {s0:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn closed_form_is_a_fixed_point(
        alpha in 0.1..6.0_f64,
        delta in 0.1..5.0_f64,
        delta_star in 0.0..5.0_f64,
        kappa in 0.05..3.0_f64,
        gamma in 0.0..4.0_f64,
    ) {
        let p = quadratic(alpha, delta, delta_star, kappa, gamma);
        let s = closed_form_quadratic(&p).unwrap();
        prop_assert!(s.validate(kappa).is_ok());
        prop_assert!(s.rho > s.q && s.q >= 0.0);
        let grid = QuadratureGrid::new(40, 40).unwrap();
        let (r, rbar) = map_phi(&p, s.q, s.rho, &grid).unwrap();
        let (q, rho) = map_psi(&p, r, rbar).unwrap();
        let image = OverlapState { q, rho, r, rbar };
        let scale = s.as_array().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        prop_assert!(image.sup_distance(&s) <= 1e-9 * scale, "{s:?} -> {image:?}");
    }

    #[test]
    fn endpoint_state_solves_the_decoupled_system(
        kappa in 0.05..3.0_f64,
        h in 0.0..3.0_f64,
    ) {
        let p = ModelParams::with_field(1.0, 1.0, kappa, h, Potential::Zero).unwrap();
        let ends = reference_endpoints(&p);
        let (q, rho) = map_psi(&p, 0.0, 0.0).unwrap();
        prop_assert!((q - ends.state0.q).abs() <= 1e-12 * q.max(1.0));
        prop_assert!((rho - ends.state0.rho).abs() <= 1e-12 * rho.max(1.0));
        let f = free_energy_f(&p, q, rho, &QuadratureGrid::new(8, 8).unwrap()).unwrap();
        prop_assert!((f - ends.f0).abs() <= 1e-12 * f.abs().max(1.0));
    }
}
