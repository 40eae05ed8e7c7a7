mod common;

use std::sync::Arc;

use common::{arc, line};
use hjreg::action::ActionKernel;
use hjreg::discounted::{
    backward_calibrated_curve, bellman_step, lift_to_evolution, solve_discounted, DiscountedSolution,
};
use hjreg::grid::{Boundary, Grid, GridFunction};
use hjreg::lagrangian::{discount_lift, Mechanical, PotentialKind, TonelliLagrangian};
use hjreg::laxoleinik::{default_targets, lax_minus, LaxOptions};
use hjreg::Error;
use proptest::prelude::*;

fn cos_plus() -> Arc<dyn TonelliLagrangian> {
    // v²/2 + cos x
    arc(Mechanical::new(1, PotentialKind::Cos).with_amplitude(-1.0))
}

fn periodic(n: usize) -> Grid {
    let pi = std::f64::consts::PI;
    Grid::line(-pi, pi, n, Boundary::Periodic).unwrap()
}

fn cos_solution(n: usize, dt: f64) -> DiscountedSolution {
    solve_discounted(&cos_plus(), 0.5, &periodic(n), dt, 1e-10).unwrap()
}

#[test]
fn constant_hamiltonian_gives_constant_solution() {
    let a = 0.7;
    for lambda in [0.25, 0.5, 2.0] {
        let l = arc(Mechanical::new(1, PotentialKind::Flat).with_shift(-a));
        let sol = solve_discounted(&l, lambda, &line(-1.0, 1.0, 51), 0.05, 1e-10).unwrap();
        let err = sol.u.values().iter().map(|v| (v - a / lambda).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "lambda {lambda}: {err}");
    }
}

#[test]
fn adding_a_constant_shifts_the_solution() {
    let g = periodic(96);
    let c = 0.3;
    let lambda = 0.5;
    let base = solve_discounted(&cos_plus(), lambda, &g, 0.05, 1e-11).unwrap();
    let shifted_l = arc(Mechanical::new(1, PotentialKind::Cos).with_amplitude(-1.0).with_shift(-c));
    let shifted = solve_discounted(&shifted_l, lambda, &g, 0.05, 1e-11).unwrap();
    for (p, q) in base.u.values().iter().zip(shifted.u.values()) {
        assert!((q - p - c / lambda).abs() <= 1e-8);
    }
}

#[test]
fn cos_potential_matches_refined_reference() {
    let coarse = cos_solution(384, 0.02);
    let fine = cos_solution(4 * 384, 0.005);
    let diff = coarse
        .u
        .grid()
        .nodes()
        .zip(coarse.u.values())
        .map(|(x, v)| (v - fine.u.interpolate(&x)).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 2e-3, "sup difference {diff}");
    let beta = (-0.5f64 * 0.02).exp();
    assert!((coarse.measured_contraction / beta - 1.0).abs() <= 0.05);
    assert!(coarse.fixed_point_defect <= (1.0 - beta) * coarse.tol_fp);
}

#[test]
fn residual_shrinks_with_step_and_spacing() {
    let a = cos_solution(96, 0.04);
    let b = cos_solution(192, 0.02);
    let ca = a.residual / (0.04 + a.u.grid().max_spacing());
    let cb = b.residual / (0.02 + b.u.grid().max_spacing());
    assert!(a.residual_nodes > 0 && b.residual_nodes > 0);
    assert!(cb <= 2.0 * ca.max(1e-6), "residual constants {ca} then {cb}");
    assert!(b.residual < a.residual);
}

#[test]
fn lift_examples() {
    let sol = cos_solution(96, 0.05);
    assert_eq!(lift_to_evolution(&sol, 0.0).values(), sol.u.values());
    let one = DiscountedSolution { lambda: 1.0, ..sol.clone() };
    let doubled = one.lift(2f64.ln());
    for (p, q) in doubled.values().iter().zip(sol.u.values()) {
        assert!((p - 2.0 * q).abs() <= 1e-12 * q.abs().max(1.0));
    }
}

#[test]
fn negative_operator_reproduces_the_lift() {
    let lambda = 0.5;
    let t = 0.25;
    let sol = solve_discounted(&cos_plus(), lambda, &periodic(256), 0.02, 1e-10).unwrap();
    let lifted: Arc<dyn TonelliLagrangian> = arc(discount_lift(cos_plus(), lambda, t).unwrap());
    let kernel = ActionKernel::new(lifted);
    let targets = default_targets(&sol.u, &kernel, 0.0, t, None).unwrap();
    let opts = LaxOptions {
        targets: Some(targets.clone()),
        ..LaxOptions::default()
    };
    let evolved = lax_minus(&sol.u, &kernel, 0.0, t, &opts).unwrap();
    let err = evolved.values.sup_distance(&sol.lift(t).resample(&targets));
    assert!(err <= 5e-3, "sup error {err}");
    common::assert_output_localized(&evolved);
}

#[test]
fn calibrated_curve_of_constant_solution_is_constant() {
    let l = arc(Mechanical::new(1, PotentialKind::Flat).with_shift(-0.4));
    let sol = solve_discounted(&l, 0.5, &line(-1.0, 1.0, 81), 0.05, 1e-12).unwrap();
    let c = backward_calibrated_curve(&sol, &l, &[0.2], 0.5, 0.5, 0.01).unwrap();
    assert!(c.points.iter().all(|p| (p[0] - 0.2).abs() < 1e-9));
    assert!(c.calibration_defect < 1e-9);
}

#[test]
fn calibrated_curve_on_cos_potential() {
    let l = cos_plus();
    let sol = cos_solution(384, 0.02);
    let mut defects = Vec::new();
    for dt in [0.02, 0.01] {
        let c = backward_calibrated_curve(&sol, &l, &[1.0], 0.5, 0.5, dt).unwrap();
        assert!(c.calibration_defect <= 1e-3, "defect {}", c.calibration_defect);
        defects.push(c.calibration_defect);
        // The cost v²/2 + cos x is smallest at ±π, so backward curves leave the
        // origin's neighbourhood toward the nearest minimum.
        let last = c.points.last().unwrap()[0];
        assert!(last > 1.0, "curve ended at {last}");
        assert!(c.times.windows(2).all(|w| w[1] < w[0]));
    }
    assert!(defects[1] <= defects[0] * 1.05);
}

#[test]
fn calibrated_curve_refuses_singular_start() {
    let l = arc(Mechanical::double_well_cost(1));
    let sol = solve_discounted(&l, 0.5, &line(-1.6, 1.6, 161), 0.02, 1e-10).unwrap();
    let err = backward_calibrated_curve(&sol, &l, &[0.0], 0.3, 0.3, 0.01).unwrap_err();
    assert!(matches!(err, Error::SingularStart { .. }));
    assert!(backward_calibrated_curve(&sol, &l, &[0.7], 0.3, 0.3, 0.01).is_ok());
}

#[test]
fn solver_rejects_bad_parameters() {
    let g = line(-1.0, 1.0, 21);
    assert!(solve_discounted(&cos_plus(), 0.0, &g, 0.05, 1e-8).is_err());
    assert!(solve_discounted(&cos_plus(), 0.5, &g, -0.05, 1e-8).is_err());
    assert!(solve_discounted(&cos_plus(), 0.5, &g, 0.05, 0.0).is_err());
    let sol = cos_solution(96, 0.05);
    assert!(matches!(
        backward_calibrated_curve(&sol, &cos_plus(), &[0.3], 0.5, 0.0, 0.01),
        Err(Error::InvalidHorizon(_))
    ));
}

fn field(g: &Grid, coeffs: &[f64]) -> GridFunction {
    GridFunction::from_fn(g.clone(), |x| {
        coeffs.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * x[0]).cos()).sum()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bellman_step_is_monotone(a in prop::collection::vec(-1.0f64..1.0, 3), b in prop::collection::vec(0.0f64..1.0, 3)) {
        let g = periodic(64);
        let u = field(&g, &a);
        let bump = GridFunction::from_fn(g.clone(), |x| b[0] + b[1] * x[0].sin().powi(2) + b[2] * (0.5 * x[0]).cos().powi(2));
        let w = GridFunction::new(g.clone(), u.values().iter().zip(bump.values()).map(|(p, q)| p + q).collect()).unwrap();
        let tu = bellman_step(&cos_plus(), 0.5, 0.05, &u).unwrap().values;
        let tw = bellman_step(&cos_plus(), 0.5, 0.05, &w).unwrap().values;
        for (p, q) in tu.values().iter().zip(tw.values()) {
            prop_assert!(*p <= q + 1e-12);
        }
    }

    #[test]
    fn bellman_step_contracts(a in prop::collection::vec(-1.0f64..1.0, 3), b in prop::collection::vec(-1.0f64..1.0, 3), lambda in 0.1f64..2.0) {
        let g = periodic(64);
        let dt = 0.05;
        let (u, w) = (field(&g, &a), field(&g, &b));
        let tu = bellman_step(&cos_plus(), lambda, dt, &u).unwrap().values;
        let tw = bellman_step(&cos_plus(), lambda, dt, &w).unwrap().values;
        let beta = (-lambda * dt).exp();
        prop_assert!(tu.sup_distance(&tw) <= beta * u.sup_distance(&w) + 1e-12);
    }

    #[test]
    fn bellman_step_discounts_constants(a in prop::collection::vec(-1.0f64..1.0, 3), c in -3.0f64..3.0) {
        let g = periodic(64);
        let dt = 0.05;
        let lambda = 0.5;
        let u = field(&g, &a);
        let tu = bellman_step(&cos_plus(), lambda, dt, &u).unwrap().values;
        let tc = bellman_step(&cos_plus(), lambda, dt, &u.shifted(c)).unwrap().values;
        let beta = (-lambda * dt).exp();
        for (p, q) in tu.values().iter().zip(tc.values()) {
            prop_assert!((q - p - beta * c).abs() <= 1e-10);
        }
    }
}
