mod common;

use std::sync::Arc;

use common::{arc, assert_localized, dist, line, manual_solution};
use hjreg::action::ProbeConfig;
use hjreg::discounted::{solve_discounted, DiscountedSolution};
use hjreg::grid::GridFunction;
use hjreg::lagrangian::{hamiltonian_of, Drift, FreeParticle, Mechanical, PotentialKind, TonelliLagrangian};
use hjreg::lasrylions::{
    aitken, brute_force_q, convergence_sweep, extrapolate, gradient_limit_vs_qx, interpolation_error,
    intrinsic_regularize, strict_concavity_window, sweep_targets, trace_singularity, RegularizeOptions,
};
use hjreg::regularity::{classify_node, singular_set};
use hjreg::Error;
use proptest::prelude::*;

const TINY_LAMBDA: f64 = 1e-9;

fn geometric(t_max: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| t_max * 0.5f64.powi(k as i32)).collect()
}

fn double_well() -> Arc<dyn TonelliLagrangian> {
    arc(Mechanical::double_well_cost(1))
}

fn double_well_solution() -> DiscountedSolution {
    solve_discounted(&double_well(), 0.5, &line(-1.6, 1.6, 161), 0.02, 1e-9).unwrap()
}

fn probe_cfg() -> ProbeConfig {
    ProbeConfig {
        samples: 64,
        seed: 11,
        ..ProbeConfig::default()
    }
}

fn moreau(x: f64, tau: f64) -> f64 {
    if x.abs() <= tau {
        -x * x / (2.0 * tau)
    } else {
        -x.abs() + tau / 2.0
    }
}

#[test]
fn aitken_is_exact_on_geometric_sequences() {
    let seq: Vec<f64> = (0..6).map(|k| 1.5 + 0.7 * 0.5f64.powi(k)).collect();
    for v in aitken(&seq) {
        assert!((v - 1.5).abs() < 1e-12);
    }
    let constant = aitken(&[2.0, 2.0, 2.0]);
    assert_eq!(constant, vec![2.0]);
}

#[test]
fn extrapolation_flags_agreement_and_falls_back_to_richardson() {
    let seq: Vec<Vec<f64>> = (0..6).map(|k| vec![1.0 + 0.5f64.powi(k), -2.0]).collect();
    let (lim, ok) = extrapolate(&seq, 1e-9);
    assert!(ok);
    assert!(dist(&lim, &[1.0, -2.0]) < 1e-12);
    let (lim, ok) = extrapolate(&seq[..2], 1e-9);
    assert!(!ok);
    // 2·1.5 − 2 = 1.
    assert!(dist(&lim, &[1.0, -2.0]) < 1e-12);
}

#[test]
fn interpolation_error_estimates() {
    let g = line(-1.0, 1.0, 41);
    let h = g.max_spacing();
    let lin = GridFunction::from_fn(g.clone(), |x| 3.0 * x[0] - 1.0);
    assert!(interpolation_error(&lin) < 1e-14);
    let quad = GridFunction::from_fn(g, |x| x[0] * x[0]);
    assert!((interpolation_error(&quad) - h * h / 4.0).abs() < 1e-12);
}

#[test]
fn constant_field_errors_follow_the_self_action() {
    let a = 0.4;
    let lambda = 0.5;
    let l = arc(Mechanical::new(1, PotentialKind::Flat).with_shift(-a));
    let sol = solve_discounted(&l, lambda, &line(-1.0, 1.0, 41), 0.05, 1e-12).unwrap();
    let ts = geometric(0.2, 4);
    let sweep = convergence_sweep(&sol, &l, &ts, &[vec![0.1]], &RegularizeOptions::default()).unwrap();
    for (t, err) in sweep.t_grid.iter().zip(&sweep.errors) {
        let want = a * ((lambda * t).exp() - 1.0) / lambda;
        assert!((err - want).abs() <= 1e-6, "t {t}: {err} vs {want}");
    }
    assert!(sweep.monotone);
    for row in &sweep.gradients {
        assert!(row[0][0].abs() < 1e-6);
    }
}

#[test]
fn vanishing_discount_reproduces_the_moreau_envelope() {
    let u = GridFunction::from_fn(line(-1.0, 1.0, 401), |x| -x[0].abs());
    let sol = manual_solution(u, TINY_LAMBDA);
    let l = arc(FreeParticle::new(1));
    for tau in [0.05, 0.1] {
        let r = intrinsic_regularize(&sol, &l, tau, &[vec![0.0], vec![0.3]], &RegularizeOptions::default()).unwrap();
        let err = r
            .field
            .grid()
            .nodes()
            .zip(r.field.values())
            .map(|(x, v)| (v - moreau(x[0], tau)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "tau {tau}: {err}");
        assert!(r.probe_gradients[0][0].abs() < 1e-6);
        assert!((r.probe_gradients[1][0] + 1.0).abs() < 1e-4);
        assert_localized(&r.probe_records);
    }
}

#[test]
fn vanishing_discount_sweep_on_the_kink() {
    let u = GridFunction::from_fn(line(-1.0, 1.0, 401), |x| -x[0].abs());
    let sol = manual_solution(u.clone(), TINY_LAMBDA);
    let ts = geometric(0.1, 5);
    let probes = [vec![0.0]];
    for (l, want) in [
        (arc(FreeParticle::new(1)), 0.0),
        (arc(Drift::new(vec![2.0])), 1.0),
    ] {
        let sweep = convergence_sweep(&sol, &l, &ts, &probes, &RegularizeOptions::default()).unwrap();
        if want == 0.0 {
            for (t, err) in sweep.t_grid.iter().zip(&sweep.errors) {
                assert!((err - t / 2.0).abs() <= 1e-4, "t {t}: {err}");
            }
        }
        let h = hamiltonian_of(&l);
        let c = gradient_limit_vs_qx(&sweep, &u, h.as_ref(), &[0.0]).unwrap();
        assert!((c.limit[0] - want).abs() < 1e-4, "limit {:?}", c.limit);
        assert!((c.q[0] - want).abs() < 1e-6, "q {:?}", c.q);
        assert!(c.brute_force_gap <= 1e-6);
        assert!(c.singular);
    }
}

#[test]
fn regularized_value_dominates_the_diagonal() {
    let sol = double_well_solution();
    let l = double_well();
    let t = 0.1;
    let r = intrinsic_regularize(&sol, &l, t, &[], &RegularizeOptions::default()).unwrap();
    // A^λ_{0,t}(x, x) = ∫ e^{λs} L(x, 0) ds.
    let lambda = sol.lambda;
    let w = ((lambda * t).exp() - 1.0) / lambda;
    for (x, v) in r.field.grid().nodes().zip(r.field.values()) {
        let self_action = w * l.value(0.0, &x, &[0.0]);
        assert!(*v >= sol.u.interpolate(&x) - self_action - 1e-9);
    }
    assert!(r.gradient_lipschitz.is_finite());
}

#[test]
fn regularization_rejects_nonpositive_times() {
    let sol = double_well_solution();
    assert!(matches!(
        intrinsic_regularize(&sol, &double_well(), 0.0, &[], &RegularizeOptions::default()),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn concavity_window_of_quadratic_field() {
    let u = GridFunction::from_fn(line(-3.0, 3.0, 601), |x| x[0] * x[0] / 2.0);
    let sol = manual_solution(u, TINY_LAMBDA);
    let ts = [0.3, 0.5, 0.7, 0.9, 1.1, 1.3];
    let w = strict_concavity_window(&sol, &arc(FreeParticle::new(1)), &[0.0], &ts, &probe_cfg()).unwrap();
    assert!((w.c2 - 1.0).abs() < 1e-6, "c2 {}", w.c2);
    for c in &w.c_ppp {
        assert!((c - 1.0).abs() < 1e-3, "C''' {c}");
    }
    assert!((w.t2 - 0.9).abs() < 1e-12, "t2 {}", w.t2);
}

#[test]
fn concavity_window_of_constant_field_is_the_full_grid() {
    let u = GridFunction::from_fn(line(-3.0, 3.0, 121), |_| 0.3);
    let sol = manual_solution(u, TINY_LAMBDA);
    let ts = [0.1, 0.2, 0.4];
    let w = strict_concavity_window(&sol, &arc(FreeParticle::new(1)), &[0.0], &ts, &probe_cfg()).unwrap();
    assert_eq!(w.t2, 0.4);
    assert_eq!(w.t1, 0.4);
    assert!(w.unique.iter().all(|u| *u));
}

#[test]
fn smooth_start_is_not_singular() {
    let sol = double_well_solution();
    let err = trace_singularity(&sol, &double_well(), &[0.5], &geometric(0.2, 3), &probe_cfg()).unwrap_err();
    assert!(matches!(err, Error::NotSingular { .. }));
}

#[test]
fn double_well_regularization_converges() {
    let sol = double_well_solution();
    let l = double_well();
    let ts = geometric(0.2, 6);
    let h = sol.u.grid().max_spacing();
    let targets = sweep_targets(&sol, &l, 0.2).unwrap();
    let probes: Vec<Vec<f64>> = [vec![0.0]]
        .into_iter()
        .chain(
            (0..sol.u.grid().len())
                .filter(|&k| {
                    let x = sol.u.grid().node(k)[0];
                    x.abs() > 10.0 * h
                        && x > targets.lower[0] + 3.0 * h
                        && x < targets.upper[0] - 3.0 * h
                        && classify_node(&sol.u, k).is_some_and(|c| c.differentiable)
                })
                .step_by(9)
                .take(8)
                .map(|k| sol.u.grid().node(k)),
        )
        .collect();
    assert_eq!(probes.len(), 9);
    let opts = RegularizeOptions {
        targets: Some(targets),
        ..RegularizeOptions::default()
    };
    let sweep = convergence_sweep(&sol, &l, &ts, &probes, &opts).unwrap();
    assert!(sweep.monotone, "errors {:?}", sweep.errors);
    let last = *sweep.errors.last().unwrap();
    assert!(last <= 4.0 * sweep.interpolation_error, "{last} vs {}", sweep.interpolation_error);

    let ham = hamiltonian_of(&l);
    for x in &probes {
        let c = gradient_limit_vs_qx(&sweep, &sol.u, ham.as_ref(), x).unwrap();
        assert!(c.distance <= 3.0 * h, "x {x:?}: limit {:?} vs q {:?}", c.limit, c.q);
        assert!(c.brute_force_gap <= 1e-6);
        let bf = brute_force_q(ham.as_ref(), 0.0, x, &c.superdiff, 1e-6);
        assert!(dist(&bf, &c.q) <= 1e-6);
        assert_eq!(c.singular, x[0] == 0.0);
    }
}

#[test]
fn ridge_singularity_propagates_on_the_double_well() {
    let sol = double_well_solution();
    let h = sol.u.grid().max_spacing();
    let ts = geometric(0.4, 8);
    let trace = trace_singularity(&sol, &double_well(), &[0.0], &ts, &probe_cfg()).unwrap();
    assert!(trace.t2 > 0.0);
    assert!(trace.t2 <= trace.t1 + 1e-12);
    for (k, t) in trace.t_grid.iter().enumerate() {
        if *t <= trace.t2 {
            assert!(trace.singular[k], "t {t}: maximizer {:?}", trace.maximizers[k]);
        }
        assert!(trace.localization_slack[k] <= 1e-9);
    }
    assert!(trace.max_jump <= 2.0 * h);
    assert!(trace.right_derivative[0].abs() <= 2.0 * h);
    assert!(trace.v0[0].abs() <= 2.0 * h);
    assert!(trace.q[0].abs() <= 2.0 * h);
}

#[test]
fn tilted_ridge_stays_singular() {
    let l = arc(Mechanical::double_well_cost(1).with_tilt(vec![0.05]));
    let sol = solve_discounted(&l, 0.5, &line(-1.6, 1.6, 321), 0.01, 1e-9).unwrap();
    let h = sol.u.grid().max_spacing();
    let sing = singular_set(&sol.u, 4.0 * h);
    assert!(!sing.is_empty());
    let x0 = sol.u.grid().node(sing[sing.len() / 2]);
    let trace = trace_singularity(&sol, &l, &x0, &geometric(0.2, 6), &probe_cfg()).unwrap();
    for (k, t) in trace.t_grid.iter().enumerate() {
        if *t <= trace.t2 {
            assert!(trace.singular[k], "t {t}");
        }
        assert!(trace.localization_slack[k] <= 1e-9);
    }
    assert!((trace.right_derivative[0] - trace.v0[0]).abs() <= 2.0 * h);
    assert!(trace.max_jump <= 2.0 * h);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn maximizers_stay_in_the_localization_ball(x in -0.8f64..0.8, t in 0.02f64..0.2) {
        let sol = double_well_solution();
        let x = (x / 0.02).round() * 0.02;
        let r = intrinsic_regularize(&sol, &double_well(), t, &[vec![x]], &RegularizeOptions::default());
        match r {
            Ok(r) => assert_localized(&r.probe_records),
            Err(Error::NonUniqueMaximizer { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
