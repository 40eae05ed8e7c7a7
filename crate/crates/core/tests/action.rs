use std::sync::Arc;
use std::time::Instant;

use approx::assert_relative_eq;
use hjreg::action::{
    dual_arc, gradients_a, minimize_action, minimize_action_with, probe_compact_containment, probe_convexity,
    probe_semiconcavity, probe_velocity_bounds, Cone, ProbeConfig, SolverOptions,
};
use hjreg::lagrangian::{
    discount_lift, hamiltonian_of, AnisotropicQuadratic, Drift, FreeParticle, Mechanical, PotentialKind,
    TonelliLagrangian,
};
use hjreg::search::brent_min;
use hjreg::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arc<L: TonelliLagrangian + 'static>(l: L) -> Arc<dyn TonelliLagrangian> {
    Arc::new(l)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `λ|y − x|²/(2(e^{−λs} − e^{−λt}))` for the lifted free particle.
fn discounted_free(lambda: f64, s: f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
    lambda * dist(x, y).powi(2) / (2.0 * ((-lambda * s).exp() - (-lambda * t).exp()))
}

fn point(rng: &mut ChaCha8Rng, n: usize, w: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-w..=w)).collect()
}

#[test]
fn free_particle_straight_line() {
    let l = FreeParticle::new(1);
    let fs = minimize_action(&l, 0.0, 1.0, &[0.0], &[2.0], 16, 1e-8).unwrap();
    assert_relative_eq!(fs.value, 2.0, epsilon = 1e-10);
    assert_relative_eq!(fs.grad_y[0], 2.0, epsilon = 1e-8);
    assert_relative_eq!(fs.grad_x[0], -2.0, epsilon = 1e-8);
    for (tau, node) in fs.minimizer.times.iter().zip(&fs.minimizer.nodes) {
        assert!((node[0] - 2.0 * tau).abs() < 1e-10);
    }
    assert_eq!(fs.minimizer.start()[0], 0.0);
    assert_eq!(fs.minimizer.end()[0], 2.0);
    assert_eq!(fs.minimizer.start_time(), 0.0);
    assert_eq!(fs.minimizer.end_time(), 1.0);
    assert!(fs.residual <= fs.tol);
}

#[test]
fn free_particle_staying_put_costs_nothing() {
    let l = FreeParticle::new(2);
    let fs = minimize_action(&l, 0.2, 0.7, &[0.3, -0.4], &[0.3, -0.4], 8, 1e-8).unwrap();
    assert!(fs.value.abs() < 1e-14);
    assert!(fs.grad_x.norm() < 1e-12 && fs.grad_y.norm() < 1e-12);
    for node in &fs.minimizer.nodes {
        assert!(dist(node.as_slice(), &[0.3, -0.4]) < 1e-12);
    }
}

#[test]
fn discounted_free_particle_example() {
    let l = discount_lift(arc(FreeParticle::new(1)), 1.0, 1.0).unwrap();
    let fs = minimize_action(&l, 0.0, 0.5, &[0.0], &[1.0], 16, 1e-10).unwrap();
    let exact = 1.0 / (2.0 * (1.0 - (-0.5f64).exp()));
    assert_relative_eq!(exact, 1.27075, epsilon = 1e-5);
    assert!((fs.value - exact).abs() / exact <= 1e-6);
    // The momentum e^{λτ}ξ̇(τ) is conserved along the Euler-Lagrange flow.
    let c = 1.0 / (1.0 - (-0.5f64).exp());
    for p in &fs.dual.momenta {
        assert!((p[0] - c).abs() < 1e-6, "momentum {} vs {c}", p[0]);
    }
    // D_y A = e^{λt} ξ̇(t) = c, checked against finite differences as well.
    let h = 1e-5;
    let vp = minimize_action(&l, 0.0, 0.5, &[0.0], &[1.0 + h], 16, 1e-10).unwrap().value;
    let vm = minimize_action(&l, 0.0, 0.5, &[0.0], &[1.0 - h], 16, 1e-10).unwrap().value;
    assert!((fs.grad_y[0] - (vp - vm) / (2.0 * h)).abs() < 1e-6);
    assert!((fs.grad_y[0] - c).abs() < 1e-6);
}

#[test]
fn free_particle_oracle_over_random_instances() {
    let l = FreeParticle::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = point(&mut rng, 2, 1.0);
        let y = point(&mut rng, 2, 1.0);
        let s = rng.gen_range(-0.5..0.5);
        let t = s + rng.gen_range(0.05..=0.5);
        let exact = dist(&x, &y).powi(2) / (2.0 * (t - s));
        let fs = minimize_action(&l, s, t, &x, &y, 16, 1e-10).unwrap();
        worst = worst.max((fs.value - exact).abs() / exact);
    }
    assert!(worst <= 1e-6, "max relative error {worst}");
    assert!(start.elapsed().as_secs_f64() <= 30.0);
}

#[test]
fn discounted_kernel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for lambda in [0.5, 1.0, 2.0] {
        let l = discount_lift(arc(FreeParticle::new(1)), lambda, 1.0).unwrap();
        for _ in 0..20 {
            let x = point(&mut rng, 1, 1.0);
            let y = point(&mut rng, 1, 1.0);
            let t = rng.gen_range(0.05..=0.5);
            let exact = discounted_free(lambda, 0.0, t, &x, &y);
            let fs = minimize_action(&l, 0.0, t, &x, &y, 16, 1e-10).unwrap();
            assert!((fs.value - exact).abs() <= 1e-6 * exact, "lambda {lambda}: {} vs {exact}", fs.value);
        }
    }
}

#[test]
fn dual_arc_matches_velocity_derivative_at_nodes() {
    let l = Mechanical::new(1, PotentialKind::Cos);
    let fs = minimize_action(&l, 0.0, 0.4, &[0.2], &[0.9], 16, 1e-10).unwrap();
    let arc = dual_arc(&l, &fs.minimizer);
    for ((t, x), (v, p)) in fs
        .minimizer
        .times
        .iter()
        .zip(&fs.minimizer.nodes)
        .zip(fs.minimizer.velocities.iter().zip(&arc.momenta))
    {
        let mut lv = [0.0];
        l.grad_v(*t, x.as_slice(), v.as_slice(), &mut lv);
        assert!((lv[0] - p[0]).abs() <= 1e-8);
    }
    assert_eq!(arc, fs.dual);
    let straight = dual_arc(
        &FreeParticle::new(1),
        &minimize_action(&FreeParticle::new(1), 0.0, 1.0, &[1.0], &[-0.5], 8, 1e-10)
            .unwrap()
            .minimizer,
    );
    assert!(straight.momenta.iter().all(|p| (p[0] + 1.5).abs() < 1e-10));
}

#[test]
fn dual_arc_follows_hamiltonian_flow() {
    let base = arc(Mechanical::new(1, PotentialKind::Cos));
    let h = hamiltonian_of(&base);
    let (s, t, x, y) = (0.0, 0.5, 0.3, 1.1);
    let fs = minimize_action(base.as_ref(), s, t, &[x], &[y], 32, 1e-10).unwrap();
    // RK4 on (x, p) from (x, p(s)).
    let rhs = |q: f64, p: f64| (h.grad_p_vec(0.0, &[q], &[p])[0], -h.grad_x_vec(0.0, &[q], &[p])[0]);
    let steps = 3200;
    let dt = (t - s) / steps as f64;
    let (mut q, mut p) = (x, fs.dual.momenta[0][0]);
    let times = &fs.dual.times;
    let mut next = 1;
    for k in 0..steps {
        let (k1q, k1p) = rhs(q, p);
        let (k2q, k2p) = rhs(q + 0.5 * dt * k1q, p + 0.5 * dt * k1p);
        let (k3q, k3p) = rhs(q + 0.5 * dt * k2q, p + 0.5 * dt * k2p);
        let (k4q, k4p) = rhs(q + dt * k3q, p + dt * k3p);
        q += dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        p += dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        let tau = s + (k + 1) as f64 * dt;
        while next < times.len() && (times[next] - tau).abs() < 1e-9 {
            assert!((fs.dual.momenta[next][0] - p).abs() < 1e-6, "p at {tau}");
            assert!((fs.minimizer.nodes[next][0] - q).abs() < 1e-6, "x at {tau}");
            next += 1;
        }
    }
    assert_eq!(next, times.len());
}

#[test]
fn gradients_require_convergence_and_cone() {
    let l = FreeParticle::new(1);
    let fs = minimize_action(&l, 0.0, 0.5, &[0.0], &[0.4], 8, 1e-8).unwrap();
    let (gx, gy) = gradients_a(&fs, Some(&Cone { slope: 1.0, max_gap: 0.6 })).unwrap();
    assert_relative_eq!(gx[0], -0.8, epsilon = 1e-8);
    assert_relative_eq!(gy[0], 0.8, epsilon = 1e-8);
    let err = gradients_a(&fs, Some(&Cone { slope: 0.5, max_gap: 0.6 })).unwrap_err();
    assert!(matches!(err, Error::ConeViolation { .. }));
    let mut bad = fs.clone();
    bad.residual = 1.0;
    assert!(matches!(gradients_a(&bad, None), Err(Error::NoConvergence { .. })));
}

#[test]
fn gradient_formulas_match_finite_differences_across_catalog() {
    let cat: Vec<Arc<dyn TonelliLagrangian>> = vec![
        arc(FreeParticle::new(2)),
        arc(Drift::new(vec![0.5])),
        arc(Mechanical::new(1, PotentialKind::Cos).with_amplitude(0.5)),
        arc(Mechanical::double_well_cost(1)),
        arc(AnisotropicQuadratic::new(vec![1.0, 2.0], 0.3)),
        arc(discount_lift(arc(FreeParticle::new(1)), 1.0, 1.0).unwrap()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = SolverOptions {
        tol: 1e-10,
        ..SolverOptions::default()
    };
    for l in &cat {
        let n = l.dim();
        for _ in 0..3 {
            let x = point(&mut rng, n, 1.0);
            let y = point(&mut rng, n, 1.0);
            let s = if l.is_time_independent() { rng.gen_range(-0.5..0.5) } else { 0.0 };
            let t = s + rng.gen_range(0.1..=0.5);
            let fs = minimize_action_with(l.as_ref(), s, t, &x, &y, &opts).unwrap();
            let h = 1e-5;
            for i in 0..n {
                let shift = |v: &[f64], d: f64| {
                    let mut w = v.to_vec();
                    w[i] += d;
                    w
                };
                let val = |a: &[f64], b: &[f64]| minimize_action_with(l.as_ref(), s, t, a, b, &opts).unwrap().value;
                let fx = (val(&shift(&x, h), &y) - val(&shift(&x, -h), &y)) / (2.0 * h);
                let fy = (val(&x, &shift(&y, h)) - val(&x, &shift(&y, -h))) / (2.0 * h);
                let sx = fs.grad_x.norm().max(1e-3);
                let sy = fs.grad_y.norm().max(1e-3);
                assert!((fx - fs.grad_x[i]).abs() / sx <= 1e-3, "{} grad_x", l.label());
                assert!((fy - fs.grad_y[i]).abs() / sy <= 1e-3, "{} grad_y", l.label());
            }
        }
    }
}

#[test]
fn subdivision_consistency_on_closed_forms() {
    let free = FreeParticle::new(1);
    let lifted = discount_lift(arc(FreeParticle::new(1)), 1.0, 1.0).unwrap();
    let cases: [(&dyn TonelliLagrangian, Option<f64>); 2] = [(&free, None), (&lifted, Some(1.0))];
    let (s, tau, t, x, y) = (0.0, 0.3, 0.8, -0.2, 0.9);
    for (l, lambda) in cases {
        let a = |s0: f64, t0: f64, p: f64, q: f64| match lambda {
            Some(lam) => discounted_free(lam, s0, t0, &[p], &[q]),
            None => (q - p).powi(2) / (2.0 * (t0 - s0)),
        };
        let split = |m: f64| {
            minimize_action(l, s, tau, &[x], &[m], 16, 1e-10).unwrap().value
                + minimize_action(l, tau, t, &[m], &[y], 16, 1e-10).unwrap().value
        };
        let (_, best) = brent_min(split, -1.0, 2.0, 1e-10);
        let direct = minimize_action(l, s, t, &[x], &[y], 16, 1e-10).unwrap().value;
        assert!((best - direct).abs() <= 1e-5, "{best} vs {direct}");
        assert!((direct - a(s, t, x, y)).abs() <= 1e-8);
    }
}

#[test]
fn refinement_never_increases_the_value() {
    let l = Mechanical::new(1, PotentialKind::Cos);
    let tol = 1e-8;
    let mut prev = f64::INFINITY;
    for n in [4, 8, 16, 32] {
        let v = minimize_action(&l, 0.0, 0.6, &[-0.4], &[0.7], n, tol).unwrap().value;
        assert!(v <= prev + tol, "n = {n}: {v} > {prev}");
        prev = v;
    }
}

#[test]
fn quadratic_minimizer_is_independent_of_segments() {
    let l = AnisotropicQuadratic::new(vec![1.0, 2.0], 0.0);
    let (x, y) = ([0.1, -0.3], [0.6, 0.2]);
    let a = minimize_action(&l, 0.0, 0.5, &x, &y, 4, 1e-10).unwrap();
    let b = minimize_action(&l, 0.0, 0.5, &x, &y, 32, 1e-10).unwrap();
    for k in 0..=20 {
        let tau = 0.5 * k as f64 / 20.0;
        let d = (a.minimizer.position(tau) - b.minimizer.position(tau)).norm();
        assert!(d < 1e-3 / 16.0, "tau {tau}: {d}");
    }
}

#[test]
fn solver_rejects_bad_input() {
    let l = FreeParticle::new(1);
    assert!(matches!(minimize_action(&l, 0.0, 1.0, &[0.0], &[1.0], 1, 1e-8), Err(Error::InvalidInput(_))));
    assert!(matches!(minimize_action(&l, 1.0, 0.5, &[0.0], &[1.0], 8, 1e-8), Err(Error::InvalidInput(_))));
    let lifted = discount_lift(arc(FreeParticle::new(1)), 1.0, 0.5).unwrap();
    assert!(matches!(
        minimize_action(&lifted, 0.0, 0.8, &[0.0], &[1.0], 8, 1e-8),
        Err(Error::OutOfWindow { .. })
    ));
}

fn cfg(samples: usize) -> ProbeConfig {
    ProbeConfig {
        samples,
        ..ProbeConfig::default()
    }
}

#[test]
fn free_particle_constants_are_exact() {
    let l = arc(FreeParticle::new(1));
    let vb = probe_velocity_bounds(l.as_ref(), &[0.0], 1.0, &[(0.0, 0.1), (0.0, 0.2), (0.0, 0.4)], &cfg(60));
    assert!(vb.passed(), "{:?}", vb.violations);
    let table = &vb.tables["kappa_T"];
    for row in &table.rows {
        assert!((row[1] - row[0]).abs() <= 1e-6 * row[0].max(1.0), "kappa_T({}) = {}", row[0], row[1]);
    }
    let sc = probe_semiconcavity(&l, &[0.0], 0.0, &[0.1, 0.2, 0.4], 1.0, &cfg(60));
    assert!(sc.passed(), "{:?}", sc.violations);
    assert!((sc.constant("C_lambda").unwrap() - 1.0).abs() <= 1e-6);
    let cv = probe_convexity(&l, &[0.0], 0.0, 1.0, &[0.05, 0.1, 0.2, 0.4], &cfg(60));
    assert!(cv.passed(), "{:?}", cv.violations);
    assert!((cv.constant("C_lambda_ppp").unwrap() - 1.0).abs() <= 1e-6);
    let cc = probe_compact_containment(l.as_ref(), &[0.0], 1.0, 0.0, 0.5, &cfg(40));
    assert!(cc.passed(), "{:?}", cc.violations);
}

#[test]
fn mechanical_probes_report_no_violations() {
    let l = arc(Mechanical::new(1, PotentialKind::Cos));
    let vb = probe_velocity_bounds(l.as_ref(), &[0.3], 1.0, &[(0.0, 0.1), (0.0, 0.2), (0.0, 0.4)], &cfg(60));
    assert!(vb.passed(), "{:?}", vb.violations);
    let k = vb.tables["kappa_T"].column("kappa_T").unwrap();
    assert!(k.windows(2).all(|w| w[0] <= w[1]));
    let cv = probe_convexity(&l, &[0.3], 0.0, 1.0, &[0.05, 0.1, 0.2, 0.4], &cfg(60));
    assert!(cv.passed(), "{:?}", cv.violations);
    assert!(cv.constant("C_lambda_ppp").unwrap() > 0.0);
    let lifted = arc(discount_lift(arc(FreeParticle::new(1)), 1.0, 1.0).unwrap());
    let sc = probe_semiconcavity(&lifted, &[0.0], 0.0, &[0.1, 0.2, 0.4], 1.0, &cfg(60));
    assert!(sc.passed(), "{:?}", sc.violations);
    assert!(sc.constant("C_lambda").unwrap().is_finite());
}

#[test]
fn probes_are_deterministic() {
    let l = arc(Mechanical::new(1, PotentialKind::Cos));
    let a = probe_semiconcavity(&l, &[0.0], 0.0, &[0.1, 0.2], 1.0, &cfg(20));
    let b = probe_semiconcavity(&l, &[0.0], 0.0, &[0.1, 0.2], 1.0, &cfg(20));
    assert_eq!(a.to_json(), b.to_json());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn action_satisfies_triangle_inequality(
        x in -1.0f64..1.0, m in -1.0f64..1.0, y in -1.0f64..1.0, split in 0.2f64..0.8,
    ) {
        let l = Mechanical::new(1, PotentialKind::Cos).with_amplitude(0.5);
        let (s, t) = (0.0, 0.5);
        let tau = s + split * (t - s);
        let a = |s0: f64, t0: f64, p: f64, q: f64| minimize_action(&l, s0, t0, &[p], &[q], 16, 1e-10).unwrap().value;
        prop_assert!(a(s, t, x, y) <= a(s, tau, x, m) + a(tau, t, m, y) + 1e-8);
    }
}
