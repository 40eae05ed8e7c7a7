mod common;

use common::{dist, line};
use hjreg::discounted::solve_discounted;
use hjreg::grid::{Boundary, Grid, GridFunction};
use hjreg::lagrangian::{hamiltonian_of, Drift, FreeParticle, Hamiltonian, Mechanical, TonelliLagrangian};
use hjreg::lasrylions::brute_force_q;
use hjreg::regularity::{
    convex_hull, default_cluster_tol, default_radius, hull_distance, is_singular, limiting_differentials,
    min_h_over_superdiff, semiconcavity_constant, singular_set, superdifferential, superdifferential_checked,
    Region, SuperdiffSet,
};
use hjreg::Error;
use proptest::prelude::*;
use std::sync::Arc;

fn square(lo: f64, hi: f64, n: usize) -> Grid {
    Grid::new(vec![lo, lo], vec![hi, hi], vec![n, n], Boundary::ConstantExtend).unwrap()
}

fn sorted(mut v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn set(vertices: Vec<Vec<f64>>) -> SuperdiffSet {
    let n = vertices[0].len();
    let hull = convex_hull(&vertices);
    let mut diameter: f64 = 0.0;
    for a in &hull {
        for b in &hull {
            diameter = diameter.max(dist(a, b));
        }
    }
    SuperdiffSet {
        x: vec![0.0; n],
        limiting: vertices,
        vertices: hull,
        diameter,
    }
}

#[derive(Debug)]
struct ShiftedQuadratic(Vec<f64>);

impl Hamiltonian for ShiftedQuadratic {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn value(&self, _t: f64, _x: &[f64], p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
    fn grad_p(&self, _t: f64, _x: &[f64], p: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(p).zip(&self.0) {
            *o = a - b;
        }
    }
    fn grad_x(&self, _t: f64, _x: &[f64], _p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn provenance(&self) -> hjreg::lagrangian::Provenance {
        hjreg::lagrangian::Provenance::ClosedForm
    }
}

#[test]
fn negative_abs_has_two_limiting_gradients() {
    let u = GridFunction::from_fn(line(-1.0, 1.0, 201), |x| -x[0].abs());
    let g = limiting_differentials(&u, &[0.0], default_radius(&u), default_cluster_tol(&u)).unwrap();
    let mut v: Vec<f64> = g.iter().map(|p| p[0]).collect();
    v.sort_by(f64::total_cmp);
    assert_eq!(v.len(), 2);
    assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
    let s = superdifferential(&u, &[0.0], default_radius(&u), default_cluster_tol(&u)).unwrap();
    assert!((s.diameter - 2.0).abs() < 1e-9);
    assert!(s.contains(&[0.0], 1e-12) && !s.contains(&[1.5], 1e-6));
}

#[test]
fn smooth_quadratic_has_exact_gradient() {
    for n in [101, 201, 401] {
        let u = GridFunction::from_fn(line(-1.0, 1.0, n), |x| 0.7 * x[0] * x[0] - 0.2 * x[0]);
        let x = u.grid().node(n / 3);
        let g = limiting_differentials(&u, &x, default_radius(&u), default_cluster_tol(&u)).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g[0][0] - (1.4 * x[0] - 0.2)).abs() < 1e-10);
        let s = superdifferential(&u, &x, default_radius(&u), default_cluster_tol(&u)).unwrap();
        assert!(s.is_singleton(u.grid().max_spacing()));
    }
}

#[test]
fn ridge_of_two_planes() {
    let (a, b) = ([0.5, 1.0], [-0.5, 0.25]);
    let u = GridFunction::from_fn(square(-0.3, 0.3, 61), |x| {
        (a[0] * x[0] + a[1] * x[1]).min(b[0] * x[0] + b[1] * x[1]) + 2.0
    });
    // On the ridge ⟨a − b, x⟩ = 0, e.g. x = (0.1, −0.1·(a₀−b₀)/(a₁−b₁)) ≈ a node near the origin.
    let g = limiting_differentials(&u, &[0.0, 0.0], default_radius(&u), default_cluster_tol(&u)).unwrap();
    let got = sorted(g.iter().map(|p| p.as_slice().to_vec()).collect());
    let want = sorted(vec![a.to_vec(), b.to_vec()]);
    assert_eq!(got.len(), 2);
    for (p, q) in got.iter().zip(&want) {
        assert!(dist(p, q) < 1e-9, "{p:?} vs {q:?}");
    }
}

#[test]
fn pyramid_has_square_superdifferential() {
    let u = GridFunction::from_fn(square(-0.2, 0.2, 41), |x| -x[0].abs().max(x[1].abs()));
    let s = superdifferential(&u, &[0.0, 0.0], default_radius(&u), default_cluster_tol(&u)).unwrap();
    let want = sorted(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]]);
    let got = sorted(s.vertices.clone());
    assert_eq!(got.len(), 4, "{got:?}");
    for (p, q) in got.iter().zip(&want) {
        assert!(dist(p, q) < 1e-6, "{p:?} vs {q:?}");
    }
    assert!(s.limiting_on_boundary(1e-9));
    assert!((s.diameter - 2.0).abs() < 1e-6);
}

#[test]
fn minimum_of_hamiltonian_over_intervals() {
    let s = set(vec![vec![-1.0], vec![1.0]]);
    let q = min_h_over_superdiff(&ShiftedQuadratic(vec![0.0]), 0.0, &[0.0], &s).unwrap();
    assert!(q.q[0].abs() < 1e-8 && q.value.abs() < 1e-12);
    let q = min_h_over_superdiff(&ShiftedQuadratic(vec![2.0]), 0.0, &[0.0], &s).unwrap();
    assert!((q.q[0] - 1.0).abs() < 1e-8);
    assert!((q.value - 0.5).abs() < 1e-8);
}

#[test]
fn minimum_of_hamiltonian_over_square_matches_dense_sampling() {
    let s = set(vec![vec![-1.0, -1.0], vec![1.0, -1.0], vec![1.0, 1.0], vec![-1.0, 1.0]]);
    for centre in [[0.3, 0.9], [1.4, 0.2], [-2.0, 3.0]] {
        let h = ShiftedQuadratic(centre.to_vec());
        let q = min_h_over_superdiff(&h, 0.0, &[0.0, 0.0], &s).unwrap();
        let mut best = (f64::INFINITY, vec![0.0, 0.0]);
        for i in 0..=2000 {
            for j in 0..=2000 {
                let p = [-1.0 + 1e-3 * i as f64, -1.0 + 1e-3 * j as f64];
                let v = h.value(0.0, &[0.0, 0.0], &p);
                if v < best.0 {
                    best = (v, p.to_vec());
                }
            }
        }
        assert!(dist(&q.q, &best.1) <= 1e-3, "{:?} vs {:?}", q.q, best.1);
        assert!(q.value <= best.0 + 1e-12);
        let clamped = [centre[0].clamp(-1.0, 1.0), centre[1].clamp(-1.0, 1.0)];
        assert!(dist(&q.q, &clamped) < 1e-8);
    }
}

#[test]
fn minimum_agrees_with_polytope_sampling_on_catalog() {
    let cat: Vec<Arc<dyn TonelliLagrangian>> = vec![
        Arc::new(FreeParticle::new(1)),
        Arc::new(Drift::new(vec![0.5])),
        Arc::new(Mechanical::double_well_cost(1)),
        Arc::new(FreeParticle::new(2)),
        Arc::new(Drift::new(vec![0.5, -1.5])),
    ];
    for l in cat {
        let h = hamiltonian_of(&l);
        let s = if l.dim() == 1 {
            set(vec![vec![-0.2], vec![0.9]])
        } else {
            set(vec![vec![-0.5, 0.1], vec![0.7, 0.3], vec![0.2, 1.1]])
        };
        let x = vec![0.1; l.dim()];
        let q = min_h_over_superdiff(h.as_ref(), 0.0, &x, &s).unwrap();
        let bf = brute_force_q(h.as_ref(), 0.0, &x, &s, 1e-6);
        assert!(dist(&q.q, &bf) <= 1e-6 || h.value(0.0, &x, &q.q) <= h.value(0.0, &x, &bf) + 1e-12,
            "{}: {:?} vs {:?}", l.label(), q.q, bf);
        assert!((h.value(0.0, &x, &q.q) - h.value(0.0, &x, &bf)).abs() <= 1e-6);
    }
}

#[test]
fn singular_sets_of_examples() {
    let smooth = GridFunction::from_fn(line(-1.0, 1.0, 201), |x| (2.0 * x[0]).sin());
    assert!(singular_set(&smooth, 4.0 * 0.01).is_empty());
    let kink = GridFunction::from_fn(line(-1.0, 1.0, 201), |x| -x[0].abs());
    let sing = singular_set(&kink, 4.0 * 0.01);
    assert!(!sing.is_empty() && sing.len() <= 3);
    for k in sing {
        assert!(kink.grid().node(k)[0].abs() <= 0.01 + 1e-12);
    }
    let (flag, s) = is_singular(&kink, &[0.0], 0.04).unwrap();
    assert!(flag && s.diameter > 1.9);
}

#[test]
fn lift_preserves_the_singular_set() {
    let l: Arc<dyn TonelliLagrangian> = Arc::new(Mechanical::double_well_cost(1));
    let sol = solve_discounted(&l, 0.5, &line(-1.6, 1.6, 161), 0.02, 1e-10).unwrap();
    let h = sol.u.grid().max_spacing();
    let base = singular_set(&sol.u, 4.0 * h);
    assert!(!base.is_empty());
    for t in [0.1, 0.5] {
        assert_eq!(singular_set(&sol.lift(t), 4.0 * h), base);
    }
}

#[test]
fn semiconcavity_constants() {
    let g = line(-1.0, 1.0, 201);
    let region = Region::new(vec![-0.8], vec![0.8]);
    let c = 1.7;
    let convex = GridFunction::from_fn(g.clone(), |x| c * x[0] * x[0] / 2.0);
    assert!((semiconcavity_constant(&convex, &region).constant - c).abs() < 1e-9);
    let concave = GridFunction::from_fn(g.clone(), |x| -c * x[0] * x[0] / 2.0);
    assert_eq!(semiconcavity_constant(&concave, &region).constant, 0.0);
    let linear = GridFunction::from_fn(g.clone(), |x| 0.3 * x[0] - 1.0);
    assert!(semiconcavity_constant(&linear, &region).constant < 1e-9);
    let kink = GridFunction::from_fn(g, |x| -x[0].abs() + x[0] * x[0]);
    let est = semiconcavity_constant(&kink, &region);
    assert!(est.masked > 0);
    assert!(est.masked_extreme >= 1.0 / 0.01);
    assert!((est.constant - 2.0).abs() < 1e-9);
}

#[test]
fn superdifferential_errors() {
    let u = GridFunction::from_fn(line(-1.0, 1.0, 201), |x| x[0].abs());
    assert!(matches!(
        superdifferential_checked(&u, &[0.0], 0.05, 0.1, 10.0),
        Err(Error::NotSemiconcave { .. })
    ));
    let v = GridFunction::from_fn(line(-1.0, 1.0, 201), |x| -x[0].abs());
    assert!(superdifferential_checked(&v, &[0.0], 0.05, 0.1, 10.0).is_ok());
    assert!(matches!(superdifferential(&v, &[0.0], 0.001, 0.1), Err(Error::InvalidInput(_))));
    // A field with a kink at every node has no differentiable neighbours.
    let saw = GridFunction::from_fn(line(-1.0, 1.0, 201), |x| -((x[0] * 100.0).round() % 2.0).abs() * 0.05);
    assert!(matches!(
        superdifferential(&saw, &[0.0], 0.05, 0.1),
        Err(Error::InsufficientSamples { .. })
    ));
}

#[test]
fn diameter_of_smooth_field_shrinks_with_spacing() {
    let mut prev = f64::INFINITY;
    for n in [51, 101, 201] {
        let u = GridFunction::from_fn(line(-1.0, 1.0, n), |x| (2.0 * x[0]).cos());
        let h = u.grid().max_spacing();
        let s = superdifferential(&u, &[0.123], default_radius(&u), default_cluster_tol(&u)).unwrap();
        assert!(s.diameter <= h, "n {n}: diameter {}", s.diameter);
        assert!(s.diameter <= prev + 1e-15);
        prev = s.diameter;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hull_contains_vertices_and_limiting_points_lie_on_boundary(
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 3..8),
    ) {
        let s = set(pts.clone());
        for v in &s.vertices {
            prop_assert!(hull_distance(&s.vertices, v) <= 1e-12);
        }
        for p in &pts {
            prop_assert!(s.contains(p, 1e-9));
        }
        prop_assert!(s.vertices.iter().all(|v| pts.contains(v)));
    }

    #[test]
    fn minimum_is_below_every_vertex(
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..6),
        centre in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let s = set(pts);
        let h = ShiftedQuadratic(centre);
        let q = min_h_over_superdiff(&h, 0.0, &[0.0, 0.0], &s).unwrap();
        prop_assert!(s.contains(&q.q, 1e-8));
        for v in &s.vertices {
            prop_assert!(q.value <= h.value(0.0, &[0.0, 0.0], v) + 1e-10);
        }
    }

    #[test]
    fn superdifferential_scales_with_the_field(alpha in 1.0f64..5.0, slope in 0.3f64..2.0) {
        let g = line(-1.0, 1.0, 101);
        let u = GridFunction::from_fn(g.clone(), |x| -slope * x[0].abs() + 0.2 * x[0]);
        let r = default_radius(&u);
        let c = default_cluster_tol(&u);
        let base = superdifferential(&u, &[0.0], r, c).unwrap();
        let scaled = superdifferential(&u.scaled(alpha), &[0.0], r, c).unwrap();
        let want = sorted(base.scaled(alpha).vertices);
        let got = sorted(scaled.vertices.clone());
        prop_assert_eq!(want.len(), got.len());
        for (p, q) in want.iter().zip(&got) {
            prop_assert!(dist(p, q) <= 1e-9 * alpha.max(1.0));
        }
        prop_assert!(scaled.limiting_on_boundary(1e-9));
    }
}
