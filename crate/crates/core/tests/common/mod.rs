#![allow(dead_code)]

use std::sync::Arc;

use hjreg::discounted::DiscountedSolution;
use hjreg::grid::{Boundary, Grid, GridFunction};
use hjreg::lagrangian::TonelliLagrangian;
use hjreg::laxoleinik::{LaxOutput, MaximizerRecord};

pub fn arc<L: TonelliLagrangian + 'static>(l: L) -> Arc<dyn TonelliLagrangian> {
    Arc::new(l)
}

pub fn line(lo: f64, hi: f64, n: usize) -> Grid {
    Grid::line(lo, hi, n, Boundary::ConstantExtend).unwrap()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Every optimizer lies within `κ₀·gap` of its base point.
pub fn assert_localized(records: &[MaximizerRecord]) {
    for r in records {
        for y in &r.maximizers {
            let d = dist(y, &r.x);
            assert!(
                d <= r.kappa0 * r.gap * (1.0 + 1e-9) + 1e-12,
                "maximizer {y:?} of {:?} at distance {d} exceeds kappa0 * gap = {}",
                r.x,
                r.kappa0 * r.gap
            );
        }
    }
}

pub fn assert_output_localized(out: &LaxOutput) {
    assert_localized(&out.records);
}

/// A solution record around a hand-made field.
pub fn manual_solution(u: GridFunction, lambda: f64) -> DiscountedSolution {
    DiscountedSolution {
        lambda,
        dt: 0.01,
        u,
        residual: 0.0,
        residual_nodes: 0,
        iterations: 0,
        contraction_factor: 1.0,
        measured_contraction: 0.0,
        fixed_point_defect: 0.0,
        tol_fp: 1e-9,
    }
}
