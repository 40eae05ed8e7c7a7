//! Uniform box grids and sampled scalar fields on them.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::action::fmt_num;
use crate::error::{Error, Result};

/// How a grid function is extended beyond its box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Coordinates are clamped to the box.
    ConstantExtend,
    /// The box is a fundamental domain of a torus; `upper` is identified
    /// with `lower` and is not itself a node.
    Periodic,
}

/// Axis-aligned uniform grid. Nodes are stored with the last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub boundary: Boundary,
}

impl Grid {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        counts: Vec<usize>,
        boundary: Boundary,
    ) -> Result<Self> {
        let n = lower.len();
        if n == 0 || upper.len() != n || counts.len() != n {
            return Err(Error::InvalidInput("grid axes must agree and be nonempty".into()));
        }
        for a in 0..n {
            if !(lower[a] < upper[a]) || !lower[a].is_finite() || !upper[a].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "axis {a}: need lower < upper, got [{}, {}]",
                    lower[a], upper[a]
                )));
            }
            if counts[a] < 2 {
                return Err(Error::InvalidInput(format!("axis {a}: need at least 2 nodes")));
            }
        }
        Ok(Self {
            lower,
            upper,
            counts,
            boundary,
        })
    }

    /// One-dimensional grid.
    pub fn line(lower: f64, upper: f64, count: usize, boundary: Boundary) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![count], boundary)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn divisions(&self, a: usize) -> f64 {
        match self.boundary {
            Boundary::ConstantExtend => (self.counts[a] - 1) as f64,
            Boundary::Periodic => self.counts[a] as f64,
        }
    }

    pub fn spacing(&self, a: usize) -> f64 {
        (self.upper[a] - self.lower[a]) / self.divisions(a)
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    /// Coordinate of (possibly out-of-range) integer index `i` on axis `a`.
    ///
    /// The convex-combination form makes grids on symmetric boxes exactly
    /// symmetric about the origin.
    pub fn coord(&self, a: usize, i: i64) -> f64 {
        let m = self.divisions(a);
        let i = i as f64;
        (self.lower[a] * (m - i) + self.upper[a] * i) / m
    }

    pub fn axis(&self, a: usize) -> Vec<f64> {
        (0..self.counts[a] as i64).map(|i| self.coord(a, i)).collect()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let n = self.dim();
        let mut idx = vec![0; n];
        for a in (0..n).rev() {
            idx[a] = flat % self.counts[a];
            flat /= self.counts[a];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.counts)
            .fold(0, |acc, (i, c)| acc * c + i)
    }

    /// Flat index of an integer index that may lie outside the grid:
    /// wrapped for periodic grids, `None` otherwise.
    pub fn resolve(&self, idx: &[i64]) -> Option<usize> {
        let mut flat = 0;
        for (a, &i) in idx.iter().enumerate() {
            let c = self.counts[a] as i64;
            let j = match self.boundary {
                Boundary::Periodic => i.rem_euclid(c),
                Boundary::ConstantExtend if (0..c).contains(&i) => i,
                Boundary::ConstantExtend => return None,
            };
            flat = flat * self.counts[a] + j as usize;
        }
        Some(flat)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coord(a, i as i64))
            .collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    /// Index of the node nearest to `x` (wrapped for periodic grids).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<i64> = (0..self.dim())
            .map(|a| {
                let i = ((x[a] - self.lower[a]) / self.spacing(a)).round() as i64;
                match self.boundary {
                    Boundary::Periodic => i,
                    Boundary::ConstantExtend => i.clamp(0, self.counts[a] as i64 - 1),
                }
            })
            .collect();
        self.resolve(&idx).expect("clamped index")
    }

    /// True when the closed ball of radius `r` around `x` lies in the box
    /// (always true for periodic grids).
    pub fn contains_ball(&self, x: &[f64], r: f64) -> bool {
        match self.boundary {
            Boundary::Periodic => true,
            Boundary::ConstantExtend => (0..self.dim()).all(|a| {
                let slack = 1e-12 * (1.0 + x[a].abs());
                x[a] - r >= self.lower[a] - slack && x[a] + r <= self.upper[a] + slack
            }),
        }
    }

    /// Sub-grid of the nodes at distance at least `margin` from the
    /// boundary. Periodic grids are returned unchanged.
    pub fn interior(&self, margin: f64) -> Option<Grid> {
        if self.boundary == Boundary::Periodic {
            return Some(self.clone());
        }
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for a in 0..self.dim() {
            let h = self.spacing(a);
            let k = (margin / h - 1e-9).ceil().max(0.0) as i64;
            let last = self.counts[a] as i64 - 1 - k;
            if last - k < 1 {
                return None;
            }
            lo.push(k);
            hi.push(last);
        }
        Some(self.sub_box(&lo, &hi))
    }

    /// Grid of the nodes with integer indices in `[lo, hi]` on every axis.
    pub fn sub_box(&self, lo: &[i64], hi: &[i64]) -> Grid {
        let n = self.dim();
        Grid {
            lower: (0..n).map(|a| self.coord(a, lo[a])).collect(),
            upper: (0..n).map(|a| self.coord(a, hi[a])).collect(),
            counts: (0..n).map(|a| (hi[a] - lo[a] + 1) as usize).collect(),
            boundary: Boundary::ConstantExtend,
        }
    }

    /// Grid on the same box refined by an integer `factor` per axis.
    pub fn refined(&self, factor: usize) -> Grid {
        let counts = self
            .counts
            .iter()
            .map(|&c| match self.boundary {
                Boundary::ConstantExtend => (c - 1) * factor + 1,
                Boundary::Periodic => c * factor,
            })
            .collect();
        Grid {
            counts,
            ..self.clone()
        }
    }
}

/// Box, spacing and boundary policy of a grid function, as written next to its CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub spacing: Vec<f64>,
    pub boundary: Boundary,
    pub lipschitz: f64,
}

/// Scalar field sampled at the nodes of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = grid.nodes().map(|x| f(&x)).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Value at an integer index that may lie outside the grid: wrapped for
    /// periodic grids, clamped otherwise.
    pub fn at(&self, idx: &[i64]) -> f64 {
        match self.grid.boundary {
            Boundary::Periodic => self.values[self.grid.resolve(idx).unwrap()],
            Boundary::ConstantExtend => {
                let clamped: Vec<i64> = idx
                    .iter()
                    .zip(&self.grid.counts)
                    .map(|(&i, &c)| i.clamp(0, c as i64 - 1))
                    .collect();
                self.values[self.grid.resolve(&clamped).unwrap()]
            }
        }
    }

    /// Multilinear interpolation; outside the box the boundary policy applies.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut base = vec![0i64; n];
        let mut frac = vec![0.0; n];
        self.locate(x, &mut base, &mut frac);
        let mut total = 0.0;
        let mut idx = vec![0i64; n];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            for a in 0..n {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] + bit as i64;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                total += w * self.at(&idx);
            }
        }
        total
    }

    /// Gradient of the multilinear interpolant in the cell containing `x`.
    pub fn interpolate_gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut base = vec![0i64; n];
        let mut frac = vec![0.0; n];
        self.locate(x, &mut base, &mut frac);
        let mut grad = vec![0.0; n];
        let mut idx = vec![0i64; n];
        for corner in 0..(1usize << n) {
            for a in 0..n {
                idx[a] = base[a] + ((corner >> a) & 1) as i64;
            }
            let v = self.at(&idx);
            for (g, d) in grad.iter_mut().enumerate() {
                let mut w = 1.0;
                for a in 0..n {
                    let bit = (corner >> a) & 1;
                    w *= if a == g {
                        if bit == 1 { 1.0 } else { -1.0 }
                    } else if bit == 1 {
                        frac[a]
                    } else {
                        1.0 - frac[a]
                    };
                }
                *d += w * v / self.grid.spacing(g);
            }
        }
        grad
    }

    fn locate(&self, x: &[f64], base: &mut [i64], frac: &mut [f64]) {
        let g = &self.grid;
        for a in 0..self.dim() {
            let h = g.spacing(a);
            match g.boundary {
                Boundary::Periodic => {
                    let u = (x[a] - g.lower[a]) / h;
                    let f = u.floor();
                    base[a] = f as i64;
                    frac[a] = u - f;
                }
                Boundary::ConstantExtend => {
                    let c = g.counts[a] as i64;
                    let u = ((x[a] - g.lower[a]) / h).clamp(0.0, (c - 1) as f64);
                    let f = u.floor().min((c - 2) as f64);
                    base[a] = f as i64;
                    frac[a] = u - f;
                }
            }
        }
    }

    /// Lipschitz constant of the multilinear interpolant:
    /// Euclidean combination of the per-axis maximal difference quotients.
    pub fn lipschitz(&self) -> f64 {
        let g = &self.grid;
        let n = self.dim();
        let mut per_axis = vec![0.0_f64; n];
        for k in 0..self.values.len() {
            let idx: Vec<i64> = g.multi_index(k).iter().map(|&i| i as i64).collect();
            for a in 0..n {
                let mut j = idx.clone();
                j[a] += 1;
                if let Some(m) = g.resolve(&j) {
                    per_axis[a] = per_axis[a].max((self.values[m] - self.values[k]).abs() / g.spacing(a));
                }
            }
        }
        per_axis.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn shifted(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// Samples `self` (by interpolation) on the nodes of `grid`.
    pub fn resample(&self, grid: &Grid) -> Self {
        Self::from_fn(grid.clone(), |x| self.interpolate(x))
    }

    /// `max |self − other|` over the nodes of `self`, interpolating `other`.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.grid
            .nodes()
            .zip(&self.values)
            .map(|(x, v)| (v - other.interpolate(&x)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            lower: self.grid.lower.clone(),
            upper: self.grid.upper.clone(),
            counts: self.grid.counts.clone(),
            spacing: (0..self.dim()).map(|a| self.grid.spacing(a)).collect(),
            boundary: self.grid.boundary,
            lipschitz: self.lipschitz(),
        }
    }

    /// Writes `x1..xn,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        writeln!(w, "{}", header.join(","))?;
        for (x, v) in self.grid.nodes().zip(&self.values) {
            let mut row: Vec<String> = x.iter().map(|c| fmt_num(*c)).collect();
            row.push(fmt_num(*v));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_box_has_exact_origin() {
        let g = Grid::line(-1.6, 1.6, 161, Boundary::ConstantExtend).unwrap();
        assert_eq!(g.coord(0, 80), 0.0);
        for i in 0..161 {
            assert_eq!(g.coord(0, i), -g.coord(0, 160 - i));
        }
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![5, 9], Boundary::ConstantExtend).unwrap();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let u = GridFunction::from_fn(g, f);
        for p in [[0.33, 0.1], [0.9, -0.77], [0.0, 1.0]] {
            assert!((u.interpolate(&p) - f(&p)).abs() < 1e-13);
        }
        let grad = u.interpolate_gradient(&[0.3, 0.2]);
        assert!((grad[0] - (2.0 + 0.5 * 0.2)).abs() < 1e-12);
        assert!((grad[1] - (-1.0 + 0.5 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn periodic_wraps() {
        let g = Grid::line(0.0, 1.0, 10, Boundary::Periodic).unwrap();
        let u = GridFunction::from_fn(g, |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        assert!((u.interpolate(&[1.3]) - u.interpolate(&[0.3])).abs() < 1e-14);
        assert!((u.interpolate(&[-0.7]) - u.interpolate(&[0.3])).abs() < 1e-14);
    }

    #[test]
    fn interior_and_refine() {
        let g = Grid::line(-2.0, 2.0, 41, Boundary::ConstantExtend).unwrap();
        let s = g.interior(0.5).unwrap();
        assert_eq!(s.counts[0], 31);
        assert!((s.lower[0] + 1.5).abs() < 1e-12);
        assert_eq!(g.refined(4).counts[0], 161);
    }
}
