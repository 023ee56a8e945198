//! Node grid on the unit square, nodal fields and boundary subsets.
//!
//! Nodes are `(i, j)` with `0 <= i <= nx`, `0 <= j <= ny`, stored row-major in
//! `j` then `i`. Boundary nodes are ordered by the perimeter coordinate
//! `s in [0, 4)`, which runs counterclockwise from the corner `(0, 0)` with
//! every edge contributing length one.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_CELLS: usize = 8;

const COORD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

/// Builds the node grid of the unit square with `nx` by `ny` cells.
pub fn build_grid(nx: usize, ny: usize) -> Result<Grid2D> {
    Grid2D::new(nx, ny)
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < MIN_CELLS || ny < MIN_CELLS {
            return Err(Error::GridTooCoarse { nx, ny });
        }
        Ok(Self {
            nx,
            ny,
            hx: 1.0 / nx as f64,
            hy: 1.0 / ny as f64,
        })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn boundary_count(&self) -> usize {
        2 * (self.nx + self.ny)
    }

    pub fn interior_count(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    /// Row stride of the node numbering.
    pub fn stride(&self) -> usize {
        self.nx + 1
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    #[inline]
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.ij(node);
        [i as f64 * self.hx, j as f64 * self.hy]
    }

    #[inline]
    pub fn is_boundary_ij(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    #[inline]
    pub fn is_boundary(&self, node: usize) -> bool {
        let (i, j) = self.ij(node);
        self.is_boundary_ij(i, j)
    }

    /// Perimeter coordinate of a boundary node, `None` for interior nodes.
    pub fn perimeter_coord(&self, node: usize) -> Option<f64> {
        let (i, j) = self.ij(node);
        if !self.is_boundary_ij(i, j) {
            return None;
        }
        let x = i as f64 * self.hx;
        let y = j as f64 * self.hy;
        let s = if j == 0 && i < self.nx {
            x
        } else if i == self.nx && j < self.ny {
            1.0 + y
        } else if j == self.ny && i > 0 {
            2.0 + (1.0 - x)
        } else {
            3.0 + (1.0 - y)
        };
        Some(s)
    }

    /// Boundary nodes in increasing perimeter coordinate.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = Vec::with_capacity(self.boundary_count());
        for i in 0..nx {
            out.push(self.index(i, 0));
        }
        for j in 0..ny {
            out.push(self.index(nx, j));
        }
        for i in (1..=nx).rev() {
            out.push(self.index(i, ny));
        }
        for j in (1..=ny).rev() {
            out.push(self.index(0, j));
        }
        out
    }

    /// Interior nodes in storage order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.interior_count());
        for j in 1..self.ny {
            for i in 1..self.nx {
                out.push(self.index(i, j));
            }
        }
        out
    }

    /// Maps node index to its position in [`Grid2D::boundary_nodes`].
    pub fn boundary_ordinals(&self) -> Vec<Option<usize>> {
        let mut ord = vec![None; self.node_count()];
        for (k, n) in self.boundary_nodes().into_iter().enumerate() {
            ord[n] = Some(k);
        }
        ord
    }

    /// Trapezoidal quadrature weights on the unit square.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.node_count());
        for j in 0..=self.ny {
            let wy = if j == 0 || j == self.ny { 0.5 } else { 1.0 } * self.hy;
            for i in 0..=self.nx {
                let wx = if i == 0 || i == self.nx { 0.5 } else { 1.0 } * self.hx;
                w.push(wx * wy);
            }
        }
        w
    }
}

/// Complex nodal field on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.node_count()],
        }
    }

    pub fn constant(grid: Grid2D, c: Complex64) -> Self {
        Self {
            grid,
            values: vec![c; grid.node_count()],
        }
    }

    pub fn from_values(grid: Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidInput(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidInput("field contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let values = (0..grid.node_count())
            .map(|n| {
                let [x, y] = grid.coords(n);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn from_real_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn(grid, |x, y| Complex64::new(f(x, y), 0.0))
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn boundary_trace(&self) -> BoundaryData {
        BoundaryData {
            grid: self.grid,
            values: self
                .grid
                .boundary_nodes()
                .into_iter()
                .map(|n| self.values[n])
                .collect(),
        }
    }

    /// Trapezoidal integral over the unit square.
    pub fn integrate(&self) -> Complex64 {
        self.grid
            .trapezoid_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| v * *w)
            .sum()
    }

    /// Trapezoidal L2 norm.
    pub fn l2_norm(&self) -> f64 {
        self.grid
            .trapezoid_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Dirichlet data on the boundary nodes, in perimeter order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl BoundaryData {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.boundary_count()],
        }
    }

    pub fn from_values(grid: Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.boundary_count() {
            return Err(Error::InvalidInput(format!(
                "boundary data has {} values, grid has {} boundary nodes",
                values.len(),
                grid.boundary_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let values = grid
            .boundary_nodes()
            .into_iter()
            .map(|n| {
                let [x, y] = grid.coords(n);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn from_real_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn(grid, |x, y| Complex64::new(f(x, y), 0.0))
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// `sum_k coeffs[k] * parts[k]`.
    pub fn combination(grid: Grid2D, parts: &[(&BoundaryData, Complex64)]) -> Self {
        let mut values = vec![Complex64::new(0.0, 0.0); grid.boundary_count()];
        for (data, c) in parts {
            for (acc, v) in values.iter_mut().zip(&data.values) {
                *acc += v * c;
            }
        }
        Self { grid, values }
    }

    /// Writes these values onto the boundary nodes of `field`.
    pub fn impose_on(&self, field: &mut ScalarField) {
        for (n, v) in self.grid.boundary_nodes().into_iter().zip(&self.values) {
            field.values_mut()[n] = *v;
        }
    }

    /// Zero field carrying this data on the boundary.
    pub fn to_field(&self) -> ScalarField {
        let mut f = ScalarField::zeros(self.grid);
        self.impose_on(&mut f);
        f
    }

    /// Whether the data vanishes outside `set` (up to `tol`).
    pub fn supported_in(&self, set: &BoundarySet, tol: f64) -> bool {
        self.grid
            .boundary_nodes()
            .into_iter()
            .zip(&self.values)
            .all(|(n, v)| set.contains(n) || v.norm() <= tol)
    }
}

/// Ordered subset of the boundary nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet {
    grid: Grid2D,
    nodes: Vec<usize>,
    member: Vec<bool>,
}

/// Boundary nodes whose perimeter coordinate lies in one of the closed
/// intervals `[a, b]`, `0 <= a < b <= 4`.
pub fn boundary_arc(grid: &Grid2D, intervals: &[[f64; 2]]) -> Result<BoundarySet> {
    for &[a, b] in intervals {
        if !(a.is_finite() && b.is_finite()) || a >= b || a < 0.0 || b > 4.0 {
            return Err(Error::InvalidInput(format!(
                "perimeter interval [{a}, {b}] must satisfy 0 <= a < b <= 4"
            )));
        }
    }
    let nodes = grid
        .boundary_nodes()
        .into_iter()
        .filter(|&n| {
            let s = grid.perimeter_coord(n).unwrap_or(f64::NAN);
            intervals
                .iter()
                .any(|&[a, b]| s >= a - COORD_TOL && s <= b + COORD_TOL)
        })
        .collect();
    Ok(BoundarySet::from_nodes(*grid, nodes))
}

impl BoundarySet {
    pub fn full(grid: &Grid2D) -> Self {
        Self::from_nodes(*grid, grid.boundary_nodes())
    }

    pub fn empty(grid: &Grid2D) -> Self {
        Self::from_nodes(*grid, Vec::new())
    }

    fn from_nodes(grid: Grid2D, nodes: Vec<usize>) -> Self {
        let mut member = vec![false; grid.node_count()];
        for &n in &nodes {
            member[n] = true;
        }
        Self {
            grid,
            nodes,
            member,
        }
    }

    /// Boundary nodes selected by a predicate on node coordinates.
    pub fn from_predicate(grid: &Grid2D, pred: impl Fn(f64, f64) -> bool) -> Self {
        let nodes = grid
            .boundary_nodes()
            .into_iter()
            .filter(|&n| {
                let [x, y] = grid.coords(n);
                pred(x, y)
            })
            .collect();
        Self::from_nodes(*grid, nodes)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.member.get(node).copied().unwrap_or(false)
    }

    pub fn complement(&self) -> Self {
        let nodes = self
            .grid
            .boundary_nodes()
            .into_iter()
            .filter(|&n| !self.member[n])
            .collect();
        Self::from_nodes(self.grid, nodes)
    }

    /// Errors when the set is empty; used where the set stands for an
    /// accessible boundary portion.
    pub fn require_nonempty(&self) -> Result<&Self> {
        if self.is_empty() {
            Err(Error::InvalidInput("boundary portion is empty".into()))
        } else {
            Ok(self)
        }
    }

    /// Perimeter coordinates of the member nodes.
    pub fn coords(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|&n| self.grid.perimeter_coord(n))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_formula() {
        let g = build_grid(8, 8).unwrap();
        assert_eq!(g.node_count(), 81);
        assert_eq!(g.boundary_count(), 32);
        assert_eq!(g.boundary_nodes().len(), 32);
        let g = build_grid(32, 32).unwrap();
        assert_eq!(g.node_count(), 1089);
        assert_eq!(g.boundary_count(), 128);
    }

    #[test]
    fn coarse_grid_rejected() {
        let err = build_grid(4, 8).unwrap_err();
        assert!(err.to_string().contains("grid too coarse"));
    }

    #[test]
    fn classification_is_a_partition() {
        let g = build_grid(9, 12).unwrap();
        let b = g.boundary_nodes();
        let int = g.interior_nodes();
        assert_eq!(b.len() + int.len(), g.node_count());
        let mut seen = vec![0u8; g.node_count()];
        for n in b.into_iter().chain(int) {
            seen[n] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn perimeter_coordinates_distinct_and_increasing() {
        let g = build_grid(10, 13).unwrap();
        let s: Vec<f64> = g
            .boundary_nodes()
            .into_iter()
            .map(|n| g.perimeter_coord(n).unwrap())
            .collect();
        assert_eq!(s.len(), g.boundary_count());
        assert_eq!(s[0], 0.0);
        for w in s.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(*s.last().unwrap() < 4.0);
    }

    #[test]
    fn full_perimeter_arc() {
        let g = build_grid(8, 8).unwrap();
        let set = boundary_arc(&g, &[[0.0, 4.0]]).unwrap();
        assert_eq!(set.len(), 32);
        assert!(set.complement().is_empty());
    }

    #[test]
    fn bottom_edge_arc() {
        let g = build_grid(8, 8).unwrap();
        let set = boundary_arc(&g, &[[0.0, 1.0]]).unwrap();
        assert_eq!(set.len(), 9);
        assert!(set.nodes().iter().all(|&n| g.ij(n).1 == 0));
    }

    #[test]
    fn quarter_arc_enumeration() {
        let g = build_grid(8, 8).unwrap();
        let set = boundary_arc(&g, &[[0.25, 0.75]]).unwrap();
        // perimeter coordinates i/8 on the bottom edge lie in [0.25, 0.75] for i = 2..=6
        let expected: Vec<usize> = (0..=8)
            .filter(|&i| {
                let s = i as f64 / 8.0;
                (0.25..=0.75).contains(&s)
            })
            .map(|i| g.index(i, 0))
            .collect();
        assert_eq!(set.nodes(), expected.as_slice());
        assert_eq!(set.len(), 5);
    }

    #[test]
    fn degenerate_interval_rejected() {
        let g = build_grid(8, 8).unwrap();
        assert!(boundary_arc(&g, &[[0.5, 0.5]]).is_err());
        assert!(boundary_arc(&g, &[[0.5, 4.5]]).is_err());
    }

    #[test]
    fn integrate_polynomial() {
        let g = build_grid(16, 16).unwrap();
        let f = ScalarField::from_real_fn(g, |x, y| x + 2.0 * y);
        assert!((f.integrate().re - 1.5).abs() < 1e-14);
    }
}
