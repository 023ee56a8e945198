//! Grid connectivity shared by the linear and nonlinear solvers: 5-point
//! couplings, edge list for the weak-form pairing and nodal gradient stencils.

use num_complex::Complex64;

use crate::grid::{Grid2D, ScalarField};

/// Edge between two neighboring nodes.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Coupling `hy/hx` (x-edges) or `hx/hy` (y-edges); halved for edges lying
    /// on the boundary so that the edge sum is a trapezoidal rule.
    pub weight: f64,
    /// Coupling without the boundary halving; what the interior residual sees.
    pub coupling: f64,
}

/// One-dimensional difference stencil with at most three taps.
#[derive(Debug, Clone, Copy, Default)]
pub struct Taps {
    pub len: usize,
    pub node: [usize; 3],
    pub coef: [f64; 3],
}

impl Taps {
    fn push(&mut self, node: usize, coef: f64) {
        self.node[self.len] = node;
        self.coef[self.len] = coef;
        self.len += 1;
    }

    #[inline]
    pub fn apply(&self, values: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..self.len {
            acc += values[self.node[k]] * self.coef[k];
        }
        acc
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(move |k| (self.node[k], self.coef[k]))
    }
}

#[derive(Debug, Clone)]
pub struct GridOperators {
    grid: Grid2D,
    edges: Vec<Edge>,
    /// Per node: neighbor couplings (node, coupling), empty for boundary nodes.
    neighbors: Vec<Vec<(usize, f64)>>,
    grad_x: Vec<Taps>,
    grad_y: Vec<Taps>,
}

fn axis_taps(idx: impl Fn(usize) -> usize, pos: usize, last: usize, h: f64) -> Taps {
    let mut t = Taps::default();
    let inv = 1.0 / (2.0 * h);
    if pos == 0 {
        t.push(idx(0), -3.0 * inv);
        t.push(idx(1), 4.0 * inv);
        t.push(idx(2), -inv);
    } else if pos == last {
        t.push(idx(last), 3.0 * inv);
        t.push(idx(last - 1), -4.0 * inv);
        t.push(idx(last - 2), inv);
    } else {
        t.push(idx(pos + 1), inv);
        t.push(idx(pos - 1), -inv);
    }
    t
}

impl GridOperators {
    pub fn new(grid: Grid2D) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let cx = grid.hy() / grid.hx();
        let cy = grid.hx() / grid.hy();
        let mut edges = Vec::with_capacity(2 * grid.node_count());
        for j in 0..=ny {
            let half = j == 0 || j == ny;
            for i in 0..nx {
                edges.push(Edge {
                    a: grid.index(i, j),
                    b: grid.index(i + 1, j),
                    weight: if half { 0.5 * cx } else { cx },
                    coupling: cx,
                });
            }
        }
        for j in 0..ny {
            for i in 0..=nx {
                let half = i == 0 || i == nx;
                edges.push(Edge {
                    a: grid.index(i, j),
                    b: grid.index(i, j + 1),
                    weight: if half { 0.5 * cy } else { cy },
                    coupling: cy,
                });
            }
        }
        let mut neighbors = vec![Vec::new(); grid.node_count()];
        for j in 1..ny {
            for i in 1..nx {
                neighbors[grid.index(i, j)] = vec![
                    (grid.index(i + 1, j), cx),
                    (grid.index(i - 1, j), cx),
                    (grid.index(i, j + 1), cy),
                    (grid.index(i, j - 1), cy),
                ];
            }
        }
        let mut grad_x = Vec::with_capacity(grid.node_count());
        let mut grad_y = Vec::with_capacity(grid.node_count());
        for j in 0..=ny {
            for i in 0..=nx {
                grad_x.push(axis_taps(|k| grid.index(k, j), i, nx, grid.hx()));
                grad_y.push(axis_taps(|k| grid.index(i, k), j, ny, grid.hy()));
            }
        }
        Self {
            grid,
            edges,
            neighbors,
            grad_x,
            grad_y,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.neighbors[node]
    }

    pub fn grad_taps(&self, node: usize) -> (&Taps, &Taps) {
        (&self.grad_x[node], &self.grad_y[node])
    }

    /// Nodal gradient: centered differences inside, second-order one-sided
    /// differences normal to the boundary.
    pub fn gradient(&self, values: &[Complex64]) -> Vec<[Complex64; 2]> {
        self.grad_x
            .iter()
            .zip(&self.grad_y)
            .map(|(tx, ty)| [tx.apply(values), ty.apply(values)])
            .collect()
    }

    /// `omega . grad u` at every node.
    pub fn directional(&self, values: &[Complex64], omega: [f64; 2]) -> Vec<Complex64> {
        self.grad_x
            .iter()
            .zip(&self.grad_y)
            .map(|(tx, ty)| tx.apply(values) * omega[0] + ty.apply(values) * omega[1])
            .collect()
    }

    /// `sum_q c_pq (u_q - u_p)` at interior nodes, which is `hx*hy` times the
    /// 5-point Laplacian; zero at boundary nodes.
    pub fn apply_flux_laplacian(&self, values: &[Complex64]) -> Vec<Complex64> {
        (0..self.grid.node_count())
            .map(|p| {
                self.neighbors[p]
                    .iter()
                    .map(|&(q, c)| (values[q] - values[p]) * c)
                    .sum()
            })
            .collect()
    }

    /// 5-point Laplacian (interior), zero on the boundary.
    pub fn laplacian(&self, field: &ScalarField) -> ScalarField {
        let area = self.grid.hx() * self.grid.hy();
        let v = self
            .apply_flux_laplacian(field.values())
            .into_iter()
            .map(|x| x / area)
            .collect();
        ScalarField::from_values(self.grid, v).expect("sizes match")
    }
}
