//! Newton solver for `div(gamma(x, u, omega . grad u) grad u) = 0`, `u = lambda + f`
//! on the boundary, and the semilinear variant `div(gamma(x, u) grad u) = 0`.
//!
//! The unknown is `d = u - lambda`. The scheme is the conservative flux form
//! `R_p = sum_q c_pq gamma_pq (d_q - d_p)` with `gamma_pq` the mean of the
//! nodal values.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryData, Grid2D, ScalarField};
use crate::harmonic::LaplaceSolver;
use crate::linalg::BandMatrix;
use crate::model::{ConductivityModel, ModelKind};
use crate::stencil::GridOperators;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub const DEFAULT_DELTA_CFG: f64 = 0.05;
pub const MAX_NEWTON_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NewtonStrategy {
    /// Jacobian assembled from the series derivatives every iteration.
    Exact,
    /// Frozen Jacobian at `u = lambda`, the plain Laplacian since
    /// `gamma(x, lambda, 0) = 1`; switches to `Exact` when the contraction
    /// factor exceeds 1/2.
    Chord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Max-norm tolerance on the flux residual; `None` means
    /// `1e-15 * max|f|`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Smallness bound on `max|f|` for nonlinear models.
    pub delta_cfg: f64,
    pub strategy: NewtonStrategy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: MAX_NEWTON_ITER,
            delta_cfg: DEFAULT_DELTA_CFG,
            strategy: NewtonStrategy::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    /// `max|u - lambda|` plus max first and second differences.
    pub sup_deviation: f64,
    pub residual_history: Vec<f64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub u: ScalarField,
    /// Nodal conductivity at the solution.
    pub gamma: Vec<Complex64>,
    pub report: SolveReport,
}

#[derive(Debug, Clone)]
pub struct ForwardSolver {
    model: Arc<ConductivityModel>,
    laplace: LaplaceSolver,
    options: SolveOptions,
}

struct NodalGamma {
    g: Vec<Complex64>,
    gt: Vec<Complex64>,
    gz: Vec<Complex64>,
}

impl ForwardSolver {
    pub fn new(model: ConductivityModel) -> Result<Self> {
        let laplace = LaplaceSolver::new(*model.grid())?;
        Ok(Self::with_laplace(Arc::new(model), laplace))
    }

    /// Reuses a factored Laplacian of the model grid.
    pub fn with_laplace(model: Arc<ConductivityModel>, laplace: LaplaceSolver) -> Self {
        Self {
            model,
            laplace,
            options: SolveOptions::default(),
        }
    }

    pub fn with_options(mut self, options: SolveOptions) -> Self {
        self.options = options;
        self
    }

    pub fn options(&self) -> &SolveOptions {
        &self.options
    }

    pub fn model(&self) -> &ConductivityModel {
        &self.model
    }

    pub fn laplace(&self) -> &LaplaceSolver {
        &self.laplace
    }

    fn ops(&self) -> &GridOperators {
        self.laplace.operators()
    }

    fn grid(&self) -> &Grid2D {
        self.model.grid()
    }

    fn nodal_gamma(&self, lambda: Complex64, d: &[Complex64]) -> NodalGamma {
        let n = d.len();
        let zs = match self.model.kind() {
            ModelKind::Quasilinear if !self.model.terms().is_empty() => self.ops().directional(d, self.model.omega()),
            _ => vec![ZERO; n],
        };
        let mut out = NodalGamma {
            g: Vec::with_capacity(n),
            gt: Vec::with_capacity(n),
            gz: Vec::with_capacity(n),
        };
        for node in 0..n {
            let (g, gt, gz) = self.model.gamma_at(node, lambda + d[node], zs[node]);
            out.g.push(g);
            out.gt.push(gt);
            out.gz.push(gz);
        }
        out
    }

    fn residual(&self, d: &[Complex64], gam: &NodalGamma, interior: &[usize]) -> Vec<Complex64> {
        interior
            .iter()
            .map(|&p| {
                self.ops()
                    .neighbors(p)
                    .iter()
                    .map(|&(q, c)| (gam.g[p] + gam.g[q]) * (0.5 * c) * (d[q] - d[p]))
                    .sum()
            })
            .collect()
    }

    fn jacobian(&self, d: &[Complex64], gam: &NodalGamma, interior: &[usize], slot: &[Option<usize>]) -> BandMatrix {
        let grid = self.grid();
        // gamma at a neighbor depends on that neighbor's gradient taps: two rows away
        let bw = 2 * grid.nx();
        let mut jac = BandMatrix::new(interior.len(), bw, bw, true);
        let omega = self.model.omega();
        let quasi = self.model.kind() == ModelKind::Quasilinear;
        for (row, &p) in interior.iter().enumerate() {
            for &(q, c) in self.ops().neighbors(p) {
                let gpq = (gam.g[p] + gam.g[q]) * 0.5;
                jac.add(row, row, -gpq * c);
                if let Some(col) = slot[q] {
                    jac.add(row, col, gpq * c);
                }
                let f = (d[q] - d[p]) * (0.5 * c);
                for n in [p, q] {
                    if let Some(col) = slot[n] {
                        jac.add(row, col, f * gam.gt[n]);
                    }
                    if quasi && gam.gz[n] != ZERO {
                        let (tx, ty) = self.ops().grad_taps(n);
                        let fz = f * gam.gz[n];
                        for (r, w) in tx.iter().filter(|_| omega[0] != 0.0) {
                            if let Some(col) = slot[r] {
                                jac.add(row, col, fz * (w * omega[0]));
                            }
                        }
                        for (r, w) in ty.iter().filter(|_| omega[1] != 0.0) {
                            if let Some(col) = slot[r] {
                                jac.add(row, col, fz * (w * omega[1]));
                            }
                        }
                    }
                }
            }
        }
        jac
    }

    /// Solves with boundary values `lambda + f`, Newton seeded at `u = lambda`.
    pub fn solve(&self, lambda: Complex64, f: &BoundaryData) -> Result<Solution> {
        let grid = *self.grid();
        if f.grid() != &grid {
            return Err(Error::InvalidInput("boundary data on a different grid".into()));
        }
        let fmax = f.max_abs();
        if !fmax.is_finite() || !(lambda.re.is_finite() && lambda.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite boundary data".into()));
        }
        let nonlinear = !self.model.is_linear();
        if nonlinear && fmax > self.options.delta_cfg {
            return Err(Error::OutsideWellPosedness(format!(
                "max|f| = {fmax:.3e} exceeds delta_cfg = {}",
                self.options.delta_cfg
            )));
        }
        let tol = self.options.tol.unwrap_or(1e-15 * fmax);
        let interior = grid.interior_nodes();
        let mut slot = vec![None; grid.node_count()];
        for (k, &p) in interior.iter().enumerate() {
            slot[p] = Some(k);
        }
        let mut d = f.to_field().into_values();
        let mut gam = self.nodal_gamma(lambda, &d);
        let mut res = self.residual(&d, &gam, &interior);
        let mut rnorm = max_norm(&res);
        let mut history = vec![rnorm];
        let mut strategy = self.options.strategy;
        let mut iterations = 0;
        'newton: while rnorm > tol {
            if iterations >= self.options.max_iter {
                return Err(Error::OutsideWellPosedness(format!(
                    "Newton did not converge in {} iterations (residual {rnorm:.3e})",
                    self.options.max_iter
                )));
            }
            iterations += 1;
            let step = match strategy {
                NewtonStrategy::Chord => {
                    // J = -A at the base point, so J s = -R gives A s = R
                    let mut s = res.clone();
                    self.laplace.solve_interior_in_place(&mut s);
                    s
                }
                NewtonStrategy::Exact => {
                    let lu = self
                        .jacobian(&d, &gam, &interior, &slot)
                        .factorize()
                        .map_err(|e| Error::OutsideWellPosedness(format!("singular Jacobian: {e}")))?;
                    let mut s: Vec<Complex64> = res.iter().map(|r| -r).collect();
                    lu.solve_in_place(&mut s);
                    s
                }
            };
            let mut alpha = 1.0;
            let (nd, ngam, nres, nnorm) = loop {
                let mut trial = d.clone();
                for (&p, s) in interior.iter().zip(&step) {
                    trial[p] += s * alpha;
                }
                let tgam = self.nodal_gamma(lambda, &trial);
                let tres = self.residual(&trial, &tgam, &interior);
                let tnorm = max_norm(&tres);
                if strategy == NewtonStrategy::Chord {
                    if !(tnorm <= 0.5 * rnorm) {
                        strategy = NewtonStrategy::Exact;
                    }
                    if tnorm < rnorm {
                        break (trial, tgam, tres, tnorm);
                    }
                    continue 'newton;
                }
                if tnorm < rnorm {
                    break (trial, tgam, tres, tnorm);
                }
                if alpha < 1e-3 {
                    if !tnorm.is_finite() {
                        return Err(Error::OutsideWellPosedness("Newton step produced non-finite values".into()));
                    }
                    break (trial, tgam, tres, tnorm);
                }
                alpha *= 0.5;
            };
            // roundoff floor: further steps cannot reduce the residual
            let stalled = nnorm >= 0.9 * rnorm && nnorm <= 100.0 * tol.max(f64::MIN_POSITIVE);
            if nnorm >= rnorm && !stalled {
                return Err(Error::OutsideWellPosedness(format!(
                    "damped Newton stalled at residual {rnorm:.3e}"
                )));
            }
            d = nd;
            gam = ngam;
            res = nres;
            rnorm = nnorm;
            history.push(rnorm);
            if stalled {
                break;
            }
        }
        let u_vals: Vec<Complex64> = d.iter().map(|v| v + lambda).collect();
        let sup = sup_deviation(&grid, &d);
        let report = SolveReport {
            iterations,
            final_residual: rnorm,
            sup_deviation: sup,
            residual_history: history,
            tolerance: tol,
        };
        Ok(Solution {
            u: ScalarField::from_values(grid, u_vals)?,
            gamma: gam.g,
            report,
        })
    }
}

fn max_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) })
}

/// `max|d|` plus the max first differences (over `h`) and second differences
/// (over `h^2`) along both axes.
pub fn sup_deviation(grid: &Grid2D, d: &[Complex64]) -> f64 {
    let (nx, ny, hx, hy) = (grid.nx(), grid.ny(), grid.hx(), grid.hy());
    let v0 = max_norm(d);
    let mut v1: f64 = 0.0;
    let mut v2: f64 = 0.0;
    for j in 0..=ny {
        for i in 0..=nx {
            let p = grid.index(i, j);
            if i < nx {
                v1 = v1.max((d[grid.index(i + 1, j)] - d[p]).norm() / hx);
            }
            if j < ny {
                v1 = v1.max((d[grid.index(i, j + 1)] - d[p]).norm() / hy);
            }
            if i > 0 && i < nx {
                let s = d[grid.index(i + 1, j)] - 2.0 * d[p] + d[grid.index(i - 1, j)];
                v2 = v2.max(s.norm() / (hx * hx));
            }
            if j > 0 && j < ny {
                let s = d[grid.index(i, j + 1)] - 2.0 * d[p] + d[grid.index(i, j - 1)];
                v2 = v2.max(s.norm() / (hy * hy));
            }
        }
    }
    v0 + v1 + v2
}

/// Quasilinear Dirichlet solve with boundary values `lambda + f`.
pub fn solve_quasilinear(
    model: &ConductivityModel,
    lambda: Complex64,
    f: &BoundaryData,
    tol: Option<f64>,
) -> Result<(ScalarField, SolveReport)> {
    if model.kind() != ModelKind::Quasilinear {
        return Err(Error::InvalidInput("model is not quasilinear".into()));
    }
    let solver = ForwardSolver::new(model.clone())?.with_options(SolveOptions {
        tol,
        ..SolveOptions::default()
    });
    let s = solver.solve(lambda, f)?;
    Ok((s.u, s.report))
}

/// Semilinear Dirichlet solve with boundary values `f`.
pub fn solve_semilinear(model: &ConductivityModel, f: &BoundaryData, tol: Option<f64>) -> Result<(ScalarField, SolveReport)> {
    if model.kind() != ModelKind::Semilinear {
        return Err(Error::InvalidInput("model is not semilinear".into()));
    }
    let solver = ForwardSolver::new(model.clone())?.with_options(SolveOptions {
        tol,
        ..SolveOptions::default()
    });
    let s = solver.solve(Complex64::new(0.0, 0.0), f)?;
    Ok((s.u, s.report))
}

/// Discrete boundary flux `F_b = sum_q c_bq gamma_bq (u_b - u_q) s_bq` of the
/// conservative scheme, in perimeter order (`s = 1/2` on boundary edges).
pub fn boundary_flux(ops: &GridOperators, u: &[Complex64], gamma: &[Complex64]) -> Vec<Complex64> {
    let grid = ops.grid();
    let ord = grid.boundary_ordinals();
    let mut flux = vec![ZERO; grid.boundary_count()];
    for e in ops.edges() {
        let g = (gamma[e.a] + gamma[e.b]) * (0.5 * e.weight);
        let du = u[e.b] - u[e.a];
        if let Some(k) = ord[e.a] {
            flux[k] -= g * du;
        }
        if let Some(k) = ord[e.b] {
            flux[k] += g * du;
        }
    }
    flux
}
