//! Discrete Laplace solves, CGO exponentials, null vectors and frequency
//! splitting.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryData, BoundarySet, Grid2D, ScalarField};
use crate::linalg::{BandLu, BandMatrix};
use crate::stencil::GridOperators;

pub type C2 = [Complex64; 2];

/// Largest `|Re exponent|` accepted when evaluating exponentials.
pub const OVERFLOW_LIMIT: f64 = 200.0;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Bilinear dot product (no conjugation).
#[inline]
pub fn dot(a: &C2, b: &C2) -> Complex64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Hermitian length of a complex 2-vector.
#[inline]
pub fn cnorm(a: &C2) -> f64 {
    (a[0].norm_sqr() + a[1].norm_sqr()).sqrt()
}

/// Factored 5-point Dirichlet Laplacian of one grid, reused across solves.
#[derive(Debug, Clone)]
pub struct LaplaceSolver {
    ops: Arc<GridOperators>,
    lu: Arc<BandLu>,
    band: Arc<BandMatrix>,
}

impl LaplaceSolver {
    pub fn new(grid: Grid2D) -> Result<Self> {
        Self::with_operators(Arc::new(GridOperators::new(grid)))
    }

    pub fn with_operators(ops: Arc<GridOperators>) -> Result<Self> {
        let grid = *ops.grid();
        let m = grid.nx() - 1;
        let mut a = BandMatrix::new(grid.interior_count(), m, m, false);
        for (row, p) in grid.interior_nodes().into_iter().enumerate() {
            for &(q, w) in ops.neighbors(p) {
                a.add(row, row, c(w, 0.0));
                if let Some(col) = interior_slot(&grid, q) {
                    a.add(row, col, c(-w, 0.0));
                }
            }
        }
        let band = Arc::new(a.clone());
        let lu = Arc::new(a.factorize()?);
        Ok(Self { ops, lu, band })
    }

    pub fn grid(&self) -> &Grid2D {
        self.ops.grid()
    }

    pub fn operators(&self) -> &Arc<GridOperators> {
        &self.ops
    }

    /// Solves `A x = b` for the interior unknowns, where `A` is the negated
    /// flux Laplacian (`-sum_q c_pq (x_q - x_p)`) with zero boundary values.
    /// Interior unknowns follow [`Grid2D::interior_nodes`] order.
    pub fn solve_interior_in_place(&self, b: &mut [Complex64]) {
        self.lu.solve_in_place(b);
    }

    /// Discrete harmonic extension of `g`.
    pub fn solve_dirichlet(&self, g: &BoundaryData) -> Result<ScalarField> {
        self.solve_poisson(None, g)
    }

    /// Solves `-Delta_h w = source` inside with `w = g` on the boundary.
    /// `source` is a nodal field whose boundary values are ignored.
    pub fn solve_poisson(&self, source: Option<&[Complex64]>, g: &BoundaryData) -> Result<ScalarField> {
        let grid = *self.grid();
        if g.grid() != &grid {
            return Err(Error::InvalidInput("boundary data on a different grid".into()));
        }
        let mut field = g.to_field();
        let interior = grid.interior_nodes();
        let area = grid.hx() * grid.hy();
        let mut rhs: Vec<Complex64> = interior
            .iter()
            .map(|&p| {
                let mut b = source.map_or(Complex64::new(0.0, 0.0), |s| s[p] * area);
                for &(q, w) in self.ops.neighbors(p) {
                    if grid.is_boundary(q) {
                        b += field.values()[q] * w;
                    }
                }
                b
            })
            .collect();
        let b = rhs.clone();
        self.lu.solve_in_place(&mut rhs);
        check_residual(&self.band, &rhs, &b)?;
        for (&p, v) in interior.iter().zip(rhs) {
            field.values_mut()[p] = v;
        }
        Ok(field)
    }
}

fn interior_slot(grid: &Grid2D, node: usize) -> Option<usize> {
    let (i, j) = grid.ij(node);
    if grid.is_boundary_ij(i, j) {
        None
    } else {
        Some((j - 1) * (grid.nx() - 1) + (i - 1))
    }
}

const RESIDUAL_TOL: f64 = 1e-12;

fn check_residual(a: &BandMatrix, x: &[Complex64], b: &[Complex64]) -> Result<()> {
    let ax = a.mul_vec(x);
    let r = ax.iter().zip(b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
    let xn = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let bn = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let scale = a.norm_inf() * xn + bn;
    if !r.is_finite() || r > RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::SolverBreakdown(format!(
            "relative residual {:.3e} above {RESIDUAL_TOL:e}",
            r / scale.max(f64::MIN_POSITIVE)
        )));
    }
    Ok(())
}

/// One-shot harmonic extension; factor a [`LaplaceSolver`] when solving
/// repeatedly on the same grid.
pub fn solve_laplace_dirichlet(grid: &Grid2D, g: &BoundaryData) -> Result<ScalarField> {
    LaplaceSolver::new(*grid)?.solve_dirichlet(g)
}

/// Unit direction `xi`, its orthogonal partner `k` and `zeta = k + i xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullPair {
    pub xi: [f64; 2],
    pub k: [f64; 2],
    pub zeta: C2,
}

impl NullPair {
    /// `-k + i xi`, the partner appearing in the test exponential.
    pub fn zeta_conj_partner(&self) -> C2 {
        [c(-self.k[0], self.xi[0]), c(-self.k[1], self.xi[1])]
    }
}

/// Null pair for a unit `xi`, with `k = (xi_y, -xi_x)`.
pub fn null_vector(xi: [f64; 2]) -> Result<NullPair> {
    let n = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
    if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("xi must be a unit vector, |xi| = {n}")));
    }
    let k = [xi[1], -xi[0]];
    Ok(NullPair {
        xi,
        k,
        zeta: [c(k[0], xi[0]), c(k[1], xi[1])],
    })
}

/// Unit direction at angle `theta`.
pub fn direction(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignConvention {
    /// `exp((x - o) . zeta / h)`
    Plus,
    /// `exp(-(i/h) (x - o) . zeta)`
    Minus,
}

/// Boundary cutoff: plateau on `gamma_tilde`, linear ramps of perimeter
/// width `width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutoff {
    pub gamma_tilde: BoundarySet,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgoSpec {
    pub zeta: C2,
    pub h: f64,
    pub cutoff: Option<Cutoff>,
    /// Point where the exponent vanishes.
    pub origin: [f64; 2],
}

impl CgoSpec {
    pub fn new(zeta: C2, h: f64) -> Result<Self> {
        let z2 = dot(&zeta, &zeta).norm();
        if z2 > 1e-12 * (1.0 + cnorm(&zeta).powi(2)) {
            return Err(Error::InvalidInput(format!("zeta is not null: |zeta.zeta| = {z2:.3e}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("h must be positive, got {h}")));
        }
        Ok(Self {
            zeta,
            h,
            cutoff: None,
            origin: [0.0, 0.0],
        })
    }

    pub fn with_origin(mut self, origin: [f64; 2]) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_cutoff(mut self, gamma_tilde: BoundarySet, width: f64) -> Result<Self> {
        if !(width >= 0.0 && width.is_finite()) {
            return Err(Error::InvalidInput(format!("cutoff width must be >= 0, got {width}")));
        }
        self.cutoff = Some(Cutoff { gamma_tilde, width });
        Ok(self)
    }

    fn exponent(&self, x: f64, y: f64, conv: SignConvention) -> Complex64 {
        let d = dot(&[c(x - self.origin[0], 0.0), c(y - self.origin[1], 0.0)], &self.zeta) / self.h;
        match conv {
            SignConvention::Plus => d,
            SignConvention::Minus => -I * d,
        }
    }
}

/// Largest `|Re exponent|` of `exp(s (x - o) . w)` over the unit square.
pub fn max_real_exponent(w: &C2, scale: f64, origin: [f64; 2]) -> f64 {
    let mut m: f64 = 0.0;
    for (x, y) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let e = (w[0] * (x - origin[0]) + w[1] * (y - origin[1])) * scale;
        m = m.max(e.re.abs());
    }
    m
}

fn exponential_field(grid: &Grid2D, spec: &CgoSpec, conv: SignConvention) -> Result<ScalarField> {
    let mut worst: f64 = 0.0;
    let values: Vec<Complex64> = (0..grid.node_count())
        .map(|n| {
            let [x, y] = grid.coords(n);
            let e = spec.exponent(x, y, conv);
            worst = worst.max(e.re.abs());
            e
        })
        .collect();
    if worst > OVERFLOW_LIMIT {
        return Err(Error::Overflow {
            max_exponent: worst,
            limit: OVERFLOW_LIMIT,
        });
    }
    ScalarField::from_values(*grid, values.into_iter().map(|e| e.exp()).collect())
}

/// Rates `(alpha, beta)` with `exp(alpha (x - o1) + beta (y - o2))` exactly
/// annihilated by the 5-point Laplacian: `alpha` is kept from the continuous
/// exponent and `beta` moved onto the discrete dispersion curve
/// `(cosh(alpha hx) - 1)/hx^2 + (cosh(beta hy) - 1)/hy^2 = 0`.
pub fn discrete_null_rates(grid: &Grid2D, spec: &CgoSpec, conv: SignConvention) -> (Complex64, Complex64) {
    let s = match conv {
        SignConvention::Plus => c(1.0, 0.0),
        SignConvention::Minus => -I,
    };
    let alpha = s * spec.zeta[0] / spec.h;
    let beta = s * spec.zeta[1] / spec.h;
    let (hx, hy) = (grid.hx(), grid.hy());
    let ch = c(1.0, 0.0) - ((alpha * hx).cosh() - 1.0) * (hy * hy / (hx * hx));
    let b0 = ch.acosh() / hy;
    // acosh is two-valued up to sign; take the branch nearest the continuous rate
    let beta_d = if (b0 - beta).norm() <= (-b0 - beta).norm() { b0 } else { -b0 };
    (alpha, beta_d)
}

/// Exponential on the discrete dispersion curve, see [`discrete_null_rates`].
pub fn discrete_cgo_exponential(grid: &Grid2D, spec: &CgoSpec, conv: SignConvention) -> Result<ScalarField> {
    let (alpha, beta) = discrete_null_rates(grid, spec, conv);
    let mut worst: f64 = 0.0;
    let values: Vec<Complex64> = (0..grid.node_count())
        .map(|n| {
            let [x, y] = grid.coords(n);
            let e = alpha * (x - spec.origin[0]) + beta * (y - spec.origin[1]);
            worst = worst.max(e.re.abs());
            e
        })
        .collect();
    if worst > OVERFLOW_LIMIT {
        return Err(Error::Overflow {
            max_exponent: worst,
            limit: OVERFLOW_LIMIT,
        });
    }
    ScalarField::from_values(*grid, values.into_iter().map(|e| e.exp()).collect())
}

/// Nodal values of the CGO exponential in the chosen sign convention.
pub fn cgo_exponential(grid: &Grid2D, spec: &CgoSpec, conv: SignConvention) -> Result<ScalarField> {
    exponential_field(grid, spec, conv)
}

/// Cutoff profile on the boundary nodes (perimeter order): 1 on the nodes of
/// `gamma_tilde`, decaying linearly to 0 over perimeter distance `width`.
pub fn cutoff_profile(grid: &Grid2D, cutoff: &Cutoff) -> Vec<f64> {
    let marks = cutoff.gamma_tilde.coords();
    grid.boundary_nodes()
        .into_iter()
        .map(|n| {
            if cutoff.gamma_tilde.contains(n) {
                return 1.0;
            }
            if cutoff.width <= 0.0 || marks.is_empty() {
                return 0.0;
            }
            let s = grid.perimeter_coord(n).unwrap_or(0.0);
            let d = marks
                .iter()
                .map(|&t| {
                    let d = (s - t).abs();
                    d.min(4.0 - d)
                })
                .fold(f64::INFINITY, f64::min);
            (1.0 - d / cutoff.width).max(0.0)
        })
        .collect()
}

/// Boundary-corrected CGO `v = e + r` in the minus convention, where `r` is
/// discrete harmonic with `r = -chi e` on the boundary. Requires a cutoff.
///
/// `e` is the exponential on the discrete dispersion curve, so `v` is itself
/// discrete harmonic and the limits `chi = 0` (`r = 0`) and `chi = 1`
/// (`v = 0`) hold to solver tolerance.
pub fn corrected_cgo(grid: &Grid2D, spec: &CgoSpec) -> Result<(ScalarField, ScalarField)> {
    let solver = LaplaceSolver::new(*grid)?;
    corrected_cgo_with(&solver, spec)
}

/// As [`corrected_cgo`] with a prefactored solver.
pub fn corrected_cgo_with(solver: &LaplaceSolver, spec: &CgoSpec) -> Result<(ScalarField, ScalarField)> {
    let grid = *solver.grid();
    let cutoff = spec
        .cutoff
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("corrected CGO needs a cutoff".into()))?;
    if cutoff.gamma_tilde.grid() != &grid {
        return Err(Error::InvalidInput("cutoff set lives on a different grid".into()));
    }
    let e = discrete_cgo_exponential(&grid, spec, SignConvention::Minus)?;
    let chi = cutoff_profile(&grid, cutoff);
    let trace = e.boundary_trace();
    let g = BoundaryData::from_values(
        grid,
        trace.values().iter().zip(&chi).map(|(v, x)| -v * *x).collect(),
    )?;
    let r = solver.solve_dirichlet(&g)?;
    let v = e.add(&r);
    Ok((v, r))
}

/// Decomposition `z = zeta + eta` into two null vectors near `(a gamma, -a conj(gamma))`
/// with `gamma = (i, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySplit {
    pub z: C2,
    pub a: f64,
    pub zeta: C2,
    pub eta: C2,
    /// `|zeta.zeta|` and `|eta.eta|`.
    pub residuals: [f64; 2],
}

pub const SPLIT_MAX_ITER: usize = 50;

/// Splits `z` (within `2 epsilon a` of `2 i a e1`) into null vectors by Newton
/// iteration from the base point.
pub fn split_frequency(z: C2, a: f64, epsilon: f64) -> Result<FrequencySplit> {
    if !(a > 0.0 && a.is_finite()) || !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("need a > 0 and epsilon > 0, got a={a}, epsilon={epsilon}")));
    }
    let center = [c(0.0, 2.0 * a), c(0.0, 0.0)];
    let dist = cnorm(&[z[0] - center[0], z[1] - center[1]]);
    if dist >= 2.0 * epsilon * a {
        return Err(Error::OutsideNeighborhood(format!(
            "|z - 2ia e1| = {dist:.3e} not below 2 epsilon a = {:.3e}",
            2.0 * epsilon * a
        )));
    }
    let mut zeta = [c(0.0, a), c(a, 0.0)];
    let tol = 1e-14 * a * a;
    let mut converged = false;
    for _ in 0..SPLIT_MAX_ITER {
        let eta = [z[0] - zeta[0], z[1] - zeta[1]];
        let f1 = dot(&zeta, &zeta);
        let f2 = dot(&eta, &eta);
        if f1.norm() <= tol && f2.norm() <= tol {
            converged = true;
            break;
        }
        // J = [[2 zeta1, 2 zeta2], [-2 eta1, -2 eta2]]
        let (j11, j12, j21, j22) = (2.0 * zeta[0], 2.0 * zeta[1], -2.0 * eta[0], -2.0 * eta[1]);
        let det = j11 * j22 - j12 * j21;
        if det.norm() < 1e-300 {
            break;
        }
        let d1 = (j22 * f1 - j12 * f2) / det;
        let d2 = (j11 * f2 - j21 * f1) / det;
        zeta = [zeta[0] - d1, zeta[1] - d2];
        if !(zeta[0].is_finite() && zeta[1].is_finite()) {
            break;
        }
    }
    let eta = [z[0] - zeta[0], z[1] - zeta[1]];
    let residuals = [dot(&zeta, &zeta).norm(), dot(&eta, &eta).norm()];
    if !converged && (residuals[0] > 1e-10 * a * a || residuals[1] > 1e-10 * a * a) {
        return Err(Error::OutsideNeighborhood(format!(
            "Newton split did not converge in {SPLIT_MAX_ITER} iterations"
        )));
    }
    let cross = dot(&zeta, &eta).norm();
    if !(zeta[0].im > a / 2.0 && eta[0].im > a / 2.0 && cross >= a * a) {
        return Err(Error::OutsideNeighborhood(format!(
            "split violates open conditions: Im zeta1={:.3}, Im eta1={:.3}, |zeta.eta|={cross:.3}",
            zeta[0].im, eta[0].im
        )));
    }
    Ok(FrequencySplit {
        z,
        a,
        zeta,
        eta,
        residuals,
    })
}
