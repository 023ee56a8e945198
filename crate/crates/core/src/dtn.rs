//! Weak-form Dirichlet-to-Neumann pairing and mixed finite-difference
//! linearizations of it.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardSolver, Solution, DEFAULT_DELTA_CFG};
use crate::grid::{BoundaryData, BoundarySet, Grid2D, ScalarField};
use crate::harmonic::LaplaceSolver;
use crate::model::ConductivityModel;
use crate::stencil::GridOperators;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Anything that answers DtN pairings for boundary data `lambda + f`.
pub trait DtnOracle: Sync {
    fn grid(&self) -> &Grid2D;

    /// `<Lambda(lambda + f), f_test>`, with the test datum given by its
    /// discrete harmonic extension `phi`.
    fn pairing(&self, lambda: Complex64, f: &BoundaryData, phi: &ScalarField) -> Result<Complex64>;

    /// Factored Laplacian of the oracle grid, for test extensions.
    fn laplace(&self) -> &LaplaceSolver;
}

/// `sum_e s_e c_e gamma_e (u_b - u_a)(phi_b - phi_a)`, the trapezoidal
/// quadrature of `int gamma grad u . grad phi` matching the flux scheme.
pub fn weak_pairing(ops: &GridOperators, u: &[Complex64], gamma: &[Complex64], phi: &[Complex64]) -> Complex64 {
    ops.edges()
        .iter()
        .map(|e| (gamma[e.a] + gamma[e.b]) * (0.5 * e.weight) * (u[e.b] - u[e.a]) * (phi[e.b] - phi[e.a]))
        .sum()
}

impl ForwardSolver {
    pub fn solve_and_pair(&self, lambda: Complex64, f: &BoundaryData, phi: &ScalarField) -> Result<(Solution, Complex64)> {
        let s = self.solve(lambda, f)?;
        let v = weak_pairing(self.laplace().operators(), s.u.values(), &s.gamma, phi.values());
        Ok((s, v))
    }
}

impl DtnOracle for ForwardSolver {
    fn grid(&self) -> &Grid2D {
        self.model().grid()
    }

    fn pairing(&self, lambda: Complex64, f: &BoundaryData, phi: &ScalarField) -> Result<Complex64> {
        Ok(self.solve_and_pair(lambda, f, phi)?.1)
    }

    fn laplace(&self) -> &LaplaceSolver {
        ForwardSolver::laplace(self)
    }
}

/// Simulated measurements: a forward solver on a known model.
pub type SimulatedOracle = ForwardSolver;

/// One-shot pairing for a model.
pub fn dtn_pairing(model: &ConductivityModel, lambda: Complex64, f: &BoundaryData, f_test: &BoundaryData) -> Result<Complex64> {
    let solver = ForwardSolver::new(model.clone())?;
    let phi = solver.laplace().solve_dirichlet(f_test)?;
    solver.pairing(lambda, f, &phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    /// Largest step; level `l` uses `t / 2^l`.
    pub t: f64,
    /// Number of step sizes; `levels - 1` Richardson extrapolations.
    pub levels: usize,
}

impl Stencil {
    /// `t = 1e-3 delta_cfg / max_i |f_i|`, two levels.
    pub fn default_for(fs: &[BoundaryData]) -> Self {
        Self::scaled_for(fs, 1e-3)
    }

    /// `t = factor delta_cfg / max_i |f_i|`, two levels.
    pub fn scaled_for(fs: &[BoundaryData], factor: f64) -> Self {
        let fmax = fs.iter().map(|f| f.max_abs()).fold(0.0, f64::max);
        let t = if fmax > 0.0 { factor * DEFAULT_DELTA_CFG / fmax } else { factor };
        Self { t, levels: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) || self.levels == 0 {
            return Err(Error::InvalidInput(format!(
                "stencil needs t > 0 and at least one level, got t={} levels={}",
                self.t, self.levels
            )));
        }
        Ok(())
    }

    pub fn step(&self, level: usize) -> f64 {
        self.t / 2f64.powi(level as i32)
    }
}

#[derive(Debug, Clone)]
pub struct MultilinearRequest {
    pub m: usize,
    pub lambda: Complex64,
    pub fs: Vec<BoundaryData>,
    pub f_test: BoundaryData,
    pub stencil: Stencil,
    /// Accessible boundary portion; `None` means the full boundary.
    pub support: Option<BoundarySet>,
}

impl MultilinearRequest {
    pub fn new(lambda: Complex64, fs: Vec<BoundaryData>, f_test: BoundaryData) -> Self {
        let stencil = Stencil::default_for(&fs);
        Self {
            m: fs.len(),
            lambda,
            fs,
            f_test,
            stencil,
            support: None,
        }
    }

    pub fn with_stencil(mut self, stencil: Stencil) -> Self {
        self.stencil = stencil;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.fs.len() != self.m {
            return Err(Error::InvalidInput(format!(
                "order m = {} needs exactly m boundary data, got {}",
                self.m,
                self.fs.len()
            )));
        }
        self.stencil.validate()?;
        if let Some(set) = &self.support {
            let tol = 0.0;
            if !self.fs.iter().all(|f| f.supported_in(set, tol)) || !self.f_test.supported_in(set, tol) {
                return Err(Error::InvalidInput("boundary data not supported in the accessible portion".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingValue {
    pub value: Complex64,
    pub estimated_error: f64,
}

/// One row of the linearization log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelLog {
    pub m: usize,
    pub t: f64,
    pub level: usize,
    pub value: Complex64,
    pub est_err: f64,
}

#[derive(Debug, Clone)]
pub struct MultilinearOutput {
    pub value: PairingValue,
    /// Raw central differences per level, before extrapolation.
    pub raw: Vec<Complex64>,
    pub log: Vec<LevelLog>,
}

/// Richardson table for an `O(t^2)` expansion with steps halving per level.
/// Returns per level the diagonal entry and its last increment.
pub fn richardson(raw: &[Complex64]) -> Vec<(Complex64, f64)> {
    let mut table: Vec<Vec<Complex64>> = Vec::with_capacity(raw.len());
    let mut out = Vec::with_capacity(raw.len());
    for (l, &d) in raw.iter().enumerate() {
        let mut row = vec![d];
        for k in 1..=l {
            let f = 4f64.powi(k as i32);
            let v = (row[k - 1] * f - table[l - 1][k - 1]) / (f - 1.0);
            row.push(v);
        }
        let inc = if l == 0 { 0.0 } else { (row[l] - row[l - 1]).norm() };
        out.push((row[l], inc));
        table.push(row);
    }
    out
}

fn sign_product(sigma: &[i8]) -> f64 {
    sigma.iter().map(|&s| s as f64).product()
}

fn sigmas(m: usize) -> Vec<Vec<i8>> {
    (0..1usize << m)
        .map(|bits| (0..m).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect())
        .collect()
}

/// Mixed central difference `(2t)^{-m} sum_sigma (prod sigma) P(sum_i sigma_i t f_i)`
/// of the pairing, Richardson-extrapolated over the stencil levels.
///
/// Identical data are merged so each distinct boundary datum is solved once;
/// solves run in parallel and are combined in fixed sigma order.
pub fn multilinear_form<O: DtnOracle + ?Sized>(oracle: &O, request: &MultilinearRequest) -> Result<MultilinearOutput> {
    let phi = oracle.laplace().solve_dirichlet(&request.f_test)?;
    multilinear_form_with_test(oracle, request, &phi)
}

/// As [`multilinear_form`] with a precomputed test extension.
pub fn multilinear_form_with_test<O: DtnOracle + ?Sized>(
    oracle: &O,
    request: &MultilinearRequest,
    phi: &ScalarField,
) -> Result<MultilinearOutput> {
    request.validate()?;
    let m = request.m;
    let grid = *oracle.grid();
    // distinct data and the multiplicity map i -> basis index
    let mut basis: Vec<&BoundaryData> = Vec::new();
    let mut which = Vec::with_capacity(m);
    for f in &request.fs {
        match basis.iter().position(|b| *b == f) {
            Some(k) => which.push(k),
            None => {
                which.push(basis.len());
                basis.push(f);
            }
        }
    }
    let sig = sigmas(m);
    let key_of = |level: usize, s: &[i8]| -> (usize, Vec<i32>) {
        let mut coef = vec![0i32; basis.len()];
        for (i, &si) in s.iter().enumerate() {
            coef[which[i]] += si as i32;
        }
        (level, coef)
    };
    let mut jobs: BTreeMap<(usize, Vec<i32>), Vec<i8>> = BTreeMap::new();
    for level in 0..request.stencil.levels {
        for s in &sig {
            jobs.entry(key_of(level, s)).or_insert_with(|| s.clone());
        }
    }
    let keys: Vec<(&(usize, Vec<i32>), &Vec<i8>)> = jobs.iter().collect();
    let values: Vec<Result<Complex64>> = keys
        .par_iter()
        .map(|((level, coef), sigma)| {
            let t = request.stencil.step(*level);
            let parts: Vec<(&BoundaryData, Complex64)> = basis
                .iter()
                .zip(coef)
                .map(|(b, &c)| (*b, Complex64::new(c as f64 * t, 0.0)))
                .collect();
            let data = BoundaryData::combination(grid, &parts);
            oracle.pairing(request.lambda, &data, phi).map_err(|e| Error::StencilSolve {
                sigma: (*sigma).clone(),
                source: Box::new(e),
            })
        })
        .collect();
    let mut table: BTreeMap<(usize, Vec<i32>), Complex64> = BTreeMap::new();
    for ((k, _), v) in keys.into_iter().zip(values) {
        table.insert(k.clone(), v?);
    }
    let mut raw = Vec::with_capacity(request.stencil.levels);
    for level in 0..request.stencil.levels {
        let t = request.stencil.step(level);
        let mut acc = ZERO;
        for s in &sig {
            acc += table[&key_of(level, s)] * sign_product(s);
        }
        raw.push(acc / (2.0 * t).powi(m as i32));
    }
    let rich = richardson(&raw);
    let log = rich
        .iter()
        .enumerate()
        .map(|(level, &(value, est_err))| LevelLog {
            m,
            t: request.stencil.step(level),
            level,
            value,
            est_err,
        })
        .collect();
    let &(value, estimated_error) = rich.last().expect("at least one level");
    Ok(MultilinearOutput {
        value: PairingValue { value, estimated_error },
        raw,
        log,
    })
}

/// Central difference `(u(lambda + t f) - u(lambda - t f)) / (2t)` with
/// Richardson extrapolation over `stencil.levels` steps.
pub fn first_linearization_field(solver: &ForwardSolver, lambda: Complex64, f: &BoundaryData, stencil: Stencil) -> Result<ScalarField> {
    stencil.validate()?;
    let grid = *solver.model().grid();
    let mut levels: Vec<Vec<Complex64>> = Vec::with_capacity(stencil.levels);
    for level in 0..stencil.levels {
        let t = stencil.step(level);
        let up = solver.solve(lambda, &f.scaled(Complex64::new(t, 0.0)))?;
        let dn = solver.solve(lambda, &f.scaled(Complex64::new(-t, 0.0)))?;
        levels.push(
            up.u.values()
                .iter()
                .zip(dn.u.values())
                .map(|(a, b)| (a - b) / (2.0 * t))
                .collect(),
        );
    }
    let values = (0..grid.node_count())
        .map(|n| {
            let raw: Vec<Complex64> = levels.iter().map(|l| l[n]).collect();
            richardson(&raw).last().expect("level").0
        })
        .collect();
    ScalarField::from_values(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::bump;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn richardson_removes_quadratic_term() {
        // D(t) = 3 + 2 t^2 + t^4
        let d = |t: f64| c(3.0 + 2.0 * t * t + t.powi(4), 0.0);
        let raw = [d(0.1), d(0.05), d(0.025)];
        let r = richardson(&raw);
        assert!((r[1].0.re - 3.0).abs() < 1e-4);
        assert!((r[2].0.re - 3.0).abs() < 1e-9);
        assert_eq!(r[0].1, 0.0);
    }

    #[test]
    fn zero_data_pairs_to_zero() {
        let g = Grid2D::square(12).unwrap();
        let m = ConductivityModel::builtin_bump(g, 0.3);
        let ft = BoundaryData::from_real_fn(g, |x, y| x * y);
        let v = dtn_pairing(&m, c(0.3, 0.0), &BoundaryData::zeros(g), &ft).unwrap();
        assert_eq!(v, c(0.0, 0.0));
    }

    #[test]
    fn extension_independence() {
        let g = Grid2D::square(16).unwrap();
        let solver = ForwardSolver::new(ConductivityModel::builtin_bump(g, 0.3)).unwrap();
        let f = BoundaryData::from_real_fn(g, |x, y| 0.02 * (x + y * y));
        let ft = BoundaryData::from_real_fn(g, |x, y| x * y - y);
        let phi = solver.laplace().solve_dirichlet(&ft).unwrap();
        let bumped = ScalarField::from_values(
            g,
            phi.values()
                .iter()
                .enumerate()
                .map(|(n, v)| if g.is_boundary(n) { *v } else { v + c((n as f64).sin(), 0.5) })
                .collect(),
        )
        .unwrap();
        let a = solver.pairing(c(0.0, 0.0), &f, &phi).unwrap();
        let b = solver.pairing(c(0.0, 0.0), &f, &bumped).unwrap();
        assert!((a - b).norm() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn first_linearization_of_linear_model_is_harmonic_extension() {
        let g = Grid2D::square(16).unwrap();
        let solver = ForwardSolver::new(ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap()).unwrap();
        let f = BoundaryData::from_real_fn(g, |x, y| x * y);
        let v = first_linearization_field(&solver, c(0.0, 0.0), &f, Stencil { t: 1e-3, levels: 2 }).unwrap();
        let h = solver.laplace().solve_dirichlet(&f).unwrap();
        assert!(v.sub(&h).max_abs() < 1e-10);
        let z = first_linearization_field(&solver, c(0.0, 0.0), &BoundaryData::zeros(g), Stencil { t: 1e-3, levels: 1 }).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn symmetric_under_permutation() {
        let g = Grid2D::square(16).unwrap();
        let solver = ForwardSolver::new(ConductivityModel::builtin_bump(g, 0.5)).unwrap();
        let f1 = BoundaryData::from_real_fn(g, |x, _| x);
        let f2 = BoundaryData::from_real_fn(g, |x, y| x * y + y);
        let ft = BoundaryData::from_real_fn(g, |x, y| x * x - y * y);
        let a = multilinear_form(&solver, &MultilinearRequest::new(c(0.0, 0.0), vec![f1.clone(), f2.clone()], ft.clone())).unwrap();
        let b = multilinear_form(&solver, &MultilinearRequest::new(c(0.0, 0.0), vec![f2, f1], ft)).unwrap();
        let tol = 2.0 * a.value.estimated_error.max(b.value.estimated_error) + 1e-9 * a.value.value.norm();
        assert!((a.value.value - b.value.value).norm() <= tol);
        assert_eq!(a.log.len(), 2);
    }

    #[test]
    fn second_order_matches_edge_identity() {
        // gamma = 1 + q z: the m = 2 form equals the bilinear edge sum of
        // q_e [(w.grad v1) dv2 + (w.grad v2) dv1] dphi
        let g = Grid2D::square(16).unwrap();
        let q = ScalarField::from_real_fn(g, |x, y| 0.4 * bump(x, y));
        let mut model = ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap();
        model.set_term(0, 1, q.clone()).unwrap();
        let solver = ForwardSolver::new(model).unwrap();
        let f1 = BoundaryData::from_real_fn(g, |x, y| x + 0.5 * y);
        let f2 = BoundaryData::from_real_fn(g, |x, y| x * y);
        let ft = BoundaryData::from_real_fn(g, |x, y| x * x - y * y + y);
        let out = multilinear_form(&solver, &MultilinearRequest::new(c(0.0, 0.0), vec![f1.clone(), f2.clone()], ft.clone())).unwrap();
        let lap = solver.laplace();
        let ops = lap.operators();
        let v1 = lap.solve_dirichlet(&f1).unwrap();
        let v2 = lap.solve_dirichlet(&f2).unwrap();
        let v3 = lap.solve_dirichlet(&ft).unwrap();
        let z1 = ops.directional(v1.values(), [1.0, 0.0]);
        let z2 = ops.directional(v2.values(), [1.0, 0.0]);
        let qv = q.values();
        let (a1, a2, a3) = (v1.values(), v2.values(), v3.values());
        let expected: Complex64 = ops
            .edges()
            .iter()
            .map(|e| {
                let t1 = (qv[e.a] * z1[e.a] + qv[e.b] * z1[e.b]) * 0.5 * (a2[e.b] - a2[e.a]);
                let t2 = (qv[e.a] * z2[e.a] + qv[e.b] * z2[e.b]) * 0.5 * (a1[e.b] - a1[e.a]);
                (t1 + t2) * (a3[e.b] - a3[e.a]) * e.weight
            })
            .sum();
        let rel = (out.value.value - expected).norm() / expected.norm();
        assert!(rel < 1e-6, "rel {rel}: {} vs {expected}", out.value.value);
    }
}
