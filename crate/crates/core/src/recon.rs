//! CGO Fourier sampling of Taylor coefficient fields and their regularized
//! inversion.
//!
//! With `v1 = exp((x - o) . zeta / h)`, `zeta = k + i xi`, and
//! `v2 = exp((m/h) (x - o) . (-k + i xi))`, the order-m form of
//! `gamma(x, u, omega . grad u)` with lower orders removed is
//! `int c m (omega . grad v1)^{m-1} grad v1 . grad v2`, which equals
//! `m^2 (-2) (omega . zeta)^{m-1} h^{-(m+1)} int c exp((2mi/h)(x - o) . xi)`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtn::{multilinear_form_with_test, DtnOracle, MultilinearRequest, Stencil};
use crate::error::{Error, Result};
use crate::forward::{ForwardSolver, NewtonStrategy, SolveOptions};
use crate::grid::{BoundaryData, Grid2D, ScalarField};
use crate::harmonic::{
    c, cgo_exponential, direction, dot, max_real_exponent, null_vector, CgoSpec, NullPair, SignConvention,
    OVERFLOW_LIMIT,
};
use crate::model::{bump, ConductivityModel, ModelKind};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Center of the unit square, the default CGO origin for sampling.
pub const CENTER: [f64; 2] = [0.5, 0.5];

fn c2_real(v: [f64; 2]) -> [Complex64; 2] {
    [c(v[0], 0.0), c(v[1], 0.0)]
}

/// Specs of `v1` and `v2` for a null pair.
pub fn cgo_specs(pair: &NullPair, h: f64, m: usize, origin: [f64; 2]) -> Result<(CgoSpec, CgoSpec)> {
    let s1 = CgoSpec::new(pair.zeta, h)?.with_origin(origin);
    let p = pair.zeta_conj_partner();
    let mf = m as f64;
    let s2 = CgoSpec::new([p[0] * mf, p[1] * mf], h)?.with_origin(origin);
    Ok((s1, s2))
}

/// Largest `|Re exponent|` of `v1` and `v2` over the unit square.
pub fn family_exponent(pair: &NullPair, h: f64, m: usize, origin: [f64; 2]) -> f64 {
    let p = pair.zeta_conj_partner();
    let mf = m as f64;
    max_real_exponent(&pair.zeta, 1.0 / h, origin).max(max_real_exponent(&[p[0] * mf, p[1] * mf], 1.0 / h, origin))
}

/// Spread `max - min` of the real exponents of `v1` and `v2` over the square.
pub fn family_span(pair: &NullPair, h: f64, m: usize) -> f64 {
    let p = pair.zeta_conj_partner();
    let s1 = (pair.zeta[0].re.abs() + pair.zeta[1].re.abs()) / h;
    let s2 = m as f64 * (p[0].re.abs() + p[1].re.abs()) / h;
    s1.max(s2)
}

/// Boundary traces `f_1 = ... = f_m = v1|` and `f_test = v2|`.
pub fn cgo_boundary_family(
    grid: &Grid2D,
    pair: &NullPair,
    h: f64,
    m: usize,
    origin: [f64; 2],
) -> Result<(Vec<BoundaryData>, BoundaryData)> {
    let (v1, v2) = cgo_fields(grid, pair, h, m, origin)?;
    let f1 = v1.boundary_trace();
    Ok((vec![f1; m], v2.boundary_trace()))
}

/// Nodal fields `v1`, `v2`.
pub fn cgo_fields(grid: &Grid2D, pair: &NullPair, h: f64, m: usize, origin: [f64; 2]) -> Result<(ScalarField, ScalarField)> {
    if m == 0 {
        return Err(Error::InvalidInput("order m must be >= 1".into()));
    }
    let (s1, s2) = cgo_specs(pair, h, m, origin)?;
    Ok((
        cgo_exponential(grid, &s1, SignConvention::Plus)?,
        cgo_exponential(grid, &s2, SignConvention::Plus)?,
    ))
}

/// Frequency sampled by `(m, h, xi)`: `(2m/h) xi`.
pub fn sample_frequency(m: usize, h: f64, xi: [f64; 2]) -> [f64; 2] {
    let s = 2.0 * m as f64 / h;
    [s * xi[0], s * xi[1]]
}

/// `m^2 (-2) (omega . zeta)^{m-1} h^{-(m+1)}` (quasilinear) or
/// `m^2 (-2) / h^2` (semilinear).
pub fn normalization(kind: ModelKind, omega: [f64; 2], pair: &NullPair, h: f64, m: usize) -> Result<Complex64> {
    let mf = m as f64;
    match kind {
        ModelKind::Quasilinear => {
            let wz = dot(&c2_real(omega), &pair.zeta);
            if wz.norm() < 1e-6 {
                return Err(Error::DegenerateDirection(wz.norm()));
            }
            Ok(wz.powu(m as u32 - 1) * (-2.0 * mf * mf) / h.powi(m as i32 + 1))
        }
        ModelKind::Semilinear => Ok(c(-2.0 * mf * mf / (h * h), 0.0)),
    }
}

/// Trapezoidal `int c(x) exp(i kappa . x) dx`.
pub fn fourier_quadrature(field: &ScalarField, kappa: [f64; 2]) -> Complex64 {
    let grid = field.grid();
    let wx = axis_phases(grid.nx(), grid.hx(), kappa[0]);
    let wy = axis_phases(grid.ny(), grid.hy(), kappa[1]);
    let mut acc = ZERO;
    for j in 0..=grid.ny() {
        let mut row = ZERO;
        for i in 0..=grid.nx() {
            row += field.values()[grid.index(i, j)] * wx[i];
        }
        acc += row * wy[j];
    }
    acc
}

/// Trapezoid weights times `exp(i kappa x_i)` along one axis.
fn axis_phases(n: usize, h: f64, kappa: f64) -> Vec<Complex64> {
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 0.5 * h } else { h };
            Complex64::from_polar(w, kappa * i as f64 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySample {
    pub m: usize,
    pub lambda: Complex64,
    pub h: f64,
    pub xi: [f64; 2],
    pub k: [f64; 2],
    /// Oracle form minus surrogate form.
    pub raw_form: Complex64,
    /// Estimate of `int c exp(i kappa . x)`, `kappa = (2m/h) xi`.
    pub fourier_value: Complex64,
}

impl FrequencySample {
    pub fn kappa(&self) -> [f64; 2] {
        sample_frequency(self.m, self.h, self.xi)
    }
}

/// Knobs of the sampling pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Stencil step `t = stencil_factor * delta_cfg / max|f_1|`.
    pub stencil_factor: f64,
    pub levels: usize,
    pub origin: [f64; 2],
}

impl SamplingOptions {
    /// Step factor 1e-3 for m = 2; higher orders need larger steps to keep
    /// the m-th difference above roundoff.
    pub fn for_order(m: usize) -> Self {
        Self {
            stencil_factor: if m <= 2 { 1e-3 } else { 1e-2 },
            levels: 2,
            origin: CENTER,
        }
    }
}

/// Oracle and surrogate sharing one grid.
pub struct SamplingContext<'a, O: DtnOracle + ?Sized, S: DtnOracle + ?Sized> {
    pub oracle: &'a O,
    pub surrogate: &'a S,
    pub kind: ModelKind,
    pub omega: [f64; 2],
}

/// One CGO Fourier sample: `raw = D_m(oracle) - D_m(surrogate)` and
/// `fourier = sign * raw / N * exp((2mi/h) o . xi)`.
#[allow(clippy::too_many_arguments)]
pub fn fourier_sample<O: DtnOracle + ?Sized, S: DtnOracle + ?Sized>(
    ctx: &SamplingContext<'_, O, S>,
    m: usize,
    lambda: Complex64,
    pair: &NullPair,
    h: f64,
    sign: f64,
    options: &SamplingOptions,
) -> Result<FrequencySample> {
    if m < 2 {
        return Err(Error::InvalidInput("sampling needs order m >= 2".into()));
    }
    if ctx.kind == ModelKind::Semilinear && lambda != ZERO {
        return Err(Error::InvalidInput("semilinear sampling is defined at lambda = 0".into()));
    }
    let norm = normalization(ctx.kind, ctx.omega, pair, h, m)?;
    let grid = *ctx.oracle.grid();
    let (fs, f_test) = cgo_boundary_family(&grid, pair, h, m, options.origin)?;
    let phi = ctx.oracle.laplace().solve_dirichlet(&f_test)?;
    let mut request = MultilinearRequest::new(lambda, fs.clone(), f_test);
    request.stencil = Stencil {
        levels: options.levels,
        ..Stencil::scaled_for(&fs, options.stencil_factor)
    };
    let a = multilinear_form_with_test(ctx.oracle, &request, &phi)?;
    let b = multilinear_form_with_test(ctx.surrogate, &request, &phi)?;
    let raw = a.value.value - b.value.value;
    let kappa = sample_frequency(m, h, pair.xi);
    let phase = (I * (kappa[0] * options.origin[0] + kappa[1] * options.origin[1])).exp();
    Ok(FrequencySample {
        m,
        lambda,
        h,
        xi: pair.xi,
        k: pair.k,
        raw_form: raw,
        fourier_value: raw / norm * phase * sign,
    })
}

/// Forward solver configured for pipeline use.
pub fn pipeline_solver(model: ConductivityModel, laplace: Option<crate::harmonic::LaplaceSolver>) -> Result<ForwardSolver> {
    let laplace = match laplace {
        Some(l) => l,
        None => crate::harmonic::LaplaceSolver::new(*model.grid())?,
    };
    Ok(ForwardSolver::with_laplace(std::sync::Arc::new(model), laplace).with_options(SolveOptions {
        strategy: NewtonStrategy::Chord,
        ..SolveOptions::default()
    }))
}

/// Built-in calibration model: the order-(m-1) coefficient is `0.5 * bump`.
pub fn calibration_model(grid: Grid2D, kind: ModelKind, m: usize) -> ConductivityModel {
    let q = ScalarField::from_real_fn(grid, |x, y| 0.5 * bump(x, y));
    match kind {
        ModelKind::Quasilinear => {
            let mut model = ConductivityModel::quasilinear(grid, [1.0, 0.0]).expect("unit omega");
            model.set_term(0, m - 1, q).expect("valid term");
            model
        }
        ModelKind::Semilinear => {
            let mut model = ConductivityModel::semilinear(grid).expect("semilinear");
            model.set_term(m - 1, 0, q).expect("valid term");
            model
        }
    }
}

/// Discrepancies `|s F - Q| / |Q|` for `s = +1, -1` on the built-in model.
pub fn calibration_discrepancy(m: usize, kind: ModelKind, n: usize) -> Result<(f64, f64)> {
    let grid = Grid2D::square(n)?;
    let model = calibration_model(grid, kind, m);
    let truth = model.taylor_coefficient(m - 1, ZERO);
    let omega = model.omega();
    let oracle = pipeline_solver(model, None)?;
    let base = match kind {
        ModelKind::Quasilinear => ConductivityModel::quasilinear(grid, omega)?,
        ModelKind::Semilinear => ConductivityModel::semilinear(grid)?,
    };
    let surrogate = pipeline_solver(base, Some(oracle.laplace().clone()))?;
    let ctx = SamplingContext {
        oracle: &oracle,
        surrogate: &surrogate,
        kind,
        omega,
    };
    let pair = null_vector([0.0, 1.0])?;
    let h = 0.5;
    let s = fourier_sample(&ctx, m, ZERO, &pair, h, 1.0, &SamplingOptions::for_order(m))?;
    let q = fourier_quadrature(&truth, s.kappa());
    let plus = (s.fourier_value - q).norm() / q.norm();
    let minus = (-s.fourier_value - q).norm() / q.norm();
    Ok((plus, minus))
}

/// Global sign of the sampling pipeline for order `m`, fixed on a built-in
/// model with known coefficient (32 x 32 grid).
pub fn calibrate_sign(m: usize) -> Result<f64> {
    calibrate_sign_for(m, ModelKind::Quasilinear, 32)
}

pub fn calibrate_sign_for(m: usize, kind: ModelKind, n: usize) -> Result<f64> {
    let (plus, minus) = calibration_discrepancy(m, kind, n)?;
    if plus > 0.25 && minus > 0.25 {
        return Err(Error::Miscalibrated { plus, minus });
    }
    Ok(if plus <= minus { 1.0 } else { -1.0 })
}

/// Directions times scales, enumerated in lexicographic `(h, angle)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub angles: Vec<f64>,
    pub hs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub h: f64,
    pub angle: f64,
}

impl FrequencyPlan {
    /// `n_dirs` uniform angles and `n_h` scales log-spaced in `[h_min, h_max]`
    /// (largest first).
    pub fn uniform(n_dirs: usize, h_min: f64, h_max: f64, n_h: usize) -> Self {
        let angles = (0..n_dirs)
            .map(|k| std::f64::consts::TAU * k as f64 / n_dirs as f64)
            .collect();
        let hs = if n_h <= 1 {
            vec![h_max]
        } else {
            (0..n_h)
                .map(|k| {
                    let s = k as f64 / (n_h - 1) as f64;
                    (h_max.ln() + s * (h_min.ln() - h_max.ln())).exp()
                })
                .collect()
        };
        Self { angles, hs }
    }

    /// 16 directions, h in {0.5, 0.354, 0.25}.
    pub fn default_plan() -> Self {
        Self::uniform(16, 0.25, 0.5, 3)
    }

    pub fn entries(&self) -> Vec<PlanEntry> {
        let mut out: Vec<PlanEntry> = self
            .hs
            .iter()
            .flat_map(|&h| self.angles.iter().map(move |&angle| PlanEntry { h, angle }))
            .collect();
        out.sort_by(|a, b| a.h.total_cmp(&b.h).then(a.angle.total_cmp(&b.angle)));
        out
    }

    pub fn len(&self) -> usize {
        self.angles.len() * self.hs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries whose CGO exponents exceed the overflow guard. The guard is
    /// applied to the spread of the real exponent over the square, which is
    /// the exponent of the unshifted CGO at its worst corner and does not
    /// depend on the origin used for evaluation.
    pub fn overflow_entries(&self, m: usize) -> Vec<PlanEntry> {
        self.entries()
            .into_iter()
            .filter(|e| match null_vector(direction(e.angle)) {
                Ok(pair) => family_span(&pair, e.h, m) > OVERFLOW_LIMIT,
                Err(_) => true,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconResult {
    pub m: usize,
    pub lambda: Complex64,
    #[serde(skip)]
    pub estimate: Option<ScalarField>,
    pub frequencies: Vec<[f64; 2]>,
    pub reg_weight: f64,
    /// Relative data misfit `|A c - b| / |b|` of the inversion.
    pub residual: f64,
    pub samples: Vec<FrequencySample>,
    pub skipped: Vec<PlanEntry>,
    pub sign: f64,
}

impl ReconResult {
    pub fn field(&self) -> &ScalarField {
        self.estimate.as_ref().expect("estimate present")
    }
}

/// Default Tikhonov weight `1e-3 * n_samples`.
pub fn default_reg_weight(n_samples: usize) -> f64 {
    1e-3 * n_samples as f64
}

/// Drops samples whose frequency repeats an earlier one.
pub fn dedup_samples(samples: &[FrequencySample]) -> Vec<FrequencySample> {
    let mut seen = BTreeSet::new();
    samples
        .iter()
        .filter(|s| {
            let k = s.kappa();
            let key = ((k[0] * 1e9).round() as i64, (k[1] * 1e9).round() as i64);
            seen.insert(key)
        })
        .copied()
        .collect()
}

/// Tikhonov inversion `c = E^H (E W E^H + alpha I)^{-1} b` with `E` the
/// exponential kernel at the nodes and `W` the trapezoid weights, i.e. the
/// minimizer of `|E W c - b|^2 + alpha |c|_W^2`.
pub struct FourierInversion {
    grid: Grid2D,
    kappas: Vec<[f64; 2]>,
    chol: nalgebra::linalg::Cholesky<Complex64, nalgebra::Dyn>,
    reg_weight: f64,
}

impl FourierInversion {
    pub fn new(grid: Grid2D, kappas: Vec<[f64; 2]>, reg_weight: f64) -> Result<Self> {
        let n = kappas.len();
        if n == 0 {
            return Err(Error::InvalidInput("inversion needs at least one sample".into()));
        }
        if !(reg_weight >= 0.0 && reg_weight.is_finite()) {
            return Err(Error::InvalidInput(format!("reg_weight must be >= 0, got {reg_weight}")));
        }
        let mut gram = DMatrix::<Complex64>::zeros(n, n);
        for s in 0..n {
            for t in s..n {
                let dk = [kappas[s][0] - kappas[t][0], kappas[s][1] - kappas[t][1]];
                let gx: Complex64 = axis_phases(grid.nx(), grid.hx(), dk[0]).iter().sum();
                let gy: Complex64 = axis_phases(grid.ny(), grid.hy(), dk[1]).iter().sum();
                let v = gx * gy;
                gram[(s, t)] = v;
                gram[(t, s)] = v.conj();
            }
            gram[(s, s)] += c(reg_weight, 0.0);
        }
        let chol = gram.cholesky().ok_or(Error::RegularizationRequired)?;
        // a numerically singular Gram shows up as a tiny pivot
        let lmin = chol.l_dirty().diagonal().iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
        if lmin < 1e-7 {
            return Err(Error::RegularizationRequired);
        }
        Ok(Self {
            grid,
            kappas,
            chol,
            reg_weight,
        })
    }

    pub fn kappas(&self) -> &[[f64; 2]] {
        &self.kappas
    }

    pub fn reg_weight(&self) -> f64 {
        self.reg_weight
    }

    /// Applies `E^H y` at every node.
    fn adjoint(&self, y: &DVector<Complex64>) -> ScalarField {
        let g = self.grid;
        let mut out = vec![ZERO; g.node_count()];
        for (s, k) in self.kappas.iter().enumerate() {
            let ex: Vec<Complex64> = (0..=g.nx()).map(|i| Complex64::from_polar(1.0, -k[0] * i as f64 * g.hx())).collect();
            let ey: Vec<Complex64> = (0..=g.ny()).map(|j| Complex64::from_polar(1.0, -k[1] * j as f64 * g.hy()) * y[s]).collect();
            for j in 0..=g.ny() {
                for i in 0..=g.nx() {
                    out[g.index(i, j)] += ex[i] * ey[j];
                }
            }
        }
        ScalarField::from_values(g, out).expect("sizes match")
    }

    /// Forward map `c -> (int c exp(i kappa_s . x))_s`.
    pub fn forward(&self, field: &ScalarField) -> Vec<Complex64> {
        self.kappas.iter().map(|&k| fourier_quadrature(field, k)).collect()
    }

    pub fn invert(&self, b: &[Complex64]) -> (ScalarField, f64) {
        let rhs = DVector::from_column_slice(b);
        let y = self.chol.solve(&rhs);
        let est = self.adjoint(&y);
        let fit = self.forward(&est);
        let bn = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let rn = fit.iter().zip(b).map(|(a, v)| (a - v).norm_sqr()).sum::<f64>().sqrt();
        let residual = if bn > 0.0 { rn / bn } else { 0.0 };
        (est, residual)
    }
}

/// Regularized least-squares fit of nodal values to the sampled transform.
pub fn invert_fourier(samples: &[FrequencySample], grid: &Grid2D, reg_weight: f64) -> Result<ReconResult> {
    let samples = dedup_samples(samples);
    let kappas: Vec<[f64; 2]> = samples.iter().map(|s| s.kappa()).collect();
    let inv = FourierInversion::new(*grid, kappas.clone(), reg_weight)?;
    let b: Vec<Complex64> = samples.iter().map(|s| s.fourier_value).collect();
    let (est, residual) = inv.invert(&b);
    Ok(ReconResult {
        m: samples.first().map_or(0, |s| s.m),
        lambda: samples.first().map_or(ZERO, |s| s.lambda),
        estimate: Some(est),
        frequencies: kappas,
        reg_weight,
        residual,
        samples,
        skipped: Vec::new(),
        sign: 1.0,
    })
}

/// Samples synthesized by quadrature from a known field at the plan's
/// frequencies for order `m`.
pub fn synthetic_samples(truth: &ScalarField, m: usize, plan: &FrequencyPlan) -> Vec<FrequencySample> {
    plan.entries()
        .into_iter()
        .map(|e| {
            let xi = direction(e.angle);
            let kappa = sample_frequency(m, e.h, xi);
            FrequencySample {
                m,
                lambda: ZERO,
                h: e.h,
                xi,
                k: [xi[1], -xi[0]],
                raw_form: ZERO,
                fourier_value: fourier_quadrature(truth, kappa),
            }
        })
        .collect()
}

/// The truth seen through the inversion operator: exact quadrature samples
/// at the plan's frequencies, inverted with the same weight. This is the
/// band-limited target an error-free pipeline would return.
pub fn band_projection(truth: &ScalarField, m: usize, plan: &FrequencyPlan, reg_weight: f64) -> Result<ScalarField> {
    let samples = synthetic_samples(truth, m, plan);
    Ok(invert_fourier(&samples, truth.grid(), reg_weight)?.estimate.expect("estimate"))
}

/// Fraction of `|truth|_W^2` not captured by the regularized inversion of
/// its own exact samples, `1 - Re<truth, estimate>_W / |truth|_W^2`.
/// Nonincreasing when frequencies are added at fixed weight.
pub fn self_consistency_residual(truth: &ScalarField, m: usize, plan: &FrequencyPlan, reg_weight: f64) -> Result<f64> {
    let est = band_projection(truth, m, plan, reg_weight)?;
    let w = truth.grid().trapezoid_weights();
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), wi) in truth.values().iter().zip(est.values()).zip(&w) {
        num += wi * (a.conj() * b).re;
        den += wi * a.norm_sqr();
    }
    Ok(if den > 0.0 { 1.0 - num / den } else { 0.0 })
}

/// Relative trapezoidal L2 distance `|a - b| / |b|`.
pub fn relative_l2(a: &ScalarField, b: &ScalarField) -> f64 {
    let d = a.sub(b).l2_norm();
    let n = b.l2_norm();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

/// Settings for [`recover_coefficient`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoverOptions {
    pub sampling: SamplingOptions,
    /// `None` uses `1e-3 * n_samples`.
    pub reg_weight: Option<f64>,
    /// `None` runs the calibration.
    pub sign: Option<f64>,
}

impl RecoverOptions {
    pub fn for_order(m: usize) -> Self {
        Self {
            sampling: SamplingOptions::for_order(m),
            reg_weight: None,
            sign: None,
        }
    }
}

/// Recovers `d_z^{m-1} gamma(., lambda, 0)` (or `d_tau^{m-1} gamma(., 0)`)
/// assuming the surrogate already holds all lower orders, then appends the
/// estimate to the surrogate as the order-(m-1) coefficient.
pub fn recover_coefficient<O: DtnOracle + ?Sized>(
    oracle: &O,
    surrogate: &mut ConductivityModel,
    m: usize,
    lambda: Complex64,
    plan: &FrequencyPlan,
    options: &RecoverOptions,
) -> Result<ReconResult> {
    if plan.is_empty() {
        return Err(Error::InvalidInput("frequency plan is empty".into()));
    }
    let grid = *oracle.grid();
    if surrogate.grid() != &grid {
        return Err(Error::InvalidInput("surrogate grid differs from the oracle grid".into()));
    }
    let kind = surrogate.kind();
    let omega = surrogate.omega();
    let sign = match options.sign {
        Some(s) => s,
        None => calibrate_sign_for(m, kind, 32)?,
    };
    let skipped = plan.overflow_entries(m);
    let entries: Vec<PlanEntry> = plan.entries().into_iter().filter(|e| !skipped.contains(e)).collect();
    if entries.is_empty() {
        return Err(Error::InvalidInput("every plan entry violates the overflow guard".into()));
    }
    let sur_solver = pipeline_solver(surrogate.clone(), Some(oracle.laplace().clone()))?;
    let ctx = SamplingContext {
        oracle,
        surrogate: &sur_solver,
        kind,
        omega,
    };
    let samples: Vec<Result<FrequencySample>> = entries
        .par_iter()
        .map(|e| {
            let pair = null_vector(direction(e.angle))?;
            fourier_sample(&ctx, m, lambda, &pair, e.h, sign, &options.sampling)
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let reg = options.reg_weight.unwrap_or_else(|| default_reg_weight(dedup_samples(&samples).len()));
    let mut result = invert_fourier(&samples, &grid, reg)?;
    result.m = m;
    result.lambda = lambda;
    result.skipped = skipped;
    result.sign = sign;
    match kind {
        ModelKind::Quasilinear => surrogate.set_term(0, m - 1, result.field().clone())?,
        ModelKind::Semilinear => surrogate.set_term(m - 1, 0, result.field().clone())?,
    }
    Ok(result)
}

/// One recovery per `lambda` (each against a fresh copy of `surrogate`).
pub fn recover_over_lambda_grid<O: DtnOracle + ?Sized>(
    oracle: &O,
    surrogate: &ConductivityModel,
    m: usize,
    lambdas: &[Complex64],
    plan: &FrequencyPlan,
    options: &RecoverOptions,
) -> Result<Vec<ReconResult>> {
    let mut options = *options;
    if options.sign.is_none() && !lambdas.is_empty() {
        options.sign = Some(calibrate_sign_for(m, surrogate.kind(), 32)?);
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let mut s = surrogate.clone();
            recover_coefficient(oracle, &mut s, m, lambda, plan, &options)
        })
        .collect()
}

/// Per-node least-squares fit `c(lambda) = sum_{j<=degree} a_j lambda^j / j!`;
/// returns the fields `a_0..a_degree`.
pub fn fit_lambda_polynomial(results: &[(Complex64, &ScalarField)], degree: usize) -> Result<Vec<ScalarField>> {
    if results.len() <= degree {
        return Err(Error::InvalidInput(format!(
            "degree {degree} fit needs more than {degree} lambda values"
        )));
    }
    let grid = *results[0].1.grid();
    let mut v = DMatrix::<Complex64>::zeros(results.len(), degree + 1);
    for (r, (lam, _)) in results.iter().enumerate() {
        let mut fact = 1.0;
        for j in 0..=degree {
            if j > 0 {
                fact *= j as f64;
            }
            v[(r, j)] = lam.powu(j as u32) / fact;
        }
    }
    let svd = v.svd(true, true);
    let mut out = vec![vec![ZERO; grid.node_count()]; degree + 1];
    for n in 0..grid.node_count() {
        let b = DVector::from_iterator(results.len(), results.iter().map(|(_, f)| f.values()[n]));
        let a = svd.solve(&b, 1e-12).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for j in 0..=degree {
            out[j][n] = a[j];
        }
    }
    out.into_iter().map(|v| ScalarField::from_values(grid, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::GridOperators;

    #[test]
    fn product_structure() {
        let g = Grid2D::square(16).unwrap();
        let pair = null_vector(direction(0.7)).unwrap();
        let (v1, v2) = cgo_fields(&g, &pair, 0.5, 3, [0.0, 0.0]).unwrap();
        let kappa = sample_frequency(3, 0.5, pair.xi);
        for n in 0..g.node_count() {
            let [x, y] = g.coords(n);
            let p = v1.values()[n].powu(3) * v2.values()[n];
            let e = Complex64::from_polar(1.0, kappa[0] * x + kappa[1] * y);
            assert!((p - e).norm() < 1e-12);
        }
    }

    #[test]
    fn test_trace_point_value() {
        let g = Grid2D::square(8).unwrap();
        let pair = null_vector([0.0, 1.0]).unwrap();
        let (_, ft) = cgo_boundary_family(&g, &pair, 1.0, 2, [0.0, 0.0]).unwrap();
        // (1, 0) is boundary ordinal nx
        let v = ft.values()[8];
        assert!((v - c((-2.0f64).exp(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn gradient_identity_second_order() {
        let pair = null_vector(direction(0.3)).unwrap();
        let err = |n: usize| {
            let g = Grid2D::square(n).unwrap();
            let (v1, _) = cgo_fields(&g, &pair, 0.5, 2, CENTER).unwrap();
            let grad = GridOperators::new(g).gradient(v1.values());
            g.interior_nodes()
                .into_iter()
                .map(|p| {
                    let v = v1.values()[p];
                    (grad[p][0] - pair.zeta[0] / 0.5 * v).norm() + (grad[p][1] - pair.zeta[1] / 0.5 * v).norm()
                })
                .fold(0.0, f64::max)
        };
        let r = err(32) / err(64);
        assert!((r - 4.0).abs() < 0.3, "ratio {r}");
    }

    #[test]
    fn zero_samples_give_zero() {
        let g = Grid2D::square(16).unwrap();
        let truth = ScalarField::zeros(g);
        let samples = synthetic_samples(&truth, 2, &FrequencyPlan::default_plan());
        let r = invert_fourier(&samples, &g, 0.048).unwrap();
        assert_eq!(r.field().max_abs(), 0.0);
    }

    #[test]
    fn duplicates_are_ignored() {
        let g = Grid2D::square(16).unwrap();
        let truth = ScalarField::from_real_fn(g, bump);
        let mut samples = synthetic_samples(&truth, 2, &FrequencyPlan::uniform(8, 0.3, 0.5, 2));
        let a = invert_fourier(&samples, &g, 0.016).unwrap();
        samples.push(samples[3]);
        let b = invert_fourier(&samples, &g, 0.016).unwrap();
        assert_eq!(a.field(), b.field());
    }

    #[test]
    fn regularization_required_when_singular() {
        let g = Grid2D::square(8).unwrap();
        let truth = ScalarField::from_real_fn(g, bump);
        // frequencies differing by the grid period alias to identical rows
        let mut s = synthetic_samples(&truth, 2, &FrequencyPlan::uniform(1, 0.5, 0.5, 1));
        let mut t = s[0];
        t.h = 1.0 / (2.0 + 4.0 * std::f64::consts::PI);
        s.push(t);
        assert!(matches!(invert_fourier(&s, &g, 0.0), Err(Error::RegularizationRequired)));
        assert!(invert_fourier(&s, &g, 1e-3).is_ok());
    }

    #[test]
    fn plan_order_and_overflow() {
        let mut plan = FrequencyPlan::uniform(4, 0.01, 0.5, 2);
        plan.angles = (0..4).map(|k| 0.4 + k as f64 * std::f64::consts::FRAC_PI_2).collect();
        let e = plan.entries();
        assert_eq!(e.len(), 8);
        assert!(e.windows(2).all(|w| w[0].h < w[1].h || (w[0].h == w[1].h && w[0].angle < w[1].angle)));
        assert_eq!(plan.overflow_entries(2).len(), 4);
        assert!(FrequencyPlan::default_plan().overflow_entries(2).is_empty());
    }

    #[test]
    fn lambda_fit_recovers_line() {
        let g = Grid2D::square(8).unwrap();
        let q = ScalarField::from_real_fn(g, bump);
        let lams = [c(0.0, 0.0), c(0.1, 0.0), c(0.2, 0.0)];
        let fields: Vec<ScalarField> = lams.iter().map(|l| q.scaled(*l)).collect();
        let pairs: Vec<(Complex64, &ScalarField)> = lams.iter().copied().zip(fields.iter()).collect();
        let fit = fit_lambda_polynomial(&pairs, 1).unwrap();
        assert!(fit[0].max_abs() < 1e-12);
        assert!(fit[1].sub(&q).max_abs() < 1e-12);
    }
}
