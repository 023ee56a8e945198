use num_complex::Complex64;
use proptest::prelude::*;

use qlcond::dtn::{
    dtn_pairing, first_linearization_field, multilinear_form, weak_pairing, DtnOracle, MultilinearRequest, Stencil,
};
use qlcond::forward::{boundary_flux, solve_quasilinear, solve_semilinear, ForwardSolver};
use qlcond::grid::{BoundaryData, Grid2D, ScalarField};
use qlcond::harmonic::{c, solve_laplace_dirichlet};
use qlcond::model::{bump, evaluate_gamma, ConductivityModel};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn quasi(n: usize) -> ConductivityModel {
    ConductivityModel::quasilinear(Grid2D::square(n).unwrap(), [1.0, 0.0]).unwrap()
}

fn bump_field(g: Grid2D, a: f64) -> ScalarField {
    ScalarField::from_real_fn(g, |x, y| a * bump(x, y))
}

#[test]
fn gamma_series_examples() {
    let g = Grid2D::square(8).unwrap();
    let tau = ScalarField::from_real_fn(g, |x, y| x - 2.0 * y);
    let z0 = c(0.2, -0.1);
    let zval = ScalarField::constant(g, z0);
    let one = ScalarField::constant(g, c(1.0, 0.0));
    let mut m = quasi(8);
    assert_eq!(evaluate_gamma(&m, &tau, &zval).unwrap(), one);
    m.set_term(2, 3, bump_field(g, 0.7)).unwrap();
    m.set_term(1, 1, bump_field(g, -0.4)).unwrap();
    assert_eq!(evaluate_gamma(&m, &tau, &ScalarField::zeros(g)).unwrap(), one);
    let mut m = quasi(8);
    let q = bump_field(g, 0.3);
    m.set_term(0, 1, q.clone()).unwrap();
    let got = evaluate_gamma(&m, &tau, &zval).unwrap();
    for (v, qv) in got.values().iter().zip(q.values()) {
        assert!((v - (1.0 + qv * z0)).norm() < 1e-15);
    }
}

#[test]
fn quasilinear_examples() {
    let m = quasi(16);
    let g = *m.grid();
    let f = BoundaryData::from_real_fn(g, |x, y| x * x - y * y);
    let (u, _) = solve_quasilinear(&m, ZERO, &f, None).unwrap();
    assert!(u.sub(&ScalarField::from_real_fn(g, |x, y| x * x - y * y)).max_abs() <= 1e-10);

    let m = ConductivityModel::builtin_bump(g, 0.3);
    let lambda = c(0.4, -0.2);
    let (u, report) = solve_quasilinear(&m, lambda, &BoundaryData::zeros(g), None).unwrap();
    assert!(report.iterations <= 1);
    assert!(u.values().iter().all(|v| *v == lambda));
}

#[test]
fn sup_deviation_is_linear_in_amplitude() {
    let m = ConductivityModel::builtin_bump(Grid2D::square(24).unwrap(), 0.3);
    let g = *m.grid();
    let xy = BoundaryData::from_real_fn(g, |x, y| x * y);
    let ratio = |a: f64| {
        let (_, r) = solve_quasilinear(&m, ZERO, &xy.scaled(c(a, 0.0)), None).unwrap();
        r.sup_deviation / a
    };
    let r: Vec<f64> = [0.01, 0.005, 0.0025].iter().map(|&a| ratio(a)).collect();
    assert!((r[0] / r[1] - 1.0).abs() <= 0.05 && (r[1] / r[2] - 1.0).abs() <= 0.05, "{r:?}");
}

#[test]
fn semilinear_examples() {
    let g = Grid2D::square(16).unwrap();
    let m = ConductivityModel::semilinear(g).unwrap();
    let f = BoundaryData::from_real_fn(g, |x, y| x * y);
    let (u, _) = solve_semilinear(&m, &f, None).unwrap();
    assert!(u.sub(&solve_laplace_dirichlet(&g, &f).unwrap()).max_abs() <= 1e-10);

    let mut m = ConductivityModel::semilinear(g).unwrap();
    m.set_term(1, 0, bump_field(g, 0.3)).unwrap();
    let (u, _) = solve_semilinear(&m, &BoundaryData::zeros(g), None).unwrap();
    assert_eq!(u.max_abs(), 0.0);

    // quadratic contraction: r2 / r1^2 is independent of the data amplitude
    let q = |a: f64| {
        let (_, report) = solve_semilinear(&m, &f.scaled(c(a, 0.0)), None).unwrap();
        assert!(report.final_residual <= report.tolerance);
        let r = &report.residual_history;
        assert!(r.len() >= 3, "{r:?}");
        r[2] / (r[1] * r[1])
    };
    let (q1, q2) = (q(0.05), q(0.025));
    assert!((q1 / q2 - 1.0).abs() < 0.2, "{q1} {q2}");
}

#[test]
fn boundary_flux_sums_to_zero() {
    let m = ConductivityModel::builtin_bump(Grid2D::square(20).unwrap(), 0.5);
    let g = *m.grid();
    let f = BoundaryData::from_real_fn(g, |x, y| 0.04 * (3.0 * x + y * y).sin());
    let s = ForwardSolver::new(m).unwrap().solve(c(0.1, 0.0), &f).unwrap();
    let flux = boundary_flux(s_ops(&g).as_ref(), s.u.values(), &s.gamma);
    let total: Complex64 = flux.iter().sum();
    let scale: f64 = flux.iter().map(|v| v.norm()).sum();
    assert!(total.norm() <= 1e-12 * scale, "{total}");
}

fn s_ops(g: &Grid2D) -> std::sync::Arc<qlcond::stencil::GridOperators> {
    std::sync::Arc::new(qlcond::stencil::GridOperators::new(*g))
}

#[test]
fn holomorphy_complex_step() {
    let g = Grid2D::square(20).unwrap();
    let mut m = ConductivityModel::builtin_bump(g, 0.5);
    m.set_term(1, 1, bump_field(g, 0.4)).unwrap();
    let solver = ForwardSolver::new(m).unwrap();
    let lambda = c(0.2, 0.0);
    let f = BoundaryData::from_real_fn(g, |x, y| x * y + 0.5 * x);
    let phi = solver.laplace().solve_dirichlet(&BoundaryData::from_real_fn(g, |x, y| x - y * y)).unwrap();
    let p = |e: Complex64| solver.pairing(lambda, &f.scaled(e), &phi).unwrap();
    let cr = |d: f64| {
        let real = (p(c(d, 0.0)) - p(c(-d, 0.0))) / (2.0 * d);
        let imag = (p(c(0.0, d)) - p(c(0.0, -d))) / c(0.0, 2.0 * d);
        (real - imag).norm()
    };
    let ratio = cr(0.02) / cr(0.01);
    assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
}

#[test]
fn pairing_of_quadratic_converges() {
    let err = |n: usize| {
        let m = quasi(n);
        let f = BoundaryData::from_real_fn(*m.grid(), |x, y| x * x - y * y);
        (dtn_pairing(&m, ZERO, &f, &f).unwrap() - c(8.0 / 3.0, 0.0)).norm()
    };
    let (e16, e32) = (err(16), err(32));
    assert!(e32 < 1e-3, "{e32}");
    assert!((e16 / e32 - 4.0).abs() < 0.3, "{}", e16 / e32);
}

#[test]
fn first_order_form_of_laplace() {
    let m = quasi(16);
    let g = *m.grid();
    let f = BoundaryData::from_real_fn(g, |x, y| (2.0 * x).cos() * y);
    let ft = BoundaryData::from_real_fn(g, |x, y| x + y * y * x);
    let solver = ForwardSolver::new(m).unwrap();
    let out = multilinear_form(&solver, &MultilinearRequest::new(ZERO, vec![f.clone()], ft.clone())).unwrap();
    let vf = solver.laplace().solve_dirichlet(&f).unwrap();
    let vt = solver.laplace().solve_dirichlet(&ft).unwrap();
    let ones = vec![c(1.0, 0.0); g.node_count()];
    let direct = weak_pairing(solver.laplace().operators(), vf.values(), &ones, vt.values());
    assert!((out.value.value - direct).norm() <= 1e-8 * direct.norm(), "{} {}", out.value.value, direct);
}

#[test]
fn linearization_of_xy_is_harmonic() {
    let g = Grid2D::square(16).unwrap();
    let mut m = ConductivityModel::builtin_bump(g, 0.3);
    m.set_term(0, 2, bump_field(g, 0.5)).unwrap();
    let solver = ForwardSolver::new(m).unwrap();
    let f = BoundaryData::from_real_fn(g, |x, y| x * y);
    let stencil = Stencil { t: 1e-3, levels: 2 };
    let v = first_linearization_field(&solver, c(0.1, 0.0), &f, stencil).unwrap();
    assert!(v.sub(&solve_laplace_dirichlet(&g, &f).unwrap()).max_abs() <= 1e-6);
    let z = first_linearization_field(&solver, c(0.1, 0.0), &BoundaryData::zeros(g), stencil).unwrap();
    assert_eq!(z.max_abs(), 0.0);
}

#[test]
fn halving_t_quarters_the_error() {
    let g = Grid2D::square(16).unwrap();
    let solver = ForwardSolver::new(ConductivityModel::builtin_bump(g, 0.5)).unwrap();
    let f1 = BoundaryData::from_real_fn(g, |x, y| x * y);
    let f2 = BoundaryData::from_real_fn(g, |x, y| x * x - y * y + x);
    let ft = BoundaryData::from_real_fn(g, |x, _| x);
    let req = MultilinearRequest::new(ZERO, vec![f1, f2], ft).with_stencil(Stencil { t: 0.02, levels: 3 });
    let raw = multilinear_form(&solver, &req).unwrap().raw;
    let ratio = ((raw[0] - raw[1]) / (raw[1] - raw[2])).norm();
    assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn lower_orders_match_laplace() {
    let g = Grid2D::square(16).unwrap();
    let mut m = quasi(16);
    m.set_term(0, 2, bump_field(g, 0.8)).unwrap();
    m.set_term(1, 3, bump_field(g, -0.5)).unwrap();
    let lin = ForwardSolver::new(quasi(16)).unwrap();
    let solver = ForwardSolver::new(m).unwrap();
    let f1 = BoundaryData::from_real_fn(g, |x, y| x * y);
    let f2 = BoundaryData::from_real_fn(g, |x, y| (x + y).sin());
    let ft = BoundaryData::from_real_fn(g, |x, y| x * x - y);
    for fs in [vec![f1.clone()], vec![f1.clone(), f2.clone()]] {
        let req = MultilinearRequest::new(c(0.2, 0.0), fs, ft.clone()).with_stencil(Stencil { t: 1e-2, levels: 2 });
        let a = multilinear_form(&solver, &req).unwrap().value;
        let b = multilinear_form(&lin, &req).unwrap().value;
        let bound = 2.0 * a.estimated_error.max(b.estimated_error) + 1e-12 * b.value.norm().max(1.0);
        assert!((a.value - b.value).norm() <= bound, "{} {} {bound}", a.value, b.value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn laplace_pairing_is_bilinear(a in -2.0f64..2.0, b in -2.0f64..2.0, k in 1.0f64..3.0) {
        let m = quasi(10);
        let g = *m.grid();
        let f1 = BoundaryData::from_real_fn(g, |x, y| (k * x).sin() + y);
        let f2 = BoundaryData::from_real_fn(g, |x, y| x * y * y);
        let t = BoundaryData::from_real_fn(g, |x, y| (k * y).cos() - x);
        let combo = BoundaryData::combination(g, &[(&f1, c(a, 0.0)), (&f2, c(b, 0.0))]);
        let lhs = dtn_pairing(&m, ZERO, &combo, &t).unwrap();
        let rhs = dtn_pairing(&m, ZERO, &f1, &t).unwrap() * a + dtn_pairing(&m, ZERO, &f2, &t).unwrap() * b;
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
        let swapped = dtn_pairing(&m, ZERO, &t, &combo).unwrap();
        prop_assert!((lhs - swapped).norm() <= 1e-10 * (1.0 + lhs.norm()));
    }
}
