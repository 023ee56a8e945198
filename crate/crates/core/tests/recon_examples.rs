use num_complex::Complex64;

use qlcond::forward::ForwardSolver;
use qlcond::grid::{Grid2D, ScalarField};
use qlcond::harmonic::{c, direction, null_vector};
use qlcond::model::{bump, ConductivityModel, ModelKind};
use qlcond::recon::{
    band_projection, calibrate_sign, calibrate_sign_for, default_reg_weight, fit_lambda_polynomial, fourier_quadrature,
    fourier_sample, invert_fourier, pipeline_solver, recover_coefficient, recover_over_lambda_grid, relative_l2,
    self_consistency_residual, synthetic_samples, FrequencyPlan, RecoverOptions, SamplingContext, SamplingOptions,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn q_field(g: Grid2D) -> ScalarField {
    ScalarField::from_real_fn(g, |x, y| 0.3 * (-40.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp())
}

fn small_plan() -> FrequencyPlan {
    FrequencyPlan::uniform(8, 0.35, 0.5, 2)
}

fn sample_errors(kind: ModelKind, n: usize) -> Vec<f64> {
    let g = Grid2D::square(n).unwrap();
    let q = q_field(g);
    let (oracle, base) = match kind {
        ModelKind::Quasilinear => {
            let mut m = ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap();
            m.set_term(0, 1, q.clone()).unwrap();
            (m, ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap())
        }
        ModelKind::Semilinear => {
            let mut m = ConductivityModel::semilinear(g).unwrap();
            m.set_term(1, 0, q.clone()).unwrap();
            (m, ConductivityModel::semilinear(g).unwrap())
        }
    };
    let oracle = pipeline_solver(oracle, None).unwrap();
    let surrogate = pipeline_solver(base, Some(oracle.laplace().clone())).unwrap();
    let ctx = SamplingContext {
        oracle: &oracle,
        surrogate: &surrogate,
        kind,
        omega: [1.0, 0.0],
    };
    let sign = calibrate_sign_for(2, kind, 32).unwrap();
    [0.3, 1.1, 2.0, 4.0]
        .iter()
        .map(|&theta| {
            let pair = null_vector(direction(theta)).unwrap();
            let s = fourier_sample(&ctx, 2, ZERO, &pair, 0.5, sign, &SamplingOptions::for_order(2)).unwrap();
            let exact = fourier_quadrature(&q, s.kappa());
            (s.fourier_value - exact).norm() / exact.norm()
        })
        .collect()
}

#[test]
fn quasilinear_sample_matches_quadrature() {
    let e = sample_errors(ModelKind::Quasilinear, 48);
    assert!(e.iter().all(|&v| v <= 0.02), "{e:?}");
}

#[test]
fn semilinear_sample_matches_quadrature() {
    let e = sample_errors(ModelKind::Semilinear, 48);
    assert!(e.iter().all(|&v| v <= 0.02), "{e:?}");
}

#[test]
fn identical_models_give_zero_samples() {
    let g = Grid2D::square(24).unwrap();
    let model = ConductivityModel::builtin_bump(g, 0.3);
    let a = pipeline_solver(model.clone(), None).unwrap();
    let b = pipeline_solver(model, Some(a.laplace().clone())).unwrap();
    let ctx = SamplingContext {
        oracle: &a,
        surrogate: &b,
        kind: ModelKind::Quasilinear,
        omega: [1.0, 0.0],
    };
    for (theta, h) in [(0.2, 0.5), (1.7, 0.35), (3.0, 0.25)] {
        let pair = null_vector(direction(theta)).unwrap();
        let s = fourier_sample(&ctx, 2, ZERO, &pair, h, 1.0, &SamplingOptions::for_order(2)).unwrap();
        assert_eq!(s.fourier_value, ZERO);
    }
}

#[test]
fn calibration_is_stable() {
    let s = calibrate_sign(2).unwrap();
    assert_eq!(calibrate_sign(2).unwrap(), s);
    for n in [48, 64] {
        assert_eq!(calibrate_sign_for(2, ModelKind::Quasilinear, n).unwrap(), s);
    }
    assert_eq!(calibrate_sign(3).unwrap(), s);
}

#[test]
fn laplace_oracle_recovers_zero() {
    let g = Grid2D::square(32).unwrap();
    let oracle = ForwardSolver::new(ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap()).unwrap();
    let mut sur = ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap();
    let r = recover_coefficient(&oracle, &mut sur, 2, ZERO, &small_plan(), &RecoverOptions::for_order(2)).unwrap();
    assert!(r.field().max_abs() <= 1e-3, "{}", r.field().max_abs());
}

#[test]
fn self_consistency_on_band() {
    let g = Grid2D::square(32).unwrap();
    let plan = FrequencyPlan::default_plan();
    let truth = q_field(g);
    let samples = synthetic_samples(&truth, 2, &plan);
    let r = invert_fourier(&samples, &g, default_reg_weight(plan.len())).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for k in &r.frequencies {
        let a = fourier_quadrature(r.field(), *k);
        let b = fourier_quadrature(&truth, *k);
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
    }
    let rel = (num / den).sqrt();
    assert!(rel <= 0.1, "{rel}");
}

#[test]
fn more_frequencies_never_hurt() {
    let g = Grid2D::square(24).unwrap();
    let truth = ScalarField::from_real_fn(g, |x, y| bump(x, y) + 0.5 * (-30.0 * ((x - 0.3).powi(2) + (y - 0.7).powi(2))).exp());
    let reg = 0.05;
    let mut last = f64::INFINITY;
    for (dirs, nh) in [(4, 1), (8, 1), (8, 2), (16, 2), (16, 3), (24, 4)] {
        let r = self_consistency_residual(&truth, 2, &FrequencyPlan::uniform(dirs, 0.25, 0.5, nh), reg).unwrap();
        assert!(r <= last + 1e-12, "{dirs}x{nh}: {r} > {last}");
        last = r;
    }
}

fn lambda_oracle(g: Grid2D, tau_dependent: bool) -> (ForwardSolver, ScalarField) {
    let q = q_field(g);
    let mut m = ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap();
    m.set_term(usize::from(tau_dependent), 1, q.clone()).unwrap();
    (pipeline_solver(m, None).unwrap(), q)
}

#[test]
fn lambda_grid_without_tau_dependence() {
    let g = Grid2D::square(32).unwrap();
    let (oracle, q) = lambda_oracle(g, false);
    let plan = small_plan();
    let sur = ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap();
    let lambdas = [ZERO, c(0.1, 0.0), c(0.2, 0.0)];
    let rs = recover_over_lambda_grid(&oracle, &sur, 2, &lambdas, &plan, &RecoverOptions::for_order(2)).unwrap();
    let band = band_projection(&q, 2, &plan, rs[0].reg_weight).unwrap();
    let err = relative_l2(rs[0].field(), &band);
    for r in &rs[1..] {
        let d = relative_l2(r.field(), rs[0].field());
        assert!(d <= 2.0 * err, "lambda {}: spread {d}, single {err}", r.lambda);
    }
    assert!(recover_over_lambda_grid(&oracle, &sur, 2, &[], &plan, &RecoverOptions::for_order(2)).unwrap().is_empty());
}

#[test]
fn lambda_grid_slope() {
    let g = Grid2D::square(32).unwrap();
    let (oracle, q) = lambda_oracle(g, true);
    let plan = small_plan();
    let sur = ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap();
    let lambdas = [ZERO, c(0.1, 0.0), c(0.2, 0.0)];
    let rs = recover_over_lambda_grid(&oracle, &sur, 2, &lambdas, &plan, &RecoverOptions::for_order(2)).unwrap();
    let pts: Vec<(Complex64, &ScalarField)> = rs.iter().map(|r| (r.lambda, r.field())).collect();
    let fit = fit_lambda_polynomial(&pts, 1).unwrap();
    let band = band_projection(&q, 2, &plan, rs[0].reg_weight).unwrap();
    let slope_err = relative_l2(&fit[1], &band);
    let intercept = fit[0].l2_norm() / band.l2_norm();
    assert!(slope_err <= 0.05 && intercept <= 0.01, "slope {slope_err}, intercept {intercept}");
}

#[test]
fn semilinear_and_quasilinear_agree() {
    let g = Grid2D::square(32).unwrap();
    let q = q_field(g);
    let plan = small_plan();
    let run = |kind: ModelKind| {
        let (oracle, mut sur) = match kind {
            ModelKind::Quasilinear => {
                let mut m = ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap();
                m.set_term(0, 1, q.clone()).unwrap();
                (m, ConductivityModel::quasilinear(g, [1.0, 0.0]).unwrap())
            }
            ModelKind::Semilinear => {
                let mut m = ConductivityModel::semilinear(g).unwrap();
                m.set_term(1, 0, q.clone()).unwrap();
                (m, ConductivityModel::semilinear(g).unwrap())
            }
        };
        let oracle = pipeline_solver(oracle, None).unwrap();
        let mut opts = RecoverOptions::for_order(2);
        opts.sign = Some(calibrate_sign_for(2, kind, 32).unwrap());
        recover_coefficient(&oracle, &mut sur, 2, ZERO, &plan, &opts).unwrap()
    };
    let a = run(ModelKind::Quasilinear);
    let b = run(ModelKind::Semilinear);
    let band = band_projection(&q, 2, &plan, a.reg_weight).unwrap();
    let (ea, eb) = (relative_l2(a.field(), &band), relative_l2(b.field(), &band));
    let d = relative_l2(a.field(), b.field());
    assert!(d <= 2.0 * ea.max(eb), "quasi {ea}, semi {eb}, between {d}");
}
