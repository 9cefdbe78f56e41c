use super::*;

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

fn decay(_t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(-y)
}

fn cfg(method: Method, reltol: f64) -> StepperConfig {
    StepperConfig::default().with_method(method).with_tolerances(reltol, reltol * 1e-2)
}

const METHODS: [Method; 2] = [Method::Explicit54, Method::RosenbrockStiff];

#[test]
fn exponential_decay() {
    for m in METHODS {
        let sol = integrate(decay, &dv(&[1.0]), (0.0, 1.0), &cfg(m, 1e-8)).unwrap();
        let y1 = sol.final_state()[0];
        assert!((y1 - (-1.0f64).exp()).abs() < 1e-6, "{m:?}: {y1}");
        assert_eq!(sol.span(), (0.0, 1.0));
        assert_eq!(sol.step_count(), sol.mesh().len() - 1);
    }
}

#[test]
fn backward_linear_drift() {
    for m in METHODS {
        let sol = integrate(|_, _| Ok(dv(&[1.0])), &dv(&[5.0]), (1.0, 0.0), &cfg(m, 1e-6)).unwrap();
        assert!((sol.final_state()[0] - 4.0).abs() < 1e-12);
        assert!(sol.mesh().windows(2).all(|w| w[1] < w[0]));
        assert!((sol.eval(0.25).unwrap()[0] - 4.25).abs() < 1e-12);
    }
}

/// Implicit Euler at dt = 1e-6 on y' = -1e4 (y - cos t); the linear
/// implicit update is solved exactly.
fn relaxation_oracle() -> f64 {
    let lambda = 1e4;
    let n = 1_000_000;
    let h = 1.0 / n as f64;
    let mut y = 0.0;
    for i in 1..=n {
        let t = i as f64 * h;
        y = (y + h * lambda * t.cos()) / (1.0 + h * lambda);
    }
    y
}

fn relaxation(t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(dv(&[-1e4 * (y[0] - t.cos())]))
}

#[test]
fn stiff_relaxation() {
    let oracle = relaxation_oracle();
    // The slow manifold is y ≈ cos t + 1e-4 sin t.
    assert!((oracle - 1f64.cos()).abs() < 1e-3);
    let sol = integrate(relaxation, &dv(&[0.0]), (0.0, 1.0), &cfg(Method::RosenbrockStiff, 1e-6)).unwrap();
    let y1 = sol.final_state()[0];
    assert!((y1 - 1f64.cos()).abs() < 1e-3);
    assert!((y1 - oracle).abs() < 1e-5, "{y1} vs oracle {oracle}");
    assert!(sol.step_count() < 500, "{} steps", sol.step_count());
}

#[test]
fn dense_output_matches_analytic() {
    for m in METHODS {
        let reltol = 1e-8;
        let sol = integrate(decay, &dv(&[1.0]), (0.0, 1.0), &cfg(m, reltol)).unwrap();
        assert_eq!(sol.eval(0.0).unwrap()[0], 1.0);
        assert!((sol.eval(0.5).unwrap()[0] - (-0.5f64).exp()).abs() < 10.0 * reltol);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            assert!((sol.eval(t).unwrap()[0] - (-t).exp()).abs() < 10.0 * reltol);
        }
    }
}

#[test]
fn dense_midpoints_of_polynomial() {
    for m in METHODS {
        let reltol = 1e-6;
        let sol = integrate(|t, _| Ok(dv(&[t * t])), &dv(&[0.0]), (0.0, 2.0), &cfg(m, reltol)).unwrap();
        for w in sol.mesh().windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let y = sol.eval(t).unwrap()[0];
            assert!((y - t.powi(3) / 3.0).abs() < 10.0 * reltol, "{m:?} t={t}");
        }
    }
}

#[test]
fn mesh_points_are_reproduced_exactly() {
    let sol = integrate(decay, &dv(&[1.0, 2.0]), (0.0, 3.0), &cfg(Method::Explicit54, 1e-6)).unwrap();
    for (i, &t) in sol.mesh().iter().enumerate() {
        assert_eq!(sol.eval(t).unwrap(), sol.state_at_mesh(i));
    }
}

#[test]
fn evaluation_outside_span_is_rejected() {
    let sol = integrate(decay, &dv(&[1.0]), (1.0, 0.0), &cfg(Method::Explicit54, 1e-6)).unwrap();
    assert!(matches!(sol.eval(1.5), Err(Error::Domain { .. })));
    assert!(matches!(sol.eval(-0.1), Err(Error::Domain { .. })));
    assert!(sol.eval(1.0).is_ok() && sol.eval(0.0).is_ok());
}

fn fixed_error(method: Method, n: usize) -> f64 {
    let sol = integrate_fixed(decay, &dv(&[1.0]), (0.0, 1.0), method, n).unwrap();
    (sol.final_state()[0] - (-1.0f64).exp()).abs()
}

#[test]
fn explicit_order_is_five() {
    let ratio = fixed_error(Method::Explicit54, 10) / fixed_error(Method::Explicit54, 20);
    assert!((24.0..=40.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn rosenbrock_order_is_four() {
    // Nonlinear, non-autonomous test: y' = -y² + cos t ... compare against a
    // fine explicit reference.
    let rhs = |t: f64, y: &DVector<f64>| Ok(dv(&[-y[0] * y[0] + t.cos(), y[0] - 0.5 * y[1]]));
    let reference = integrate(rhs, &dv(&[1.0, 0.0]), (0.0, 1.0), &cfg(Method::Explicit54, 1e-13))
        .unwrap()
        .final_state();
    let err = |n| {
        let s = integrate_fixed(rhs, &dv(&[1.0, 0.0]), (0.0, 1.0), Method::RosenbrockStiff, n).unwrap();
        (s.final_state() - &reference).amax()
    };
    let order = (err(10) / err(20)).log2();
    assert!((3.6..=4.6).contains(&order), "observed order {order}");
}

#[test]
fn rosenbrock_dense_output_order() {
    // One fixed step of size h: the interior interpolation error should scale
    // at least like h^4 (local error of a third-order interpolant). The
    // midpoint is a near-zero of the leading error term, so sample at 3/4.
    let err = |h: f64| {
        let s = integrate_fixed(decay, &dv(&[1.0]), (0.0, h), Method::RosenbrockStiff, 1).unwrap();
        (s.eval(0.75 * h).unwrap()[0] - (-0.75 * h).exp()).abs()
    };
    let order = (err(0.2) / err(0.1)).log2();
    assert!(order > 3.5, "observed local interpolation order {order}");
}

#[test]
fn tighter_tolerance_reduces_error() {
    for m in METHODS {
        let e = |rt| {
            let s = integrate(decay, &dv(&[1.0]), (0.0, 1.0), &cfg(m, rt)).unwrap();
            (s.final_state()[0] - (-1.0f64).exp()).abs()
        };
        assert!(e(1e-8) * 10.0 <= e(1e-6), "{m:?}");
    }
}

#[test]
fn reverse_span_returns_to_start() {
    let rhs = |_t: f64, y: &DVector<f64>| Ok(dv(&[y[1], -y[0]]));
    for m in METHODS {
        let reltol = 1e-8;
        let c = cfg(m, reltol);
        let fwd = integrate(rhs, &dv(&[1.0, 0.5]), (0.0, 1.0), &c).unwrap();
        let back = integrate(rhs, &fwd.final_state(), (1.0, 0.0), &c).unwrap();
        assert!((back.final_state() - dv(&[1.0, 0.5])).amax() < 100.0 * reltol);
    }
}

#[test]
fn step_budget_is_enforced() {
    let mut c = cfg(Method::Explicit54, 1e-10);
    c.max_steps = 5;
    let err = integrate(decay, &dv(&[1.0]), (0.0, 10.0), &c).unwrap_err();
    assert!(matches!(err, Error::StepBudget { max_steps: 5, .. }));
}

#[test]
fn non_finite_rhs_reports_time() {
    let rhs = |t: f64, y: &DVector<f64>| Ok(if t > 0.5 { dv(&[f64::NAN]) } else { -y });
    let err = integrate(rhs, &dv(&[1.0]), (0.0, 1.0), &cfg(Method::Explicit54, 1e-6)).unwrap_err();
    match err {
        Error::Evaluation { t, .. } => assert!(t > 0.5),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn explicit_needs_many_steps_on_stiff_problem() {
    let c = cfg(Method::Explicit54, 1e-6);
    let explicit = integrate(relaxation, &dv(&[0.0]), (0.0, 1.0), &c).unwrap();
    let stiff = integrate(relaxation, &dv(&[0.0]), (0.0, 1.0), &c.clone().with_method(Method::RosenbrockStiff)).unwrap();
    eprintln!(
        "explicit steps {} ({} attempted, {} evals), stiff steps {} ({} attempted)",
        explicit.step_count(),
        explicit.attempted_steps(),
        explicit.rhs_evals(),
        stiff.step_count(),
        stiff.attempted_steps()
    );
    assert!(explicit.step_count() > 10 * stiff.step_count());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = StepperConfig::default();
    c.reltol = 0.0;
    assert!(integrate(decay, &dv(&[1.0]), (0.0, 1.0), &c).is_err());
    let mut c = StepperConfig::default();
    c.dt_min = 1.0;
    c.dt_max = 0.5;
    assert!(c.validate().is_err());
    assert!(integrate(decay, &dv(&[1.0]), (1.0, 1.0), &StepperConfig::default()).is_err());
}

