//! Backward pass: Q-terms along the nominal, eigenvalue-floor regularization,
//! gains, and the square-root value ODEs integrated from `tf` to `t0`.
//!
//! The value model is `V = σ + sᵀδx + ½δxᵀSδx` with `S = PPᵀ`. The integrated
//! state is `[σ, s, vec(P), dv1]` where `P` is stored column-major and `dv1`
//! accumulates `Q_uᵀQ_uu⁻¹Q_u` so that `dv1(t0) = ∫ Q_uᵀQ_uu⁻¹Q_u dt ≥ 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matops::{regularize_floor, solve_linear, sqrt_factor_floor};
use crate::ocp::ProblemDef;
use crate::odeint::{integrate, ContinuousSolution, StepperConfig};
use crate::rollout::Trajectory;

/// How the joint cost Hessian is conditioned before forming Q-terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    /// Machine-precision base; the eigenvalue floor is `√eps` and the terminal
    /// square-root floor is `eps^¼`.
    pub eps: f64,
    /// Test switch: when false the joint Hessian is used as is.
    pub enabled: bool,
}

impl Regularization {
    pub fn new(eps: f64) -> Self {
        Regularization { eps, enabled: true }
    }

    pub fn disabled(eps: f64) -> Self {
        Regularization { eps, enabled: false }
    }

    pub fn floor(&self) -> f64 {
        self.eps.sqrt()
    }

    pub fn sqrt_floor(&self) -> f64 {
        self.eps.sqrt().sqrt()
    }
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::new(f64::EPSILON)
    }
}

/// Coefficients of the quadratic model of the HJB minimand around the nominal.
#[derive(Debug, Clone, PartialEq)]
pub struct QTerms {
    pub q: f64,
    pub q_x: DVector<f64>,
    pub q_u: DVector<f64>,
    pub q_xx: DMatrix<f64>,
    pub q_ux: DMatrix<f64>,
    pub q_uu: DMatrix<f64>,
    /// Pieces reused by the value ODEs.
    pub l: f64,
    pub l_x: DVector<f64>,
    pub f_x: DMatrix<f64>,
}

/// `PPᵀ` with both triangles filled from the same products, so the result is
/// exactly symmetric.
pub fn gram(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..p.ncols() {
                acc += p[(i, k)] * p[(j, k)];
            }
            s[(i, j)] = acc;
            s[(j, i)] = acc;
        }
    }
    s
}

/// Regularized cost Hessian blocks `(l_xx, l_ux, l_uu)` at a point.
pub fn regularized_hessian(
    problem: &ProblemDef,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    reg: Regularization,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (nx, nu) = (problem.n_x, problem.n_u);
    let l_xx = problem.l_xx(x, u, t)?;
    let l_ux = problem.l_ux(x, u, t)?;
    let l_uu = problem.l_uu(x, u, t)?;
    if !reg.enabled {
        return Ok((l_xx, l_ux, l_uu));
    }
    let mut joint = DMatrix::zeros(nx + nu, nx + nu);
    joint.view_mut((0, 0), (nx, nx)).copy_from(&l_xx);
    joint.view_mut((nx, 0), (nu, nx)).copy_from(&l_ux);
    joint.view_mut((0, nx), (nx, nu)).copy_from(&l_ux.transpose());
    joint.view_mut((nx, nx), (nu, nu)).copy_from(&l_uu);
    let joint = regularize_floor(&joint, reg.floor())?;
    Ok((
        joint.view((0, 0), (nx, nx)).into_owned(),
        joint.view((nx, 0), (nu, nx)).into_owned(),
        joint.view((nx, nx), (nu, nu)).into_owned(),
    ))
}

/// Q-terms at `(x̄, ū, t)` for the value model `(s, S = PPᵀ)`.
pub fn q_terms(
    problem: &ProblemDef,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    s: &DVector<f64>,
    p: &DMatrix<f64>,
    reg: Regularization,
) -> Result<QTerms> {
    let big_s = gram(p);
    let f = problem.f(x, u, t)?;
    let f_x = problem.f_x(x, u, t)?;
    let f_u = problem.f_u(x, u, t)?;
    let l = problem.l(x, u, t)?;
    let l_x = problem.l_x(x, u, t)?;
    let l_u = problem.l_u(x, u, t)?;
    let (l_xx, l_ux, l_uu) = regularized_hessian(problem, x, u, t, reg)?;

    let sf_x = &big_s * &f_x;
    let q_xx = &l_xx + sf_x.transpose() + &sf_x;
    Ok(QTerms {
        q: l + s.dot(&f),
        q_x: &l_x + &big_s * &f + f_x.tr_mul(s),
        q_u: l_u + f_u.tr_mul(s),
        q_xx: crate::matops::symmetrize(&q_xx),
        q_ux: l_ux + f_u.tr_mul(&big_s),
        q_uu: l_uu,
        l,
        l_x,
        f_x,
    })
}

/// `d = Q_uu⁻¹Q_u` and `K = Q_uu⁻¹Q_ux` from one factorization.
pub fn gains(q: &QTerms, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let nu = q.q_u.len();
    let nx = q.q_ux.ncols();
    let mut rhs = DMatrix::zeros(nu, nx + 1);
    rhs.set_column(0, &q.q_u);
    rhs.view_mut((0, 1), (nu, nx)).copy_from(&q.q_ux);
    let sol = match solve_linear(&q.q_uu, &rhs) {
        Ok(sol) => sol,
        Err(Error::Singular { .. }) => return Err(Error::RegularizationViolated { t }),
        Err(e) => return Err(e),
    };
    Ok((sol.column(0).into_owned(), sol.view((0, 1), (nu, nx)).into_owned()))
}

/// Unpacked value state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueState {
    pub sigma: f64,
    pub s: DVector<f64>,
    pub p: DMatrix<f64>,
    pub dv1: f64,
}

impl ValueState {
    pub fn len(n_x: usize) -> usize {
        n_x * n_x + n_x + 2
    }

    pub fn pack(&self) -> DVector<f64> {
        let n = self.s.len();
        let mut v = DVector::zeros(Self::len(n));
        v[0] = self.sigma;
        v.rows_mut(1, n).copy_from(&self.s);
        v.rows_mut(1 + n, n * n).copy_from_slice(self.p.as_slice());
        v[1 + n + n * n] = self.dv1;
        v
    }

    pub fn unpack(v: &[f64], n_x: usize) -> Self {
        let n = n_x;
        ValueState {
            sigma: v[0],
            s: DVector::from_row_slice(&v[1..1 + n]),
            p: DMatrix::from_column_slice(n, n, &v[1 + n..1 + n + n * n]),
            dv1: v[1 + n + n * n],
        }
    }

    pub fn big_s(&self) -> DMatrix<f64> {
        gram(&self.p)
    }
}

/// Time derivative of the value state at `(x̄, ū, t)`.
pub fn backward_rhs(
    problem: &ProblemDef,
    t: f64,
    v: &ValueState,
    x: &DVector<f64>,
    u: &DVector<f64>,
    reg: Regularization,
) -> Result<ValueState> {
    let q = q_terms(problem, t, x, u, &v.s, &v.p, reg)?;
    let (d, k) = gains(&q, t)?;
    let m = &q.q_xx - k.transpose() * &q.q_uu * &k;
    let m = crate::matops::symmetrize(&m);
    // M P⁻ᵀ = (P⁻¹M)ᵀ for symmetric M.
    let p_inv_m = match solve_linear(&v.p, &m) {
        Ok(x) => x,
        Err(Error::Singular { .. }) => return Err(Error::SqrtBreakdown { t }),
        Err(e) => return Err(e),
    };
    let d_qu = d.dot(&q.q_u);
    Ok(ValueState {
        sigma: -(q.l - 0.5 * d_qu),
        s: -(&q.l_x + q.f_x.tr_mul(&v.s) - k.tr_mul(&q.q_u)),
        p: p_inv_m.transpose() * -0.5,
        dv1: -d_qu,
    })
}

/// Feedforward/feedback gains and the nominal they were evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct GainEval {
    pub d: DVector<f64>,
    pub k: DMatrix<f64>,
    pub x_nominal: DVector<f64>,
    pub u_nominal: DVector<f64>,
}

/// Result of a backward pass, with gains available at any `t ∈ [t0, tf]`.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    value: ContinuousSolution,
    nominal: Arc<Trajectory>,
    problem: ProblemDef,
    reg: Regularization,
    pub dv1_total: f64,
}

impl BackwardSolution {
    pub fn value(&self) -> &ContinuousSolution {
        &self.value
    }

    pub fn nominal(&self) -> &Arc<Trajectory> {
        &self.nominal
    }

    pub fn regularization(&self) -> Regularization {
        self.reg
    }

    pub fn step_count(&self) -> usize {
        self.value.step_count()
    }

    pub fn value_state(&self, t: f64) -> Result<ValueState> {
        Ok(ValueState::unpack(self.value.eval(t)?.as_slice(), self.problem.n_x))
    }

    /// Q-terms recomputed from the dense value state and the nominal at `t`.
    pub fn eval_q_terms(&self, t: f64) -> Result<(QTerms, DVector<f64>, DVector<f64>)> {
        let v = self.value_state(t)?;
        let x = self.nominal.state(t)?;
        let u = self.nominal.control(t)?;
        let q = q_terms(&self.problem, t, &x, &u, &v.s, &v.p, self.reg)?;
        Ok((q, x, u))
    }

    pub fn eval_gains(&self, t: f64) -> Result<GainEval> {
        let (q, x_nominal, u_nominal) = self.eval_q_terms(t)?;
        let (d, k) = gains(&q, t)?;
        Ok(GainEval {
            d,
            k,
            x_nominal,
            u_nominal,
        })
    }
}

/// Terminal value state `σ = Φ`, `s = Φ_x`, `P = sqrt_factor_floor(Φ_xx, eps^¼)`.
pub fn terminal_value(problem: &ProblemDef, x_f: &DVector<f64>, reg: Regularization) -> Result<ValueState> {
    Ok(ValueState {
        sigma: problem.phi(x_f)?,
        s: problem.phi_x(x_f)?,
        p: sqrt_factor_floor(&problem.phi_xx(x_f)?, reg.sqrt_floor())?,
        dv1: 0.0,
    })
}

pub fn run_backward_pass(
    problem: &ProblemDef,
    nominal: Arc<Trajectory>,
    config: &StepperConfig,
    reg: Regularization,
) -> Result<BackwardSolution> {
    let n = problem.n_x;
    let (t0, tf) = problem.horizon();
    let v_f = terminal_value(problem, &nominal.final_state(), reg)?.pack();
    let mut buf = vec![0.0; n + 1];
    let mut x = DVector::zeros(n);
    let value = integrate(
        |t, v| {
            let t = t.clamp(t0, tf);
            nominal.state_into(t, &mut buf, &mut x)?;
            let u = nominal.control(t)?;
            let state = ValueState::unpack(v.as_slice(), n);
            Ok(backward_rhs(problem, t, &state, &x, &u, reg)?.pack())
        },
        &v_f,
        (tf, t0),
        config,
    )?;
    let dv1_total = ValueState::unpack(value.final_state().as_slice(), n).dv1.max(0.0);
    Ok(BackwardSolution {
        value,
        nominal,
        problem: problem.clone(),
        reg,
        dv1_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::sym_eig;
    use crate::models::{convex_problem, lq_problem, nonconvex_problem};
    use crate::rollout::simulate;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// ẋ = u, l = ½(x² + u²), Φ = ½φx².
    fn scalar_lq(phi: f64, x0: f64, tf: f64) -> ProblemDef {
        lq_problem(m1(0.0), m1(1.0), m1(1.0), m1(1.0), m1(phi), dv(&[x0]), (0.0, tf)).unwrap()
    }

    fn zero_rollout(problem: &ProblemDef) -> Arc<Trajectory> {
        let nu = problem.n_u;
        Arc::new(simulate(problem, |_, _| Ok(DVector::zeros(nu)), &StepperConfig::default()).unwrap())
    }

    fn tight() -> StepperConfig {
        StepperConfig::default().with_tolerances(1e-10, 1e-12)
    }

    #[test]
    fn gains_examples() {
        let mk = |quu: DMatrix<f64>, qu: DVector<f64>, qux: DMatrix<f64>| QTerms {
            q: 0.0,
            q_x: DVector::zeros(qux.ncols()),
            q_u: qu,
            q_xx: DMatrix::zeros(qux.ncols(), qux.ncols()),
            q_ux: qux,
            q_uu: quu,
            l: 0.0,
            l_x: DVector::zeros(0),
            f_x: DMatrix::zeros(0, 0),
        };
        let (d, k) = gains(&mk(m1(2.0), dv(&[4.0]), DMatrix::from_row_slice(1, 2, &[2.0, 0.0])), 0.0).unwrap();
        assert_eq!(d, dv(&[2.0]));
        assert_eq!(k, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let quu = DMatrix::from_diagonal(&dv(&[2.0, 4.0]));
        let (d, _) = gains(&mk(quu, dv(&[2.0, 4.0]), DMatrix::zeros(2, 3)), 0.0).unwrap();
        assert_eq!(d, dv(&[1.0, 1.0]));
        let (d, _) = gains(&mk(m1(3.0), dv(&[0.0]), m1(1.0)), 0.0).unwrap();
        assert_eq!(d, dv(&[0.0]));
        let err = gains(&mk(m1(0.0), dv(&[1.0]), m1(1.0)), 0.7).unwrap_err();
        assert_eq!(err, Error::RegularizationViolated { t: 0.7 });
    }

    #[test]
    fn value_state_round_trip() {
        let v = ValueState {
            sigma: 1.5,
            s: dv(&[1.0, 2.0]),
            p: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            dv1: 0.25,
        };
        let packed = v.pack();
        assert_eq!(packed.len(), ValueState::len(2));
        assert_eq!(packed.as_slice(), &[1.5, 1.0, 2.0, 1.0, 3.0, 2.0, 4.0, 0.25]);
        assert_eq!(ValueState::unpack(packed.as_slice(), 2), v);
    }

    #[test]
    fn q_terms_with_zero_value_model() {
        let prob = nonconvex_problem();
        let reg = Regularization::default();
        let (x, u) = (dv(&[0.3, 0.4, -0.2, 1.0]), dv(&[0.5]));
        let p = DMatrix::identity(4, 4) * reg.sqrt_floor();
        let q = q_terms(&prob, 0.0, &x, &u, &DVector::zeros(4), &p, reg).unwrap();
        assert_eq!(q.q_u, prob.l_u(&x, &u, 0.0).unwrap());
        let s_contrib = reg.floor() * 1e3;
        assert!((&q.q_x - prob.l_x(&x, &u, 0.0).unwrap()).amax() < s_contrib);
        let (lxx, lux, luu) = regularized_hessian(&prob, &x, &u, 0.0, reg).unwrap();
        assert_eq!(q.q_uu, luu);
        assert!((&q.q_ux - lux).amax() < s_contrib);
        assert!((&q.q_xx - lxx).amax() < s_contrib);
    }

    #[test]
    fn lq_q_u_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.3]);
        let b = DMatrix::from_column_slice(2, 1, &[0.5, 1.0]);
        let ru = m1(3.0);
        let prob = lq_problem(a, b.clone(), DMatrix::identity(2, 2), ru.clone(), DMatrix::identity(2, 2), dv(&[1.0, 0.0]), (0.0, 1.0)).unwrap();
        let (x, u, s) = (dv(&[0.4, -1.2]), dv(&[0.7]), dv(&[2.0, -0.5]));
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 2.0]);
        let q = q_terms(&prob, 0.0, &x, &u, &s, &p, Regularization::default()).unwrap();
        assert_eq!(q.q_u, &ru * &u + b.tr_mul(&s));
    }

    #[test]
    fn nonconvex_regularization_floors_theta_entry() {
        let prob = nonconvex_problem();
        let reg = Regularization::default();
        let (lxx, _, luu) = regularized_hessian(&prob, &DVector::zeros(4), &dv(&[0.0]), 0.0, reg).unwrap();
        assert!(lxx[(1, 1)] >= reg.floor());
        assert!(luu[(0, 0)] >= reg.floor());
        let mut joint = DMatrix::zeros(5, 5);
        joint.view_mut((0, 0), (4, 4)).copy_from(&lxx);
        joint[(4, 4)] = luu[(0, 0)];
        assert!(sym_eig(&joint).unwrap().min_eigenvalue() >= reg.floor() * (1.0 - 1e-6));
    }

    #[test]
    fn regularization_is_noop_on_compliant_costs() {
        let prob = lq_problem(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            m1(0.7),
            DMatrix::identity(2, 2),
            dv(&[1.0, 0.0]),
            (0.0, 1.0),
        )
        .unwrap();
        let (x, u, s) = (dv(&[0.4, -1.2]), dv(&[0.7]), dv(&[2.0, -0.5]));
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 2.0]);
        let on = q_terms(&prob, 0.0, &x, &u, &s, &p, Regularization::default()).unwrap();
        let off = q_terms(&prob, 0.0, &x, &u, &s, &p, Regularization::disabled(f64::EPSILON)).unwrap();
        assert!((&on.q_xx - &off.q_xx).amax() <= 1e-12);
        assert!((&on.q_ux - &off.q_ux).amax() <= 1e-12);
        assert!((&on.q_uu - &off.q_uu).amax() <= 1e-12);
    }

    #[test]
    fn zero_problem_keeps_value_constant() {
        let prob = ProblemDef::new(2, 1, (0.0, 1.0), dv(&[1.0, 2.0]), |_, _, _| DVector::zeros(2), |_, _, _| 0.0, |_| 0.0)
            .unwrap()
            .with_l_uu(|_, _, _| DMatrix::zeros(1, 1));
        let reg = Regularization::default();
        let bwd = run_backward_pass(&prob, zero_rollout(&prob), &tight(), reg).unwrap();
        assert_eq!(bwd.dv1_total, 0.0);
        let v_f = bwd.value_state(1.0).unwrap();
        assert_eq!(v_f.p, DMatrix::identity(2, 2) * reg.sqrt_floor());
        for t in [0.0, 0.3, 1.0] {
            let v = bwd.value_state(t).unwrap();
            assert_eq!(v.sigma, 0.0);
            assert_eq!(v.s, DVector::zeros(2));
            // The floored l_xx = √ε·I is the only source: Ṡ = −√ε·I.
            let expected = DMatrix::identity(2, 2) * (reg.floor() * (2.0 - t));
            assert!((v.big_s() - expected).amax() < 1e-6 * reg.floor(), "t={t}");
        }
    }

    #[test]
    fn scalar_lq_fixed_point_is_stationary() {
        let prob = scalar_lq(1.0, 1.0, 1.0);
        let v = ValueState {
            sigma: 0.0,
            s: dv(&[0.0]),
            p: m1(1.0),
            dv1: 0.0,
        };
        let dot = backward_rhs(&prob, 0.0, &v, &dv(&[0.0]), &dv(&[0.0]), Regularization::default()).unwrap();
        assert_eq!(dot.p[(0, 0)], 0.0);
        assert_eq!(dot.sigma, 0.0);
        assert_eq!(dot.dv1, 0.0);
    }

    #[test]
    fn scalar_lq_riccati_settles_to_one() {
        let prob = scalar_lq(1.0, 1.0, 10.0);
        let nominal = zero_rollout(&prob);
        let bwd = run_backward_pass(&prob, nominal, &tight(), Regularization::default()).unwrap();
        for t in [0.0, 2.5, 5.0, 10.0] {
            let s = bwd.value_state(t).unwrap().big_s()[(0, 0)];
            assert!((s - 1.0).abs() < 1e-8, "S({t}) = {s}");
        }
    }

    #[test]
    fn stationary_nominal_gives_zero_dv1() {
        // x0 = 0 with ū = 0 is optimal: Q_u ≡ 0.
        let prob = scalar_lq(1.0, 0.0, 2.0);
        let bwd = run_backward_pass(&prob, zero_rollout(&prob), &StepperConfig::default(), Regularization::default()).unwrap();
        assert_eq!(bwd.dv1_total, 0.0);
        let v0 = bwd.value_state(0.0).unwrap();
        assert_eq!(v0.sigma, 0.0);
        let g = bwd.eval_gains(1.0).unwrap();
        assert_eq!(g.d, dv(&[0.0]));
        let prob = scalar_lq(1.0, 1.0, 2.0);
        let bwd = run_backward_pass(&prob, zero_rollout(&prob), &StepperConfig::default(), Regularization::default()).unwrap();
        assert!(bwd.dv1_total > 0.0);
    }

    /// Ṡ reconstructed from Ṗ against −(Q_xx − Q_uxᵀQ_uu⁻¹Q_ux).
    fn check_sdot(prob: &ProblemDef, samples: usize, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = prob.n_x;
        let reg = Regularization::default();
        for _ in 0..samples {
            let mut r = |k: usize| DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
            let x = r(n);
            let u = r(prob.n_u);
            let s = r(n);
            let p = DMatrix::identity(n, n) * 2.0 + DMatrix::from_column_slice(n, n, r(n * n).as_slice()) * 0.5;
            let v = ValueState { sigma: 0.0, s: s.clone(), p: p.clone(), dv1: 0.0 };
            let dot = backward_rhs(prob, 0.1, &v, &x, &u, reg).unwrap();
            let s_dot = &dot.p * p.transpose() + &p * dot.p.transpose();
            let q = q_terms(prob, 0.1, &x, &u, &s, &p, reg).unwrap();
            let direct = -(&q.q_xx - q.q_ux.transpose() * q.q_uu.clone().try_inverse().unwrap() * &q.q_ux);
            let scale = direct.amax().max(1.0);
            assert!((&s_dot - &direct).amax() <= 1e-8 * scale, "{s_dot} vs {direct}");
            let (d, k) = gains(&q, 0.1).unwrap();
            assert!((&dot.s + &q.l_x + q.f_x.tr_mul(&s) - k.tr_mul(&q.q_u)).amax() < 1e-12 * scale);
            assert!((dot.dv1 + d.dot(&q.q_u)).abs() < 1e-14);
        }
    }

    #[test]
    fn square_root_form_matches_riccati() {
        check_sdot(&convex_problem(), 20, 3);
        check_sdot(&nonconvex_problem(), 20, 4);
    }

    /// RK4 at dt = 1e-5 on −Ṡ = Q − SBR⁻¹BᵀS + AᵀS + SA, S(tf) = Φ.
    fn riccati_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, phi: &DMatrix<f64>, tf: f64, t_query: &[f64]) -> Vec<DMatrix<f64>> {
        let r_inv = r.clone().try_inverse().unwrap();
        let rhs = |s: &DMatrix<f64>| -(q - s * b * &r_inv * b.transpose() * s + a.transpose() * s + s * a);
        let h = 1e-5;
        let n = (tf / h).round() as usize;
        let mut s = phi.clone();
        let mut out = vec![None; t_query.len()];
        for i in (0..=n).rev() {
            let t = i as f64 * h;
            for (j, &tq) in t_query.iter().enumerate() {
                if (tq - t).abs() < 0.5 * h {
                    out[j] = Some(s.clone());
                }
            }
            if i == 0 {
                break;
            }
            // Integrate backward: dS/dt = rhs(S), step −h.
            let k1 = rhs(&s);
            let k2 = rhs(&(&s - &k1 * (0.5 * h)));
            let k3 = rhs(&(&s - &k2 * (0.5 * h)));
            let k4 = rhs(&(&s - &k3 * h));
            s -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        out.into_iter().map(Option::unwrap).collect()
    }

    #[test]
    fn lq_gains_match_riccati_oracle() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let (q, r, phi) = (DMatrix::identity(2, 2), m1(1.0), DMatrix::identity(2, 2));
        let prob = lq_problem(a.clone(), b.clone(), q.clone(), r.clone(), phi.clone(), dv(&[1.0, 0.0]), (0.0, 5.0)).unwrap();
        let bwd = run_backward_pass(&prob, zero_rollout(&prob), &StepperConfig::default(), Regularization::default()).unwrap();
        let ts = [0.0, 0.5, 1.25, 2.0, 3.0, 4.0, 4.5, 4.9, 5.0];
        let oracle = riccati_oracle(&a, &b, &q, &r, &phi, 5.0, &ts);
        for (t, s) in ts.iter().zip(&oracle) {
            let k_ref = b.transpose() * s;
            let k = bwd.eval_gains(*t).unwrap().k;
            let rel = (&k - &k_ref).amax() / k_ref.amax();
            assert!(rel < 1e-4, "t={t}: {k} vs {k_ref}");
        }
    }

    #[test]
    fn eval_gains_at_mesh_matches_stored_state() {
        let prob = scalar_lq(1.0, 1.0, 2.0);
        let nominal = zero_rollout(&prob);
        let bwd = run_backward_pass(&prob, nominal.clone(), &StepperConfig::default(), Regularization::default()).unwrap();
        for (i, &t) in bwd.value().mesh().iter().enumerate() {
            let v = ValueState::unpack(bwd.value().state_at_mesh(i).as_slice(), 1);
            let x = nominal.state(t).unwrap();
            let u = nominal.control(t).unwrap();
            let q = q_terms(&prob, t, &x, &u, &v.s, &v.p, Regularization::default()).unwrap();
            let (d, k) = gains(&q, t).unwrap();
            let g = bwd.eval_gains(t).unwrap();
            assert_eq!((g.d, g.k), (d, k));
        }
        assert!(matches!(bwd.eval_gains(2.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn terminal_gains_with_zero_final_cost() {
        let prob = nonconvex_problem();
        let nominal = zero_rollout(&prob);
        let bwd = run_backward_pass(&prob, nominal.clone(), &StepperConfig::default(), Regularization::default()).unwrap();
        let g = bwd.eval_gains(2.0).unwrap();
        let x_f = nominal.final_state();
        let l_u = prob.l_u(&x_f, &dv(&[0.0]), 2.0).unwrap();
        let (_, _, luu) = regularized_hessian(&prob, &x_f, &dv(&[0.0]), 2.0, Regularization::default()).unwrap();
        assert!((g.d[0] - l_u[0] / luu[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn convex_first_pass_has_adaptive_steps() {
        let prob = convex_problem();
        let bwd = run_backward_pass(&prob, zero_rollout(&prob), &StepperConfig::default(), Regularization::default()).unwrap();
        let (lo, hi) = bwd.value().dt_range().unwrap();
        assert!(hi >= 10.0 * lo, "dt range [{lo}, {hi}]");
        assert!(bwd.dv1_total > 0.0);
        for i in 0..=bwd.step_count() {
            let v = ValueState::unpack(bwd.value().state_at_mesh(i).as_slice(), 4);
            let s = v.big_s();
            assert_eq!(s, s.transpose());
            assert!(sym_eig(&s).unwrap().min_eigenvalue() >= -1e-10);
        }
    }
}
