//! Built-in benchmark problems: the point-mass cart-pole swing-up in a convex
//! and a non-convex cost variant, and a generic linear-quadratic problem.
//!
//! Cart-pole state is `(s, θ, ṡ, θ̇)` with `θ = 0` hanging down and `θ = π`
//! upright; the single input is a horizontal force on the cart.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ocp::ProblemDef;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleParams {
    pub m_cart: f64,
    pub m_tip: f64,
    pub l: f64,
    pub g: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            m_cart: 1.0,
            m_tip: 0.1,
            l: 0.2,
            g: 9.81,
        }
    }
}

impl CartpoleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m_cart, self.m_tip, self.l, self.g];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("cart-pole parameters must be positive: {self:?}")))
        }
    }
}

pub fn cartpole_dynamics(x: &DVector<f64>, u: f64, p: &CartpoleParams) -> DVector<f64> {
    let (th, sd, thd) = (x[1], x[2], x[3]);
    let (s, c) = th.sin_cos();
    let den = p.m_cart + p.m_tip * s * s;
    let sdd = (u + p.m_tip * s * (p.l * thd * thd + p.g * c)) / den;
    let thdd = (-u * c - p.m_tip * p.l * thd * thd * c * s - (p.m_cart + p.m_tip) * p.g * s) / (p.l * den);
    DVector::from_vec(vec![sd, thd, sdd, thdd])
}

/// Analytic `(∂f/∂x, ∂f/∂u)` of [`cartpole_dynamics`].
pub fn cartpole_jacobians(x: &DVector<f64>, u: f64, p: &CartpoleParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let (th, w) = (x[1], x[3]);
    let (s, c) = th.sin_cos();
    let (m, big_m, l, g) = (p.m_tip, p.m_cart, p.l, p.g);
    let den = big_m + m * s * s;
    let den_th = 2.0 * m * s * c;
    let cos2 = c * c - s * s;

    let n1 = u + m * s * (l * w * w + g * c);
    let n1_th = m * (l * w * w * c + g * cos2);
    let n1_w = 2.0 * m * l * w * s;

    let n2 = -u * c - m * l * w * w * c * s - (big_m + m) * g * s;
    let n2_th = u * s - m * l * w * w * cos2 - (big_m + m) * g * c;
    let n2_w = -2.0 * m * l * w * c * s;

    let mut fx = DMatrix::zeros(4, 4);
    fx[(0, 2)] = 1.0;
    fx[(1, 3)] = 1.0;
    fx[(2, 1)] = (n1_th * den - n1 * den_th) / (den * den);
    fx[(2, 3)] = n1_w / den;
    fx[(3, 1)] = (n2_th * den - n2 * den_th) / (l * den * den);
    fx[(3, 3)] = n2_w / (l * den);

    let fu = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0 / den, -c / (l * den)]);
    (fx, fu)
}

/// Total mechanical energy, zero potential at the pivot height.
pub fn cartpole_energy(x: &DVector<f64>, p: &CartpoleParams) -> f64 {
    let (th, sd, thd) = (x[1], x[2], x[3]);
    0.5 * (p.m_cart + p.m_tip) * sd * sd + p.m_tip * p.l * sd * thd * th.cos() + 0.5 * p.m_tip * p.l * p.l * thd * thd
        - p.m_tip * p.g * p.l * th.cos()
}

/// Model parameters plus horizon and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct CartpoleSetup {
    pub params: CartpoleParams,
    pub t0: f64,
    pub tf: f64,
    pub x0: DVector<f64>,
}

impl Default for CartpoleSetup {
    fn default() -> Self {
        CartpoleSetup {
            params: CartpoleParams::default(),
            t0: 0.0,
            tf: 2.0,
            x0: DVector::from_vec(vec![0.0, 1e-3 * PI, 0.0, 0.0]),
        }
    }
}

fn cartpole_base<L, P>(setup: &CartpoleSetup, running: L, fin: P) -> Result<ProblemDef>
where
    L: Fn(&DVector<f64>, &DVector<f64>, f64) -> f64 + Send + Sync + 'static,
    P: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
{
    setup.params.validate()?;
    let p = setup.params;
    Ok(ProblemDef::new(
        4,
        1,
        (setup.t0, setup.tf),
        setup.x0.clone(),
        move |x, u, _| cartpole_dynamics(x, u[0], &p),
        running,
        fin,
    )?
    .with_f_x(move |x, u, _| cartpole_jacobians(x, u[0], &p).0)
    .with_f_u(move |x, u, _| cartpole_jacobians(x, u[0], &p).1))
}

/// Minimum-energy swing-up: `l = 10⁻³u²`,
/// `Φ = 10²(s² + (θ−π)²) + ṡ² + θ̇²`.
pub fn convex_problem() -> ProblemDef {
    convex_problem_with(&CartpoleSetup::default()).expect("default cart-pole setup is valid")
}

pub fn convex_problem_with(setup: &CartpoleSetup) -> Result<ProblemDef> {
    const W_U: f64 = 1e-3;
    Ok(cartpole_base(
        setup,
        |_, u, _| W_U * u[0] * u[0],
        |x| 1e2 * (x[0] * x[0] + (x[1] - PI).powi(2)) + x[2] * x[2] + x[3] * x[3],
    )?
    .with_l_x(|_, _, _| DVector::zeros(4))
    .with_l_u(|_, u, _| DVector::from_element(1, 2.0 * W_U * u[0]))
    .with_l_xx(|_, _, _| DMatrix::zeros(4, 4))
    .with_l_ux(|_, _, _| DMatrix::zeros(1, 4))
    .with_l_uu(|_, _, _| DMatrix::from_element(1, 1, 2.0 * W_U))
    .with_phi_x(|x| DVector::from_vec(vec![2e2 * x[0], 2e2 * (x[1] - PI), 2.0 * x[2], 2.0 * x[3]]))
    .with_phi_xx(|_| DMatrix::from_diagonal(&DVector::from_vec(vec![200.0, 200.0, 2.0, 2.0]))))
}

/// Energy-shaping swing-up: `l = 1 + cos θ + 10 s² + 3·10⁻² u²`, no final cost.
pub fn nonconvex_problem() -> ProblemDef {
    nonconvex_problem_with(&CartpoleSetup::default()).expect("default cart-pole setup is valid")
}

pub fn nonconvex_problem_with(setup: &CartpoleSetup) -> Result<ProblemDef> {
    const W_S: f64 = 10.0;
    const W_U: f64 = 3e-2;
    Ok(cartpole_base(
        setup,
        |x, u, _| 1.0 + x[1].cos() + W_S * x[0] * x[0] + W_U * u[0] * u[0],
        |_| 0.0,
    )?
    .with_l_x(|x, _, _| DVector::from_vec(vec![2.0 * W_S * x[0], -x[1].sin(), 0.0, 0.0]))
    .with_l_u(|_, u, _| DVector::from_element(1, 2.0 * W_U * u[0]))
    .with_l_xx(|x, _, _| DMatrix::from_diagonal(&DVector::from_vec(vec![2.0 * W_S, -x[1].cos(), 0.0, 0.0])))
    .with_l_ux(|_, _, _| DMatrix::zeros(1, 4))
    .with_l_uu(|_, _, _| DMatrix::from_element(1, 1, 2.0 * W_U))
    .with_phi_x(|_| DVector::zeros(4))
    .with_phi_xx(|_| DMatrix::zeros(4, 4)))
}

/// `f = Ax + Bu`, `l = ½xᵀR_x x + ½uᵀR_u u`, `Φ = ½xᵀΦ x`.
pub fn lq_problem(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    r_x: DMatrix<f64>,
    r_u: DMatrix<f64>,
    phi: DMatrix<f64>,
    x0: DVector<f64>,
    horizon: (f64, f64),
) -> Result<ProblemDef> {
    let n_x = a.nrows();
    let n_u = b.ncols();
    let square = |m: &DMatrix<f64>, n: usize| m.shape() == (n, n);
    if !square(&a, n_x) || b.nrows() != n_x || !square(&r_x, n_x) || !square(&r_u, n_u) || !square(&phi, n_x) {
        return Err(Error::Dimension(format!(
            "LQ problem: A {:?}, B {:?}, R_x {:?}, R_u {:?}, Φ {:?}",
            a.shape(),
            b.shape(),
            r_x.shape(),
            r_u.shape(),
            phi.shape()
        )));
    }
    let (a1, b1, rx1, ru1, phi1) = (a.clone(), b.clone(), r_x.clone(), r_u.clone(), phi.clone());
    Ok(ProblemDef::new(
        n_x,
        n_u,
        horizon,
        x0,
        move |x, u, _| &a1 * x + &b1 * u,
        move |x, u, _| 0.5 * (x.dot(&(&rx1 * x)) + u.dot(&(&ru1 * u))),
        move |x| 0.5 * x.dot(&(&phi1 * x)),
    )?
    .with_f_x(move |_, _, _| a.clone())
    .with_f_u(move |_, _, _| b.clone())
    .with_l_x({
        let r = r_x.clone();
        move |x, _, _| &r * x
    })
    .with_l_u({
        let r = r_u.clone();
        move |_, u, _| &r * u
    })
    .with_l_xx(move |_, _, _| r_x.clone())
    .with_l_ux(move |_, _, _| DMatrix::zeros(n_u, n_x))
    .with_l_uu(move |_, _, _| r_u.clone())
    .with_phi_x({
        let p = phi.clone();
        move |x| &p * x
    })
    .with_phi_xx(move |_| phi.clone()))
}

/// Double integrator `ẍ = u` with unit weights, `x0 = (1, 0)`, horizon `[0, 5]`.
pub fn lq_double_integrator() -> ProblemDef {
    lq_problem(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DMatrix::identity(2, 2),
        DMatrix::identity(1, 1),
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![1.0, 0.0]),
        (0.0, 5.0),
    )
    .expect("double integrator dimensions are consistent")
}
