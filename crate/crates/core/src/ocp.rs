//! Optimal control problem definitions.
//!
//! A [`ProblemDef`] bundles the dynamics `f(x, u, t)`, running cost
//! `l(x, u, t)`, final cost `Φ(x)`, the horizon and the initial state. Every
//! partial derivative the solver needs may be supplied analytically or left to
//! central finite differences, independently of the others.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matops::symmetrize;

pub type StageVecFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
pub type StageMatFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;
pub type StageScalarFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> f64 + Send + Sync>;
pub type FinalScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type FinalVecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type FinalMatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Either an analytic callback or a request for finite differences.
#[derive(Clone)]
pub enum Derivative<F> {
    Analytic(F),
    FiniteDifference,
}

impl<F> Derivative<F> {
    pub fn is_analytic(&self) -> bool {
        matches!(self, Derivative::Analytic(_))
    }
}

impl<F> Default for Derivative<F> {
    fn default() -> Self {
        Derivative::FiniteDifference
    }
}

impl<F> fmt::Debug for Derivative<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Derivative::Analytic(_) => f.write_str("Analytic"),
            Derivative::FiniteDifference => f.write_str("FiniteDifference"),
        }
    }
}

/// Per-quantity derivative callbacks. Matrix shapes follow the Jacobian
/// convention: `f_x` is `n_x × n_x` with `f_x[(i, j)] = ∂f_i/∂x_j`, `f_u` is
/// `n_x × n_u`, and `l_ux` is `n_u × n_x`.
#[derive(Clone, Default, Debug)]
pub struct Derivatives {
    pub f_x: Derivative<StageMatFn>,
    pub f_u: Derivative<StageMatFn>,
    pub l_x: Derivative<StageVecFn>,
    pub l_u: Derivative<StageVecFn>,
    pub l_xx: Derivative<StageMatFn>,
    pub l_ux: Derivative<StageMatFn>,
    pub l_uu: Derivative<StageMatFn>,
    pub phi_x: Derivative<FinalVecFn>,
    pub phi_xx: Derivative<FinalMatFn>,
}

#[derive(Clone)]
pub struct ProblemDef {
    pub n_x: usize,
    pub n_u: usize,
    pub t0: f64,
    pub tf: f64,
    pub x0: DVector<f64>,
    dynamics: StageVecFn,
    running_cost: StageScalarFn,
    final_cost: FinalScalarFn,
    pub derivatives: Derivatives,
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .field("x0", &self.x0.as_slice())
            .field("derivatives", &self.derivatives)
            .finish()
    }
}

/// Per-coordinate step `base · max(1, |p_i|)` or a fixed absolute step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdStep {
    Fixed(f64),
    Scaled(f64),
}

impl FdStep {
    /// Default for first derivatives: `∛ε` scaling.
    pub fn first_order() -> Self {
        FdStep::Scaled(f64::EPSILON.cbrt())
    }

    /// Default for nested second derivatives: `ε^(1/4)` scaling.
    pub fn second_order() -> Self {
        FdStep::Scaled(f64::EPSILON.powf(0.25))
    }

    fn at(self, p: f64) -> f64 {
        match self {
            FdStep::Fixed(h) => h,
            FdStep::Scaled(base) => base * p.abs().max(1.0),
        }
    }
}

/// Central-difference Jacobian of a vector function: column `i` holds
/// `(g(p + h eᵢ) − g(p − h eᵢ)) / 2h`.
pub fn fd_jacobian<G>(mut g: G, p: &DVector<f64>, step: FdStep) -> Result<DMatrix<f64>>
where
    G: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(p.len());
    let mut rows = None;
    for i in 0..p.len() {
        let h = step.at(p[i]);
        let mut plus = p.clone();
        plus[i] += h;
        let mut minus = p.clone();
        minus[i] -= h;
        let gp = g(&plus)?;
        let gm = g(&minus)?;
        if gp.len() != gm.len() || rows.is_some_and(|r| r != gp.len()) {
            return Err(Error::Dimension("function output length varies".into()));
        }
        rows = Some(gp.len());
        cols.push((gp - gm) / (2.0 * h));
    }
    let rows = rows.unwrap_or(0);
    Ok(DMatrix::from_fn(rows, p.len(), |r, c| cols[c][r]))
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<G>(mut g: G, p: &DVector<f64>, step: FdStep) -> Result<DVector<f64>>
where
    G: FnMut(&DVector<f64>) -> Result<f64>,
{
    let jac = fd_jacobian(|q| Ok(DVector::from_element(1, g(q)?)), p, step)?;
    Ok(jac.row(0).transpose())
}

fn finite_scalar(v: f64, quantity: &'static str, t: f64, point: impl FnOnce() -> Vec<f64>) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            quantity,
            t,
            point: point(),
        })
    }
}

fn finite_vec(
    v: DVector<f64>,
    len: usize,
    quantity: &'static str,
    t: f64,
    point: impl FnOnce() -> Vec<f64>,
) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::Dimension(format!(
            "{quantity} returned length {}, expected {len}",
            v.len()
        )));
    }
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            quantity,
            t,
            point: point(),
        })
    }
}

fn finite_mat(
    m: DMatrix<f64>,
    shape: (usize, usize),
    quantity: &'static str,
    t: f64,
    point: impl FnOnce() -> Vec<f64>,
) -> Result<DMatrix<f64>> {
    if m.shape() != shape {
        return Err(Error::Dimension(format!(
            "{quantity} returned shape {:?}, expected {shape:?}",
            m.shape()
        )));
    }
    if m.iter().all(|x| x.is_finite()) {
        Ok(m)
    } else {
        Err(Error::Evaluation {
            quantity,
            t,
            point: point(),
        })
    }
}

fn stage_point(x: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
    x.iter().chain(u.iter()).copied().collect()
}

impl ProblemDef {
    /// Creates a problem with every derivative set to finite differences.
    pub fn new<F, L, P>(
        n_x: usize,
        n_u: usize,
        (t0, tf): (f64, f64),
        x0: DVector<f64>,
        dynamics: F,
        running_cost: L,
        final_cost: P,
    ) -> Result<Self>
    where
        F: Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
        L: Fn(&DVector<f64>, &DVector<f64>, f64) -> f64 + Send + Sync + 'static,
        P: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        if n_x == 0 || n_u == 0 {
            return Err(Error::InvalidConfig("n_x and n_u must be at least 1".into()));
        }
        if !(t0 < tf) {
            return Err(Error::InvalidConfig(format!("horizon requires t0 < tf, got [{t0}, {tf}]")));
        }
        if x0.len() != n_x {
            return Err(Error::Dimension(format!("x0 has length {}, expected {n_x}", x0.len())));
        }
        Ok(ProblemDef {
            n_x,
            n_u,
            t0,
            tf,
            x0,
            dynamics: Arc::new(dynamics),
            running_cost: Arc::new(running_cost),
            final_cost: Arc::new(final_cost),
            derivatives: Derivatives::default(),
        })
    }

    pub fn with_f_x(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.f_x = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn with_f_u(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.f_u = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn with_l_x(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.l_x = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn with_l_u(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.l_u = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn with_l_xx(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.l_xx = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn with_l_ux(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.l_ux = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn with_l_uu(mut self, g: impl Fn(&DVector<f64>, &DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.l_uu = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn with_phi_x(mut self, g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.phi_x = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn with_phi_xx(mut self, g: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.derivatives.phi_xx = Derivative::Analytic(Arc::new(g));
        self
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.t0, self.tf)
    }

    pub fn f(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        finite_vec((self.dynamics)(x, u, t), self.n_x, "dynamics", t, || stage_point(x, u))
    }

    pub fn l(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<f64> {
        finite_scalar((self.running_cost)(x, u, t), "running cost", t, || stage_point(x, u))
    }

    pub fn phi(&self, x: &DVector<f64>) -> Result<f64> {
        finite_scalar((self.final_cost)(x), "final cost", self.tf, || x.as_slice().to_vec())
    }

    pub fn f_x(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        match &self.derivatives.f_x {
            Derivative::Analytic(g) => {
                finite_mat(g(x, u, t), (self.n_x, self.n_x), "f_x", t, || stage_point(x, u))
            }
            Derivative::FiniteDifference => self.fd_f_x(x, u, t),
        }
    }

    pub fn f_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        match &self.derivatives.f_u {
            Derivative::Analytic(g) => {
                finite_mat(g(x, u, t), (self.n_x, self.n_u), "f_u", t, || stage_point(x, u))
            }
            Derivative::FiniteDifference => self.fd_f_u(x, u, t),
        }
    }

    pub fn l_x(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        match &self.derivatives.l_x {
            Derivative::Analytic(g) => finite_vec(g(x, u, t), self.n_x, "l_x", t, || stage_point(x, u)),
            Derivative::FiniteDifference => self.fd_l_x(x, u, t),
        }
    }

    pub fn l_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        match &self.derivatives.l_u {
            Derivative::Analytic(g) => finite_vec(g(x, u, t), self.n_u, "l_u", t, || stage_point(x, u)),
            Derivative::FiniteDifference => self.fd_l_u(x, u, t),
        }
    }

    pub fn l_xx(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        match &self.derivatives.l_xx {
            Derivative::Analytic(g) => {
                finite_mat(g(x, u, t), (self.n_x, self.n_x), "l_xx", t, || stage_point(x, u))
            }
            Derivative::FiniteDifference => self.fd_l_xx(x, u, t),
        }
    }

    pub fn l_ux(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        match &self.derivatives.l_ux {
            Derivative::Analytic(g) => {
                finite_mat(g(x, u, t), (self.n_u, self.n_x), "l_ux", t, || stage_point(x, u))
            }
            Derivative::FiniteDifference => self.fd_l_ux(x, u, t),
        }
    }

    pub fn l_uu(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        match &self.derivatives.l_uu {
            Derivative::Analytic(g) => {
                finite_mat(g(x, u, t), (self.n_u, self.n_u), "l_uu", t, || stage_point(x, u))
            }
            Derivative::FiniteDifference => self.fd_l_uu(x, u, t),
        }
    }

    pub fn phi_x(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.derivatives.phi_x {
            Derivative::Analytic(g) => finite_vec(g(x), self.n_x, "phi_x", self.tf, || x.as_slice().to_vec()),
            Derivative::FiniteDifference => self.fd_phi_x(x),
        }
    }

    pub fn phi_xx(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.derivatives.phi_xx {
            Derivative::Analytic(g) => {
                finite_mat(g(x), (self.n_x, self.n_x), "phi_xx", self.tf, || x.as_slice().to_vec())
            }
            Derivative::FiniteDifference => self.fd_phi_xx(x),
        }
    }

    // Finite-difference estimates. First derivatives difference the raw
    // functions; second derivatives difference the (analytic or FD) first
    // derivative.

    pub fn fd_f_x(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        fd_jacobian(|xp| self.f(xp, u, t), x, FdStep::first_order())
    }

    pub fn fd_f_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        fd_jacobian(|up| self.f(x, up, t), u, FdStep::first_order())
    }

    pub fn fd_l_x(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        fd_gradient(|xp| self.l(xp, u, t), x, FdStep::first_order())
    }

    pub fn fd_l_u(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        fd_gradient(|up| self.l(x, up, t), u, FdStep::first_order())
    }

    pub fn fd_l_xx(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        let h = fd_jacobian(|xp| self.l_x(xp, u, t), x, FdStep::second_order())?;
        Ok(symmetrize(&h))
    }

    pub fn fd_l_ux(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        fd_jacobian(|xp| self.l_u(xp, u, t), x, FdStep::second_order())
    }

    pub fn fd_l_uu(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        let h = fd_jacobian(|up| self.l_u(x, up, t), u, FdStep::second_order())?;
        Ok(symmetrize(&h))
    }

    pub fn fd_phi_x(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        fd_gradient(|xp| self.phi(xp), x, FdStep::first_order())
    }

    pub fn fd_phi_xx(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h = fd_jacobian(|xp| self.phi_x(xp), x, FdStep::second_order())?;
        Ok(symmetrize(&h))
    }
}

/// One `(x, u, t)` point at which derivatives are compared.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub t: f64,
}

/// Uniform samples with `‖x‖∞ ≤ x_bound`, `‖u‖∞ ≤ u_bound` and `t` in the
/// problem horizon, drawn from a seeded ChaCha8 stream.
pub fn random_samples(problem: &ProblemDef, count: usize, seed: u64, x_bound: f64, u_bound: f64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Sample {
            x: DVector::from_fn(problem.n_x, |_, _| rng.gen_range(-x_bound..=x_bound)),
            u: DVector::from_fn(problem.n_u, |_, _| rng.gen_range(-u_bound..=u_bound)),
            t: rng.gen_range(problem.t0..=problem.tf),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub tolerance: f64,
    /// Only analytic derivatives appear; finite-difference entries have
    /// nothing to compare against.
    pub checks: Vec<DerivativeCheck>,
    pub samples: Vec<Sample>,
}

impl DerivativeReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&DerivativeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for DerivativeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>14} {:>6}   ({} samples, tol {:e})",
            "name",
            "max rel err",
            "status",
            self.samples.len(),
            self.tolerance
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<8} {:>14.3e} {:>6}",
                c.name,
                c.max_rel_error,
                if c.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn rel_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    (analytic - fd).amax() / fd.amax().max(1.0)
}

fn vec_as_mat(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

/// Compares every analytic derivative of `problem` with its finite-difference
/// estimate at each sample. Relative error is `‖A − FD‖_max / max(1, ‖FD‖_max)`.
pub fn check_derivatives(problem: &ProblemDef, samples: &[Sample], tol: f64) -> Result<DerivativeReport> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("derivative check needs at least one sample".into()));
    }
    type Pair<'a> = Box<dyn Fn(&Sample) -> Result<(DMatrix<f64>, DMatrix<f64>)> + 'a>;
    let d = &problem.derivatives;
    let mut candidates: Vec<(&'static str, bool, Pair)> = Vec::new();
    let p = problem;
    candidates.push((
        "f_x",
        d.f_x.is_analytic(),
        Box::new(move |s| Ok((p.f_x(&s.x, &s.u, s.t)?, p.fd_f_x(&s.x, &s.u, s.t)?))),
    ));
    candidates.push((
        "f_u",
        d.f_u.is_analytic(),
        Box::new(move |s| Ok((p.f_u(&s.x, &s.u, s.t)?, p.fd_f_u(&s.x, &s.u, s.t)?))),
    ));
    candidates.push((
        "l_x",
        d.l_x.is_analytic(),
        Box::new(move |s| {
            Ok((
                vec_as_mat(p.l_x(&s.x, &s.u, s.t)?),
                vec_as_mat(p.fd_l_x(&s.x, &s.u, s.t)?),
            ))
        }),
    ));
    candidates.push((
        "l_u",
        d.l_u.is_analytic(),
        Box::new(move |s| {
            Ok((
                vec_as_mat(p.l_u(&s.x, &s.u, s.t)?),
                vec_as_mat(p.fd_l_u(&s.x, &s.u, s.t)?),
            ))
        }),
    ));
    candidates.push((
        "l_xx",
        d.l_xx.is_analytic(),
        Box::new(move |s| Ok((p.l_xx(&s.x, &s.u, s.t)?, p.fd_l_xx(&s.x, &s.u, s.t)?))),
    ));
    candidates.push((
        "l_ux",
        d.l_ux.is_analytic(),
        Box::new(move |s| Ok((p.l_ux(&s.x, &s.u, s.t)?, p.fd_l_ux(&s.x, &s.u, s.t)?))),
    ));
    candidates.push((
        "l_uu",
        d.l_uu.is_analytic(),
        Box::new(move |s| Ok((p.l_uu(&s.x, &s.u, s.t)?, p.fd_l_uu(&s.x, &s.u, s.t)?))),
    ));
    candidates.push((
        "phi_x",
        d.phi_x.is_analytic(),
        Box::new(move |s| Ok((vec_as_mat(p.phi_x(&s.x)?), vec_as_mat(p.fd_phi_x(&s.x)?)))),
    ));
    candidates.push((
        "phi_xx",
        d.phi_xx.is_analytic(),
        Box::new(move |s| Ok((p.phi_xx(&s.x)?, p.fd_phi_xx(&s.x)?))),
    ));

    let mut checks = Vec::new();
    for (name, analytic, pair) in candidates {
        if !analytic {
            continue;
        }
        let mut worst = 0.0f64;
        for s in samples {
            let (a, fd) = pair(s)?;
            worst = worst.max(rel_error(&a, &fd));
        }
        checks.push(DerivativeCheck {
            name,
            max_rel_error: worst,
            passed: worst <= tol,
        });
    }
    Ok(DerivativeReport {
        tolerance: tol,
        checks,
        samples: samples.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn quadratic_problem() -> ProblemDef {
        // l = ½ xᵀ R x + uᵀ N x + ½ uᵀ U u + cᵀ x, Φ = ½ xᵀ F x
        let r = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]);
        let n = DMatrix::from_row_slice(1, 2, &[0.2, -0.4]);
        let uu = DMatrix::from_element(1, 1, 2.0);
        let c = dv(&[1.0, -1.0]);
        let fm = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);

        let (r2, n2, uu2, c2) = (r.clone(), n.clone(), uu.clone(), c.clone());
        let (a2, b2) = (a.clone(), b.clone());
        let fm2 = fm.clone();
        ProblemDef::new(
            2,
            1,
            (0.0, 1.0),
            dv(&[1.0, 0.0]),
            move |x, u, _| &a2 * x + &b2 * u,
            move |x, u, _| {
                0.5 * (x.transpose() * &r2 * x)[0] + (u.transpose() * &n2 * x)[0] + 0.5 * (u.transpose() * &uu2 * u)[0] + c2.dot(x)
            },
            move |x| 0.5 * (x.transpose() * &fm2 * x)[0],
        )
        .unwrap()
        .with_f_x({
            let a = a.clone();
            move |_, _, _| a.clone()
        })
        .with_f_u({
            let b = b.clone();
            move |_, _, _| b.clone()
        })
        .with_l_x({
            let (r, n, c) = (r.clone(), n.clone(), c.clone());
            move |x, u, _| &r * x + n.transpose() * u + &c
        })
        .with_l_u({
            let (n, uu) = (n.clone(), uu.clone());
            move |x, u, _| &n * x + &uu * u
        })
        .with_l_xx({
            let r = r.clone();
            move |_, _, _| r.clone()
        })
        .with_l_ux({
            let n = n.clone();
            move |_, _, _| n.clone()
        })
        .with_l_uu(move |_, _, _| uu.clone())
        .with_phi_x({
            let fm = fm.clone();
            move |x| &fm * x
        })
        .with_phi_xx(move |_| fm.clone())
    }

    #[test]
    fn fd_polynomial_derivative() {
        let g = fd_gradient(|p| Ok(p[0] * p[0]), &dv(&[3.0]), FdStep::Fixed(1e-5)).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn fd_constant_gradient_is_zero() {
        let g = fd_gradient(|_| Ok(4.2), &dv(&[1.0, -2.0, 3.0]), FdStep::first_order()).unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn fd_reports_offending_point() {
        let p = ProblemDef::new(1, 1, (0.0, 1.0), dv(&[0.0]), |x, _, _| x.map(|v| 1.0 / v), |_, _, _| 0.0, |_| 0.0).unwrap();
        let err = p.f(&dv(&[0.0]), &dv(&[0.5]), 0.25).unwrap_err();
        match err {
            Error::Evaluation { quantity, t, point } => {
                assert_eq!(quantity, "dynamics");
                assert_eq!(t, 0.25);
                assert_eq!(point, vec![0.0, 0.5]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn problem_rejects_bad_shapes() {
        let mk = |n_x, t0, tf, x0: DVector<f64>| ProblemDef::new(n_x, 1, (t0, tf), x0, |x, _, _| x.clone(), |_, _, _| 0.0, |_| 0.0);
        assert!(mk(2, 0.0, 1.0, dv(&[0.0])).is_err());
        assert!(mk(1, 1.0, 1.0, dv(&[0.0])).is_err());
        assert!(mk(0, 0.0, 1.0, dv(&[])).is_err());

        let p = mk(1, 0.0, 1.0, dv(&[0.0])).unwrap().with_f_x(|_, _, _| DMatrix::zeros(2, 2));
        assert!(matches!(p.f_x(&dv(&[0.0]), &dv(&[0.0]), 0.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn quadratic_problem_derivatives_pass() {
        let p = quadratic_problem();
        let samples = random_samples(&p, 10, 7, 3.0, 3.0);
        let report = check_derivatives(&p, &samples, 1e-5).unwrap();
        assert_eq!(report.checks.len(), 9);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn fd_hessians_of_quadratic_costs_are_tight() {
        let p = quadratic_problem();
        for s in random_samples(&p, 5, 3, 3.0, 3.0) {
            let lxx = p.l_xx(&s.x, &s.u, s.t).unwrap();
            let fd = p.fd_l_xx(&s.x, &s.u, s.t).unwrap();
            assert!(rel_error(&lxx, &fd) < 1e-7);
            let pxx = p.phi_xx(&s.x).unwrap();
            assert!(rel_error(&pxx, &p.fd_phi_xx(&s.x).unwrap()) < 1e-7);
        }
    }

    #[test]
    fn finite_difference_fallbacks_match_analytic() {
        let analytic = quadratic_problem();
        let mut fd_only = analytic.clone();
        fd_only.derivatives = Derivatives::default();
        let s = &random_samples(&analytic, 1, 11, 2.0, 2.0)[0];
        let a = analytic.l_ux(&s.x, &s.u, s.t).unwrap();
        let b = fd_only.l_ux(&s.x, &s.u, s.t).unwrap();
        assert!(rel_error(&a, &b) < 1e-6);
        let a = analytic.f_x(&s.x, &s.u, s.t).unwrap();
        let b = fd_only.f_x(&s.x, &s.u, s.t).unwrap();
        assert!(rel_error(&a, &b) < 1e-9);
        // Nothing analytic left to check.
        assert!(check_derivatives(&fd_only, std::slice::from_ref(s), 1e-5).unwrap().checks.is_empty());
    }

    #[test]
    fn wrong_l_u_is_flagged() {
        let p = quadratic_problem();
        let good = p.clone();
        let broken = p.with_l_u(move |x, u, t| good.l_u(x, u, t).unwrap() * 2.0);
        let samples = random_samples(&broken, 10, 5, 3.0, 3.0);
        let report = check_derivatives(&broken, &samples, 1e-5).unwrap();
        assert!(!report.get("l_u").unwrap().passed);
        assert!(report.get("f_x").unwrap().passed);
        assert!(!report.all_passed());
    }

    #[test]
    fn check_is_deterministic() {
        let p = quadratic_problem();
        let a = check_derivatives(&p, &random_samples(&p, 4, 42, 1.0, 1.0), 1e-5).unwrap();
        let b = check_derivatives(&p, &random_samples(&p, 4, 42, 1.0, 1.0), 1e-5).unwrap();
        assert_eq!(a, b);
    }
}
