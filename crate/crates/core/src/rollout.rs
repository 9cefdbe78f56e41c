//! Forward pass: closed-loop simulation with an accumulated-cost state, the
//! updated policy `u = ū − α·d − K(x − x̄)`, and the backtracking line search.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ocp::ProblemDef;
use crate::odeint::{integrate, ContinuousSolution, StepperConfig};
use crate::riccati::BackwardSolution;

/// Number of uniform intervals in the control refinement grid.
pub const CONTROL_GRID_INTERVALS: usize = 256;

/// Piecewise-cubic Hermite interpolant of a vector-valued control, with
/// three-point (Bessel) slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpline {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl ControlSpline {
    /// `times` must be strictly increasing; `values[i]` has length `dim`.
    pub fn new(dim: usize, times: Vec<f64>, values: &[DVector<f64>]) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Dimension(format!(
                "control spline needs matching non-empty knots, got {} times and {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("control knots must be strictly increasing".into()));
        }
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension(format!("control knots must have length {dim}")));
        }
        let flat: Vec<f64> = values.iter().flat_map(|v| v.iter().copied()).collect();
        let slopes = bessel_slopes(dim, &times, &flat);
        Ok(ControlSpline {
            dim,
            times,
            values: flat,
            slopes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knots(&self) -> &[f64] {
        &self.times
    }

    pub fn knot_value(&self, i: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let n = self.dim;
        let (lo, hi) = (self.times[0], *self.times.last().unwrap());
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain { t, lo, hi });
        }
        let i = match self.times.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => {
                out.copy_from_slice(&self.values[i * n..(i + 1) * n]);
                return Ok(());
            }
            Err(i) => i - 1,
        };
        let h = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for k in 0..n {
            let (a, b) = (i * n + k, (i + 1) * n + k);
            out[k] = h00 * self.values[a] + h10 * h * self.slopes[a] + h01 * self.values[b] + h11 * h * self.slopes[b];
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.eval_into(t, out.as_mut_slice())?;
        Ok(out)
    }
}

fn bessel_slopes(n: usize, t: &[f64], v: &[f64]) -> Vec<f64> {
    let m = t.len();
    let mut slopes = vec![0.0; v.len()];
    if m < 2 {
        return slopes;
    }
    let secant = |i: usize, k: usize| (v[(i + 1) * n + k] - v[i * n + k]) / (t[i + 1] - t[i]);
    if m == 2 {
        for k in 0..n {
            let d = secant(0, k);
            slopes[k] = d;
            slopes[n + k] = d;
        }
        return slopes;
    }
    for k in 0..n {
        for i in 1..m - 1 {
            let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            slopes[i * n + k] = (h1 * secant(i - 1, k) + h0 * secant(i, k)) / (h0 + h1);
        }
        let (h0, h1) = (t[1] - t[0], t[2] - t[1]);
        slopes[k] = ((2.0 * h0 + h1) * secant(0, k) - h0 * secant(1, k)) / (h0 + h1);
        let (h0, h1) = (t[m - 1] - t[m - 2], t[m - 2] - t[m - 3]);
        slopes[(m - 1) * n + k] = ((2.0 * h0 + h1) * secant(m - 2, k) - h0 * secant(m - 3, k)) / (h0 + h1);
    }
    slopes
}

/// A forward rollout: dense `(x, c)` with `c` the accumulated running cost,
/// the materialized control, and the total cost `J = c(tf) + Φ(x(tf))`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    n_x: usize,
    states: ContinuousSolution,
    control: ControlSpline,
    pub cost: f64,
}

impl Trajectory {
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn solution(&self) -> &ContinuousSolution {
        &self.states
    }

    pub fn control_spline(&self) -> &ControlSpline {
        &self.control
    }

    pub fn step_count(&self) -> usize {
        self.states.step_count()
    }

    pub fn span(&self) -> (f64, f64) {
        self.states.span()
    }

    /// `x(t)` written into `out` (length `n_x`).
    pub fn state_into(&self, t: f64, buf: &mut [f64], out: &mut DVector<f64>) -> Result<()> {
        self.states.eval_into(t, buf)?;
        out.as_mut_slice().copy_from_slice(&buf[..self.n_x]);
        Ok(())
    }

    pub fn state(&self, t: f64) -> Result<DVector<f64>> {
        let full = self.states.eval(t)?;
        Ok(full.rows(0, self.n_x).into_owned())
    }

    pub fn accumulated_cost(&self, t: f64) -> Result<f64> {
        Ok(self.states.eval(t)?[self.n_x])
    }

    pub fn control(&self, t: f64) -> Result<DVector<f64>> {
        self.control.eval(t)
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.states.final_state().rows(0, self.n_x).into_owned()
    }
}

/// Simulates `ẋ = f(x, u(x, t), t)`, `ċ = l(x, u, t)` from `(x0, 0)` under an
/// arbitrary feedback law and materializes the applied control.
pub fn simulate<C>(problem: &ProblemDef, mut law: C, config: &StepperConfig) -> Result<Trajectory>
where
    C: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let n_x = problem.n_x;
    let (t0, tf) = problem.horizon();
    let mut y0 = DVector::zeros(n_x + 1);
    y0.rows_mut(0, n_x).copy_from(&problem.x0);
    let mut x = DVector::zeros(n_x);
    let states = integrate(
        |t, y| {
            let t = t.clamp(t0, tf);
            x.copy_from(&y.rows(0, n_x));
            let u = law(t, &x)?;
            let dx = problem.f(&x, &u, t)?;
            let mut out = DVector::zeros(n_x + 1);
            out.rows_mut(0, n_x).copy_from(&dx);
            out[n_x] = problem.l(&x, &u, t)?;
            Ok(out)
        },
        &y0,
        (t0, tf),
        config,
    )?;

    let mut times: Vec<f64> = states.mesh().to_vec();
    let dt = (tf - t0) / CONTROL_GRID_INTERVALS as f64;
    times.extend((0..=CONTROL_GRID_INTERVALS).map(|i| if i == CONTROL_GRID_INTERVALS { tf } else { t0 + i as f64 * dt }));
    times.sort_by(f64::total_cmp);
    let merge_tol = 1e-12 * (tf - t0);
    times.dedup_by(|b, a| *b - *a <= merge_tol);

    let mut buf = vec![0.0; n_x + 1];
    let mut values = Vec::with_capacity(times.len());
    for &t in &times {
        states.eval_into(t, &mut buf)?;
        x.as_mut_slice().copy_from_slice(&buf[..n_x]);
        let u = law(t, &x)?;
        if u.len() != problem.n_u || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                quantity: "control",
                t,
                point: x.as_slice().to_vec(),
            });
        }
        values.push(u);
    }
    let control = ControlSpline::new(problem.n_u, times, &values)?;

    let x_f = states.final_state().rows(0, n_x).into_owned();
    let cost = states.final_state()[n_x] + problem.phi(&x_f)?;
    if !cost.is_finite() {
        return Err(Error::Evaluation {
            quantity: "total cost",
            t: tf,
            point: x_f.as_slice().to_vec(),
        });
    }
    Ok(Trajectory {
        n_x,
        states,
        control,
        cost,
    })
}

/// The updated policy `u(x, t) = ū(t) − α·d(t) − K(t)(x − x̄(t))`.
#[derive(Clone, Copy)]
pub struct PolicyEval<'a> {
    pub alpha: f64,
    pub backward: &'a BackwardSolution,
}

impl PolicyEval<'_> {
    pub fn control(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.backward.eval_gains(t)?;
        Ok(policy_control(self.alpha, &g.u_nominal, &g.d, &g.k, x, &g.x_nominal))
    }
}

pub fn policy_control(
    alpha: f64,
    u_nominal: &DVector<f64>,
    d: &DVector<f64>,
    k: &DMatrix<f64>,
    x: &DVector<f64>,
    x_nominal: &DVector<f64>,
) -> DVector<f64> {
    u_nominal - d * alpha - k * (x - x_nominal)
}

/// Right-hand side of the forward pass at `(x, c)`.
pub fn forward_rhs(problem: &ProblemDef, policy: &PolicyEval<'_>, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n_x = problem.n_x;
    let x = y.rows(0, n_x).into_owned();
    let u = policy.control(t, &x)?;
    let mut out = DVector::zeros(n_x + 1);
    out.rows_mut(0, n_x).copy_from(&problem.f(&x, &u, t)?);
    out[n_x] = problem.l(&x, &u, t)?;
    Ok(out)
}

pub fn rollout(problem: &ProblemDef, policy: &PolicyEval<'_>, config: &StepperConfig) -> Result<Trajectory> {
    simulate(problem, |t, x| policy.control(t, x), config)
}

/// Model decrease `ΔV(α) = −(α − α²/2)·dv1`.
pub fn expected_improvement(dv1_total: f64, alpha: f64) -> f64 {
    -(alpha - 0.5 * alpha * alpha) * dv1_total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    pub beta: f64,
    pub rho: f64,
    pub alpha_min: f64,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        LineSearchParams {
            beta: 1e-4,
            rho: 0.5,
            alpha_min: (-20f64).exp2(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum LineSearchOutcome {
    Accepted {
        trajectory: Arc<Trajectory>,
        alpha: f64,
        /// Candidates rejected before acceptance, including failed rollouts.
        rejected: usize,
    },
    Exhausted {
        rejected: usize,
        last_error: Option<Error>,
    },
}

/// Backtracking search on `J_new − J < β·ΔV(α)` starting at `α = 1`.
pub fn line_search(
    problem: &ProblemDef,
    backward: &BackwardSolution,
    params: &LineSearchParams,
    config: &StepperConfig,
) -> LineSearchOutcome {
    let nominal_cost = backward.nominal().cost;
    let mut alpha = 1.0;
    let mut rejected = 0;
    let mut last_error = None;
    while alpha >= params.alpha_min {
        let policy = PolicyEval { alpha, backward };
        match rollout(problem, &policy, config) {
            Ok(traj) => {
                let dv = expected_improvement(backward.dv1_total, alpha);
                if traj.cost - nominal_cost < params.beta * dv {
                    return LineSearchOutcome::Accepted {
                        trajectory: Arc::new(traj),
                        alpha,
                        rejected,
                    };
                }
            }
            Err(e) => last_error = Some(e),
        }
        rejected += 1;
        alpha *= params.rho;
    }
    LineSearchOutcome::Exhausted { rejected, last_error }
}
