//! Outer iteration: initial rollout, then backward pass and line search until
//! the model decrease is negligible or the search is exhausted.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ocp::ProblemDef;
use crate::odeint::StepperConfig;
use crate::riccati::{run_backward_pass, BackwardSolution, Regularization};
use crate::rollout::{line_search, simulate, LineSearchOutcome, LineSearchParams, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub eps: f64,
    pub beta: f64,
    pub rho: f64,
    pub alpha_min: f64,
    pub max_iter: usize,
    /// Convergence threshold on `|ΔV(1)|`; `None` means `1e-7·max(1, |J|)`.
    pub dv_tol: Option<f64>,
    pub backward: StepperConfig,
    pub forward: StepperConfig,
    /// Test switch for the eigenvalue floor on the cost Hessian.
    pub regularize: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            eps: f64::EPSILON,
            beta: 1e-4,
            rho: 0.5,
            alpha_min: (-20f64).exp2(),
            max_iter: 200,
            dv_tol: None,
            backward: StepperConfig::default(),
            forward: StepperConfig::default(),
            regularize: true,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= 1.0) {
            return bad("alpha_min must lie in (0, 1]");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if let Some(tol) = self.dv_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return bad("dv_tol must be positive");
            }
        }
        self.backward.validate()?;
        self.forward.validate()
    }

    pub fn dv_tol_for(&self, cost: f64) -> f64 {
        self.dv_tol.unwrap_or(1e-7 * cost.abs().max(1.0))
    }

    pub fn regularization(&self) -> Regularization {
        Regularization {
            eps: self.eps,
            enabled: self.regularize,
        }
    }

    fn line_search_params(&self) -> LineSearchParams {
        LineSearchParams {
            beta: self.beta,
            rho: self.rho,
            alpha_min: self.alpha_min,
        }
    }
}

/// One row of the iteration log. Iteration 0 is the initial rollout; later
/// rows are one backward pass plus one line search each.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Cost of the nominal after this iteration.
    pub cost: f64,
    /// Accepted step, 0 when none was accepted.
    pub alpha: f64,
    pub n_bwd: usize,
    /// Steps of the accepted rollout only.
    pub n_fwd: usize,
    pub dv1: f64,
    /// Expected improvement `ΔV(α)` at the accepted step, 0 otherwise.
    pub expected: f64,
    pub wall_ms: f64,
    pub bwd_dt: Option<(f64, f64)>,
    pub fwd_dt: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    LineSearchExhausted,
    MaxIterations,
    Failed { iteration: usize, reason: Error },
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::LineSearchExhausted => "line-search-exhausted",
            Termination::MaxIterations => "max-iterations",
            Termination::Failed { .. } => "error",
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, Termination::Converged)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Failed { iteration, reason } => write!(f, "error at iteration {iteration}: {reason}"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Arc<Trajectory>,
    /// Backward pass around the final trajectory, when one completed.
    pub backward: Option<BackwardSolution>,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl Solution {
    pub fn cost(&self) -> f64 {
        self.trajectory.cost
    }

    /// Number of iterations after the initial rollout.
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }
}

/// Open-loop rollout of `u(t)`.
pub fn initial_rollout<U>(problem: &ProblemDef, policy: U, config: &StepperConfig) -> Result<Trajectory>
where
    U: Fn(f64) -> DVector<f64>,
{
    simulate(problem, |t, _| Ok(policy(t)), config)
}

pub fn solve<U>(problem: &ProblemDef, policy: U, params: &SolverParams) -> Result<Solution>
where
    U: Fn(f64) -> DVector<f64>,
{
    params.validate()?;
    let reg = params.regularization();
    let ls = params.line_search_params();

    let clock = Instant::now();
    let first = initial_rollout(problem, policy, &params.forward).map_err(|e| Error::InitialRollout(Box::new(e)))?;
    let mut nominal = Arc::new(first);
    let mut records = vec![IterationRecord {
        iter: 0,
        cost: nominal.cost,
        alpha: 0.0,
        n_bwd: 0,
        n_fwd: nominal.step_count(),
        dv1: 0.0,
        expected: 0.0,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        bwd_dt: None,
        fwd_dt: nominal.solution().dt_range(),
    }];
    let mut last_backward = None;

    for iter in 1..=params.max_iter {
        let clock = Instant::now();
        let backward = match run_backward_pass(problem, nominal.clone(), &params.backward, reg) {
            Ok(b) => b,
            Err(reason) => {
                return Ok(Solution {
                    trajectory: nominal,
                    backward: last_backward,
                    records,
                    termination: Termination::Failed { iteration: iter, reason },
                })
            }
        };
        let dv1 = backward.dv1_total;
        let dv_tol = params.dv_tol_for(nominal.cost);
        let mut record = IterationRecord {
            iter,
            cost: nominal.cost,
            alpha: 0.0,
            n_bwd: backward.step_count(),
            n_fwd: 0,
            dv1,
            expected: 0.0,
            wall_ms: 0.0,
            bwd_dt: backward.value().dt_range(),
            fwd_dt: None,
        };

        let outcome = if 0.5 * dv1 < dv_tol {
            Some(Termination::Converged)
        } else {
            match line_search(problem, &backward, &ls, &params.forward) {
                LineSearchOutcome::Accepted { trajectory, alpha, .. } => {
                    record.cost = trajectory.cost;
                    record.alpha = alpha;
                    record.n_fwd = trajectory.step_count();
                    record.expected = crate::rollout::expected_improvement(dv1, alpha);
                    record.fwd_dt = trajectory.solution().dt_range();
                    nominal = trajectory;
                    None
                }
                LineSearchOutcome::Exhausted { .. } if dv1 < 10.0 * dv_tol => Some(Termination::Converged),
                LineSearchOutcome::Exhausted { .. } => Some(Termination::LineSearchExhausted),
            }
        };
        record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        records.push(record);

        if let Some(termination) = outcome {
            return Ok(Solution {
                trajectory: nominal,
                backward: Some(backward),
                records,
                termination,
            });
        }
        last_backward = Some(backward);
    }

    // The stored backward pass belongs to the previous nominal; refresh it.
    let backward = run_backward_pass(problem, nominal.clone(), &params.backward, reg).ok();
    Ok(Solution {
        trajectory: nominal,
        backward,
        records,
        termination: Termination::MaxIterations,
    })
}
