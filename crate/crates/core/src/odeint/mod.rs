//! Adaptive one-step ODE integration with dense output.
//!
//! Two methods are available: the explicit Dormand–Prince 5(4) pair for
//! non-stiff problems and a linearly implicit Rosenbrock 4(3) method for stiff
//! ones. Both support integration backward in time through a signed step.

mod dopri5;
mod rosenbrock;
mod solution;

use nalgebra::DVector;

pub use solution::ContinuousSolution;
use solution::DenseKind;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Explicit Dormand–Prince 5(4).
    Explicit54,
    /// Linearly implicit, L-stable Rosenbrock 4(3).
    RosenbrockStiff,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Explicit54 => "explicit-5(4)",
            Method::RosenbrockStiff => "rosenbrock-stiff",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "explicit-5(4)" | "explicit54" | "dopri5" => Some(Method::Explicit54),
            "rosenbrock-stiff" | "rosenbrock" | "rodas4" => Some(Method::RosenbrockStiff),
            _ => None,
        }
    }

    fn stepper(self) -> Box<dyn Stepper> {
        match self {
            Method::Explicit54 => Box::new(dopri5::Dopri5),
            Method::RosenbrockStiff => Box::<rosenbrock::Rodas4>::default(),
        }
    }

    fn dense_kind(self) -> DenseKind {
        match self {
            Method::Explicit54 => DenseKind::Dopri5,
            Method::RosenbrockStiff => DenseKind::Rosenbrock,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepperConfig {
    pub reltol: f64,
    pub abstol: f64,
    pub method: Method,
    /// Initial step magnitude; chosen automatically when `None`.
    pub dt_initial: Option<f64>,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Budget on step attempts, accepted or rejected.
    pub max_steps: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            reltol: 1e-6,
            abstol: 1e-8,
            method: Method::RosenbrockStiff,
            dt_initial: None,
            dt_min: 1e-14,
            dt_max: f64::INFINITY,
            max_steps: 200_000,
        }
    }
}

impl StepperConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_tolerances(mut self, reltol: f64, abstol: f64) -> Self {
        self.reltol = reltol;
        self.abstol = abstol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.reltol > 0.0 && self.abstol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.dt_min > 0.0 && self.dt_max > 0.0 && self.dt_min <= self.dt_max) {
            return bad("step bounds must satisfy 0 < dt_min <= dt_max");
        }
        if self.dt_initial.is_some_and(|h| !(h > 0.0)) {
            return bad("dt_initial must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        Ok(())
    }
}

/// Right-hand side wrapper that counts evaluations and converts failures in
/// trial stages into step rejections.
pub(crate) struct Rhs<'a> {
    f: &'a mut dyn FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    evals: usize,
    last_error: Option<Error>,
}

impl Rhs<'_> {
    fn eval(&mut self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.evals += 1;
        let v = (self.f)(t, y)?;
        if v.len() != y.len() {
            return Err(Error::Dimension(format!(
                "rhs returned length {}, expected {}",
                v.len(),
                y.len()
            )));
        }
        if v.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                quantity: "rhs",
                t,
                point: y.as_slice().to_vec(),
            })
        }
    }

    /// Trial-stage evaluation: `None` means reject the step.
    pub(crate) fn stage(&mut self, t: f64, y: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        if !y.iter().all(|x| x.is_finite()) {
            self.last_error = Some(Error::Evaluation {
                quantity: "stage state",
                t,
                point: y.as_slice().to_vec(),
            });
            return Ok(None);
        }
        match self.eval(t, y) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Dimension(msg)) => Err(Error::Dimension(msg)),
            Err(e) => {
                self.last_error = Some(e);
                Ok(None)
            }
        }
    }
}

pub(crate) struct StepAttempt {
    pub y: DVector<f64>,
    pub err: DVector<f64>,
    pub dense: Vec<DVector<f64>>,
    /// Right-hand side at the new point when the method provides it for free.
    pub f_new: Option<DVector<f64>>,
}

pub(crate) trait Stepper {
    /// Exponent base for step control: embedded order + 1.
    fn error_order(&self) -> f64;
    fn method_order(&self) -> f64;
    /// Called after every accepted step.
    fn accepted(&mut self);
    /// `Ok(None)` signals a failed trial (non-finite stage or callback error).
    fn attempt(&mut self, rhs: &mut Rhs<'_>, t: f64, y: &DVector<f64>, f0: &DVector<f64>, h: f64) -> Result<Option<StepAttempt>>;
}

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

fn error_norm(err: &DVector<f64>, y: &DVector<f64>, y_new: &DVector<f64>, cfg: &StepperConfig) -> f64 {
    let n = err.len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .map(|i| {
            let sc = cfg.abstol + cfg.reltol * y[i].abs().max(y_new[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / n as f64).sqrt()
}

fn scaled_norm(v: &DVector<f64>, y: &DVector<f64>, cfg: &StepperConfig) -> f64 {
    error_norm(v, y, y, cfg)
}

/// Automatic starting step from the magnitudes of `y0` and `f(t_a, y0)`.
fn initial_step(rhs: &mut Rhs<'_>, t: f64, y0: &DVector<f64>, f0: &DVector<f64>, dir: f64, order: f64, cfg: &StepperConfig, span_len: f64) -> f64 {
    let d0 = scaled_norm(y0, y0, cfg);
    let d1 = scaled_norm(f0, y0, cfg);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(cfg.dt_max).min(span_len);
    let y1 = y0 + f0 * (dir * h0);
    let d2 = match rhs.stage(t + dir * h0, &y1) {
        Ok(Some(f1)) => scaled_norm(&(f1 - f0), y0, cfg) / h0,
        _ => return h0.max(cfg.dt_min) * 1e-2,
    };
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(1.0 / (order + 1.0))
    };
    (100.0 * h0).min(h1).min(cfg.dt_max).min(span_len).max(cfg.dt_min)
}

/// Integrates `ẏ = rhs(t, y)` from `span.0` to `span.1` (either direction)
/// with adaptive steps, keeping dense output for every accepted step.
pub fn integrate<F>(mut rhs: F, y0: &DVector<f64>, span: (f64, f64), config: &StepperConfig) -> Result<ContinuousSolution>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    config.validate()?;
    let (ta, tb) = span;
    if !(ta.is_finite() && tb.is_finite()) || ta == tb {
        return Err(Error::InvalidConfig(format!("invalid integration span ({ta}, {tb})")));
    }
    let dir = (tb - ta).signum();
    let span_len = (tb - ta).abs();
    let mut rhs = Rhs {
        f: &mut rhs,
        evals: 0,
        last_error: None,
    };
    let mut stepper = config.method.stepper();
    let p = stepper.error_order();

    let mut sol = ContinuousSolution::new(y0.len(), ta, y0, config.method.dense_kind());
    let mut t = ta;
    let mut y = y0.clone();
    let mut f = rhs.eval(ta, &y)?;

    let mut h_abs = match config.dt_initial {
        Some(h) => h.min(config.dt_max).min(span_len).max(config.dt_min),
        None => initial_step(&mut rhs, t, &y, &f, dir, stepper.method_order(), config, span_len),
    };
    let mut err_prev: f64 = 1e-4;
    let mut last_rejected = false;
    let mut attempts = 0usize;

    while t != tb {
        if attempts >= config.max_steps {
            return Err(Error::StepBudget {
                max_steps: config.max_steps,
                t,
            });
        }
        attempts += 1;

        let remaining = (tb - t).abs();
        let last = h_abs >= remaining || remaining - h_abs < 0.01 * h_abs;
        let h = if last { tb - t } else { dir * h_abs };
        if t + h == t {
            return Err(Error::StepTooSmall { t, dt: h.abs() });
        }

        let outcome = stepper.attempt(&mut rhs, t, &y, &f, h)?;
        let accepted = outcome.and_then(|step| {
            let err = error_norm(&step.err, &y, &step.y, config);
            if !err.is_finite() {
                return None;
            }
            Some((step, err))
        });

        match accepted {
            Some((step, err)) if err <= 1.0 => {
                let t_new = if last { tb } else { t + h };
                let f_new = match step.f_new {
                    Some(f_new) => Some(f_new),
                    None => rhs.stage(t_new, &step.y)?,
                };
                if let Some(f_new) = f_new {
                    sol.push_step(t_new, &step.y, &step.dense);
                    stepper.accepted();
                    t = t_new;
                    y = step.y;
                    f = f_new;

                    let mut fac = if err == 0.0 {
                        FAC_MAX
                    } else {
                        SAFETY * err.powf(-0.7 / p) * err_prev.powf(0.4 / p)
                    };
                    fac = fac.clamp(FAC_MIN, FAC_MAX);
                    if last_rejected {
                        fac = fac.min(1.0);
                    }
                    err_prev = err.max(1e-4);
                    last_rejected = false;
                    h_abs = (h.abs() * fac).min(config.dt_max).max(config.dt_min);
                    continue;
                }
                // The right-hand side failed at the new point: reject.
                if h.abs() <= config.dt_min {
                    return Err(rhs.last_error.take().unwrap_or(Error::StepTooSmall { t, dt: h.abs() }));
                }
                h_abs = (h.abs() * FAC_MIN).max(config.dt_min);
                last_rejected = true;
            }
            Some((_, err)) => {
                if h.abs() <= config.dt_min {
                    return Err(Error::StepTooSmall { t, dt: h.abs() });
                }
                let fac = (SAFETY * err.powf(-0.7 / p) * err_prev.powf(0.4 / p)).clamp(FAC_MIN, 1.0);
                h_abs = (h.abs() * fac).max(config.dt_min);
                last_rejected = true;
            }
            None => {
                if h.abs() <= config.dt_min {
                    return Err(rhs.last_error.take().unwrap_or(Error::StepTooSmall { t, dt: h.abs() }));
                }
                h_abs = (h.abs() * FAC_MIN).max(config.dt_min);
                last_rejected = true;
            }
        }
    }
    sol.set_counters(rhs.evals, attempts - sol.step_count());
    Ok(sol)
}

/// Integrates with `n_steps` equal steps and no error control.
pub fn integrate_fixed<F>(mut rhs: F, y0: &DVector<f64>, span: (f64, f64), method: Method, n_steps: usize) -> Result<ContinuousSolution>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let (ta, tb) = span;
    if n_steps == 0 || ta == tb {
        return Err(Error::InvalidConfig("fixed-step integration needs n_steps > 0 and a non-empty span".into()));
    }
    let mut rhs = Rhs {
        f: &mut rhs,
        evals: 0,
        last_error: None,
    };
    let mut stepper = method.stepper();
    let mut sol = ContinuousSolution::new(y0.len(), ta, y0, method.dense_kind());
    let mut y = y0.clone();
    let mut f = rhs.eval(ta, &y)?;
    let h = (tb - ta) / n_steps as f64;
    for i in 0..n_steps {
        let t = ta + i as f64 * h;
        let t_new = if i + 1 == n_steps { tb } else { ta + (i + 1) as f64 * h };
        let step = stepper
            .attempt(&mut rhs, t, &y, &f, t_new - t)?
            .ok_or_else(|| rhs.last_error.take().unwrap_or(Error::StepTooSmall { t, dt: h.abs() }))?;
        f = match step.f_new {
            Some(f_new) => f_new,
            None => rhs.eval(t_new, &step.y)?,
        };
        sol.push_step(t_new, &step.y, &step.dense);
        stepper.accepted();
        y = step.y;
    }
    sol.set_counters(rhs.evals, 0);
    Ok(sol)
}

#[cfg(test)]
mod tests;
