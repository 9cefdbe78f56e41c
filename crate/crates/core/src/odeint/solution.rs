use nalgebra::DVector;

use crate::error::{Error, Result};

/// Which dense-output formula the per-step coefficients belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DenseKind {
    /// `r1 + θ(r2 + (1−θ)(r3 + θ(r4 + (1−θ) r5)))`
    Dopri5,
    /// `(1−θ) y0 + θ(y1 + (1−θ)(c1 + θ c2))`
    Rosenbrock,
}

impl DenseKind {
    pub(crate) fn coefficient_count(self) -> usize {
        match self {
            DenseKind::Dopri5 => 5,
            DenseKind::Rosenbrock => 2,
        }
    }
}

/// Output of [`integrate`](super::integrate): the accepted-step mesh, the
/// states on it, and per-step interpolation coefficients.
///
/// The mesh runs from the span start to the span end, so it is decreasing
/// for backward-in-time integration.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSolution {
    dim: usize,
    mesh: Vec<f64>,
    states: Vec<f64>,
    dense: Vec<f64>,
    kind: DenseKind,
    rhs_evals: usize,
    rejected: usize,
}

impl ContinuousSolution {
    pub(crate) fn new(dim: usize, t0: f64, y0: &DVector<f64>, kind: DenseKind) -> Self {
        ContinuousSolution {
            dim,
            mesh: vec![t0],
            states: y0.as_slice().to_vec(),
            dense: Vec::new(),
            kind,
            rhs_evals: 0,
            rejected: 0,
        }
    }

    pub(crate) fn push_step(&mut self, t: f64, y: &DVector<f64>, coefficients: &[DVector<f64>]) {
        debug_assert_eq!(coefficients.len(), self.kind.coefficient_count());
        self.mesh.push(t);
        self.states.extend_from_slice(y.as_slice());
        for c in coefficients {
            self.dense.extend_from_slice(c.as_slice());
        }
    }

    pub(crate) fn set_counters(&mut self, rhs_evals: usize, rejected: usize) {
        self.rhs_evals = rhs_evals;
        self.rejected = rejected;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn step_count(&self) -> usize {
        self.mesh.len() - 1
    }

    pub fn rhs_evals(&self) -> usize {
        self.rhs_evals
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    /// Accepted plus rejected steps.
    pub fn attempted_steps(&self) -> usize {
        self.step_count() + self.rejected
    }

    /// `(start, end)` in integration order.
    pub fn span(&self) -> (f64, f64) {
        (self.mesh[0], *self.mesh.last().unwrap())
    }

    pub fn state_at_mesh(&self, i: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.states[i * self.dim..(i + 1) * self.dim])
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.state_at_mesh(self.step_count())
    }

    /// Absolute accepted step sizes.
    pub fn step_sizes(&self) -> Vec<f64> {
        self.mesh.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
    }

    /// Smallest and largest accepted step, `None` for an empty mesh.
    pub fn dt_range(&self) -> Option<(f64, f64)> {
        let steps = self.step_sizes();
        if steps.is_empty() {
            return None;
        }
        let lo = steps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = steps.iter().copied().fold(0.0, f64::max);
        Some((lo, hi))
    }

    fn increasing(&self) -> bool {
        self.mesh.len() < 2 || self.mesh[1] > self.mesh[0]
    }

    /// Index of the step containing `t`, or `Err(i)` if `t` is exactly mesh point `i`.
    fn locate(&self, t: f64) -> Result<std::result::Result<usize, usize>> {
        let (a, b) = self.span();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain { t, lo, hi });
        }
        let found = if self.increasing() {
            self.mesh.binary_search_by(|m| m.total_cmp(&t))
        } else {
            self.mesh.binary_search_by(|m| t.total_cmp(m))
        };
        Ok(match found {
            Ok(i) => Err(i),
            // Insertion point `i` lies between mesh[i-1] and mesh[i].
            Err(i) => Ok(i - 1),
        })
    }

    /// Dense evaluation into a caller-provided buffer of length `dim`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let n = self.dim;
        let step = match self.locate(t)? {
            Err(i) => {
                out.copy_from_slice(&self.states[i * n..(i + 1) * n]);
                return Ok(());
            }
            Ok(step) => step,
        };
        let t0 = self.mesh[step];
        let h = self.mesh[step + 1] - t0;
        let theta = (t - t0) / h;
        let theta1 = 1.0 - theta;
        let ncoef = self.kind.coefficient_count();
        let c = &self.dense[step * ncoef * n..(step + 1) * ncoef * n];
        let y0 = &self.states[step * n..(step + 1) * n];
        let y1 = &self.states[(step + 1) * n..(step + 2) * n];
        match self.kind {
            DenseKind::Dopri5 => {
                for i in 0..n {
                    let (r2, r3, r4, r5) = (c[n + i], c[2 * n + i], c[3 * n + i], c[4 * n + i]);
                    out[i] = c[i] + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)));
                }
            }
            DenseKind::Rosenbrock => {
                for i in 0..n {
                    out[i] = theta1 * y0[i] + theta * (y1[i] + theta1 * (c[i] + theta * c[n + i]));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.eval_into(t, out.as_mut_slice())?;
        Ok(out)
    }
}
