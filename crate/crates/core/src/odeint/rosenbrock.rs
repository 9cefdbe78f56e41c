//! Six-stage, stiffly accurate, L-stable Rosenbrock method of order 4 with an
//! embedded order-3 solution and a third-order continuous extension
//! (Hairer & Wanner's RODAS coefficient set in the `W⁻¹`-transformed form).
//!
//! Each stage solves `(I/(hγ) − J) kᵢ = f(t + cᵢh, uᵢ) + Σ Cᵢⱼ kⱼ / h + dᵢ h ∂f/∂t`
//! with `uᵢ = y + Σ aᵢⱼ kⱼ`. The Jacobian and time derivative are finite
//! differences of the right-hand side, refreshed at every accepted state.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use super::{Rhs, StepAttempt, Stepper};
use crate::error::Result;

const GAMMA: f64 = 0.25;

const A21: f64 = 1.544;
const A31: f64 = 0.9466785280815826;
const A32: f64 = 0.2557011698983284;
const A41: f64 = 3.314825187068521;
const A42: f64 = 2.896124015972201;
const A43: f64 = 0.9986419139977817;
const A51: f64 = 1.221224509226641;
const A52: f64 = 6.019134481288629;
const A53: f64 = 12.53708332932087;
const A54: f64 = -0.6878860361058950;

const C21: f64 = -5.6688;
const C31: f64 = -2.430093356833875;
const C32: f64 = -0.2063599157091915;
const C41: f64 = -0.1073529058151375;
const C42: f64 = -9.594562251023355;
const C43: f64 = -20.47028614809616;
const C51: f64 = 7.496443313967647;
const C52: f64 = -10.24680431464352;
const C53: f64 = -33.99990352819905;
const C54: f64 = 11.70890893206160;
const C61: f64 = 8.083246795921522;
const C62: f64 = -7.981132988064893;
const C63: f64 = -31.52159432874371;
const C64: f64 = 16.31930543123136;
const C65: f64 = -6.058818238834054;

const T2: f64 = 0.386;
const T3: f64 = 0.21;
const T4: f64 = 0.63;

const D1: f64 = 0.25;
const D2: f64 = -0.1043;
const D3: f64 = 0.1035;
const D4: f64 = -0.0362;

const H21: f64 = 10.12623508344586;
const H22: f64 = -7.487995877610167;
const H23: f64 = -34.80091861555747;
const H24: f64 = -7.992771707568823;
const H25: f64 = 1.025137723295662;
const H31: f64 = -0.6762803392801253;
const H32: f64 = 6.087714651680015;
const H33: f64 = 16.43084320892478;
const H34: f64 = 24.76722511418386;
const H35: f64 = -6.594389125716872;

#[derive(Debug, Default)]
pub(crate) struct Rodas4 {
    /// Jacobian and ∂f/∂t at the current accepted state.
    linearization: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl Rodas4 {
    fn linearize(&self, rhs: &mut Rhs<'_>, t: f64, y: &DVector<f64>, f0: &DVector<f64>, h: f64) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        let n = y.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut yp = y.clone();
        for j in 0..n {
            let delta = (f64::EPSILON * y[j].abs().max(1e-5)).sqrt();
            yp[j] = y[j] + delta;
            let Some(fp) = rhs.stage(t, &yp)? else {
                return Ok(None);
            };
            yp[j] = y[j];
            let col = (fp - f0) / delta;
            jac.set_column(j, &col);
        }
        // Difference in the direction of integration so the perturbed time
        // stays inside any interpolant the right-hand side depends on.
        let dt = f64::EPSILON.sqrt() * t.abs().max(1.0) * h.signum();
        let Some(ft) = rhs.stage(t + dt, y)? else {
            return Ok(None);
        };
        Ok(Some((jac, (ft - f0) / dt)))
    }
}

fn solve(lu: &LU<f64, Dyn, Dyn>, b: DVector<f64>) -> Option<DVector<f64>> {
    let x = lu.solve(&b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

impl Stepper for Rodas4 {
    fn error_order(&self) -> f64 {
        4.0
    }

    fn method_order(&self) -> f64 {
        4.0
    }

    fn accepted(&mut self) {
        self.linearization = None;
    }

    fn attempt(&mut self, rhs: &mut Rhs<'_>, t: f64, y: &DVector<f64>, f0: &DVector<f64>, h: f64) -> Result<Option<StepAttempt>> {
        if self.linearization.is_none() {
            self.linearization = self.linearize(rhs, t, y, f0, h)?;
            if self.linearization.is_none() {
                return Ok(None);
            }
        }
        let (jac, ft) = self.linearization.as_ref().unwrap();
        let n = y.len();
        let w = DMatrix::identity(n, n) / (h * GAMMA) - jac;
        let lu = w.lu();
        let inv_h = 1.0 / h;

        macro_rules! stage_solve {
            ($b:expr) => {
                match solve(&lu, $b) {
                    Some(k) => k,
                    None => return Ok(None),
                }
            };
        }
        macro_rules! eval {
            ($t:expr, $u:expr) => {
                match rhs.stage($t, $u)? {
                    Some(f) => f,
                    None => return Ok(None),
                }
            };
        }

        let k1 = stage_solve!(f0 + ft * (D1 * h));

        let u = y + &k1 * A21;
        let du = eval!(t + T2 * h, &u);
        let k2 = stage_solve!(du + ft * (D2 * h) + &k1 * (C21 * inv_h));

        let u = y + &k1 * A31 + &k2 * A32;
        let du = eval!(t + T3 * h, &u);
        let k3 = stage_solve!(du + ft * (D3 * h) + (&k1 * C31 + &k2 * C32) * inv_h);

        let u = y + &k1 * A41 + &k2 * A42 + &k3 * A43;
        let du = eval!(t + T4 * h, &u);
        let k4 = stage_solve!(du + ft * (D4 * h) + (&k1 * C41 + &k2 * C42 + &k3 * C43) * inv_h);

        let u = y + &k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54;
        let du = eval!(t + h, &u);
        let k5 = stage_solve!(du + (&k1 * C51 + &k2 * C52 + &k3 * C53 + &k4 * C54) * inv_h);

        let u = u + &k5;
        let du = eval!(t + h, &u);
        let k6 = stage_solve!(du + (&k1 * C61 + &k2 * C62 + &k3 * C63 + &k4 * C64 + &k5 * C65) * inv_h);

        let y_new = u + &k6;
        let dense1 = &k1 * H21 + &k2 * H22 + &k3 * H23 + &k4 * H24 + &k5 * H25;
        let dense2 = &k1 * H31 + &k2 * H32 + &k3 * H33 + &k4 * H34 + &k5 * H35;
        Ok(Some(StepAttempt {
            y: y_new,
            err: k6,
            dense: vec![dense1, dense2],
            f_new: None,
        }))
    }
}
