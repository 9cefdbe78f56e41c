//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.

use nalgebra::DVector;

use super::{Rhs, StepAttempt, Stepper};
use crate::error::Result;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Default)]
pub(crate) struct Dopri5;

impl Stepper for Dopri5 {
    fn error_order(&self) -> f64 {
        5.0
    }

    fn method_order(&self) -> f64 {
        5.0
    }

    fn accepted(&mut self) {}

    fn attempt(&mut self, rhs: &mut Rhs<'_>, t: f64, y: &DVector<f64>, f0: &DVector<f64>, h: f64) -> Result<Option<StepAttempt>> {
        let k1 = f0;
        let Some(k2) = rhs.stage(t + C2 * h, &(y + k1 * (h * A21)))? else {
            return Ok(None);
        };
        let Some(k3) = rhs.stage(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h))? else {
            return Ok(None);
        };
        let Some(k4) = rhs.stage(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h))? else {
            return Ok(None);
        };
        let Some(k5) = rhs.stage(t + C5 * h, &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h))? else {
            return Ok(None);
        };
        let y6 = y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h;
        let Some(k6) = rhs.stage(t + h, &y6)? else {
            return Ok(None);
        };
        let y_new = y + (k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let Some(k7) = rhs.stage(t + h, &y_new)? else {
            return Ok(None);
        };
        let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;

        let r2 = &y_new - y;
        let r3 = k1 * h - &r2;
        let r4 = &r2 - &k7 * h - &r3;
        let r5 = (k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
        Ok(Some(StepAttempt {
            dense: vec![y.clone(), r2, r3, r4, r5],
            y: y_new,
            err,
            f_new: Some(k7),
        }))
    }
}
