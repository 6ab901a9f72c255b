//! Adaptive Dormand-Prince 5(4) integration over a single span.
//!
//! Only the endpoint is produced; there is no dense output.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError<E> {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
    #[error("right-hand side failed at t = {t}: {source}")]
    Rhs { t: f64, source: E },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DormandPrince {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for DormandPrince {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            min_step: 1e-12,
            max_steps: 100_000,
        }
    }
}

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

// Fifth-order weights minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl DormandPrince {
    /// Integrate `y' = f(t, y)` from `t0` to `t1` and return `y(t1)`.
    pub fn integrate<F, E>(
        &self,
        mut f: F,
        t0: f64,
        t1: f64,
        y0: &DVector<f64>,
    ) -> Result<DVector<f64>, IntegrationError<E>>
    where
        F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>, E>,
    {
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(y0.clone());
        }
        let mut eval = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>, IntegrationError<E>> {
            let dy = f(t, y).map_err(|source| IntegrationError::Rhs { t, source })?;
            if dy.iter().all(|v| v.is_finite()) {
                Ok(dy)
            } else {
                Err(IntegrationError::NonFinite { t })
            }
        };

        let mut t = t0;
        let mut y = y0.clone();
        let mut k1 = eval(t, &y)?;
        let mut h = self.initial_step(&y, &k1, span);
        let mut rejected_last = false;

        for _ in 0..self.max_steps {
            let remaining = t1 - t;
            let last = h >= remaining;
            if last {
                h = remaining;
            }

            let k2 = eval(t + C2 * h, &(&y + &k1 * (h * A21)))?;
            let k3 = eval(t + C3 * h, &(&y + (&k1 * A31 + &k2 * A32) * h))?;
            let k4 = eval(t + C4 * h, &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
            let k5 = eval(
                t + C5 * h,
                &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
            )?;
            let k6 = eval(
                t + h,
                &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
            )?;
            let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
            let t_new = if last { t1 } else { t + h };
            let k7 = eval(t_new, &y_new)?;

            let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
            let err = error_norm(&err_vec, &y, &y_new, self.abs_tol, self.rel_tol);
            if !err.is_finite() {
                return Err(IntegrationError::NonFinite { t });
            }

            if err <= 1.0 {
                t = t_new;
                y = y_new;
                k1 = k7;
                if last {
                    return Ok(y);
                }
                let mut factor = if err == 0.0 {
                    5.0
                } else {
                    0.9 * err.powf(-0.2)
                };
                factor = factor.clamp(0.2, 5.0);
                if rejected_last {
                    factor = factor.min(1.0);
                }
                h *= factor;
                rejected_last = false;
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                rejected_last = true;
            }
            if h < self.min_step {
                return Err(IntegrationError::StepUnderflow { t, h });
            }
        }
        Err(IntegrationError::TooManySteps { t })
    }

    fn initial_step(&self, y: &DVector<f64>, dy: &DVector<f64>, span: f64) -> f64 {
        let scale = y.map(|v| self.abs_tol + self.rel_tol * v.abs());
        let d0 = y.component_div(&scale).norm() / (y.len() as f64).sqrt();
        let d1 = dy.component_div(&scale).norm() / (y.len() as f64).sqrt();
        let h = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h.clamp(self.min_step, span)
    }
}

fn error_norm(
    err: &DVector<f64>,
    y0: &DVector<f64>,
    y1: &DVector<f64>,
    atol: f64,
    rtol: f64,
) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}
