use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::max_abs_diff;

/// Default fixed step count for single-path integrations.
pub const DEFAULT_STEPS: usize = 400;

/// Smallest accepted step count.
pub const MIN_STEPS: usize = 16;

/// Default Richardson warning threshold.
pub const DEFAULT_RICHARDSON_TOL: f64 = 1e-8;

/// Classical fourth-order Runge-Kutta with `steps` equal steps from `a` to
/// `b`. `rhs(t, y, dy)` writes the derivative; `observe(t, y)` sees the
/// initial state and the state after every step.
pub fn rk4<F, O>(a: f64, b: f64, steps: usize, y0: &[f64], mut rhs: F, mut observe: O) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]),
{
    let dim = y0.len();
    let mut y = y0.to_vec();
    observe(a, &y);
    if a == b || steps == 0 {
        return Ok(y);
    }
    let h = (b - a) / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    for s in 0..steps {
        let t = a + h * s as f64;
        rhs(t, &y, &mut k1)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        // land exactly on b
        let t_next = if s + 1 == steps { b } else { a + h * (s + 1) as f64 };
        rhs(t_next, &tmp, &mut k4)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: t_next });
        }
        observe(t_next, &y);
    }
    Ok(y)
}

pub(crate) fn check_steps(steps: usize) -> Result<()> {
    if steps < MIN_STEPS {
        return Err(Error::Invalid(format!("step count {steps} below the minimum {MIN_STEPS}")));
    }
    Ok(())
}

/// Step-doubling error estimate for a fixed-step result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub steps: usize,
    /// Estimated max-norm error of the `steps` result.
    pub estimate: f64,
    pub tolerance: f64,
}

impl ErrorEstimate {
    pub fn exceeded(&self) -> bool {
        !(self.estimate <= self.tolerance)
    }
}

/// Runs `run` with `steps` and `2·steps` and estimates the error of the
/// first result as `16/15 · |y_N − y_2N|` (fourth order). Logs a warning when
/// the estimate exceeds `tolerance`.
pub fn richardson<F>(steps: usize, tolerance: f64, run: F) -> Result<(Vec<f64>, ErrorEstimate)>
where
    F: Fn(usize) -> Result<Vec<f64>>,
{
    let coarse = run(steps)?;
    let fine = run(2 * steps)?;
    let estimate = 16.0 / 15.0 * max_abs_diff(&coarse, &fine);
    let e = ErrorEstimate { steps, estimate, tolerance };
    if e.exceeded() {
        warn!("integration error estimate {estimate:.3e} exceeds {tolerance:.1e} at {steps} steps");
    }
    Ok((coarse, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourth_order_on_exponential() {
        let solve = |n: usize| {
            rk4(
                0.0,
                1.0,
                n,
                &[1.0],
                |_, y, dy| {
                    dy[0] = y[0];
                    Ok(())
                },
                |_, _| {},
            )
            .unwrap()[0]
        };
        let e1 = (solve(20) - 1f64.exp()).abs();
        let e2 = (solve(40) - 1f64.exp()).abs();
        let ratio = e1 / e2;
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn observes_every_step() {
        let mut ts = Vec::new();
        rk4(
            0.0,
            1.0,
            4,
            &[0.0],
            |_, _, dy| {
                dy[0] = 1.0;
                Ok(())
            },
            |t, _| ts.push(t),
        )
        .unwrap();
        assert_eq!(ts, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn blow_up_is_reported() {
        let r = rk4(
            0.0,
            2.0,
            16,
            &[1.0],
            |_, y, dy| {
                dy[0] = y[0] * y[0] * 1e300;
                Ok(())
            },
            |_, _| {},
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn richardson_flags_coarse_runs() {
        let run = |n: usize| {
            rk4(
                0.0,
                3.0,
                n,
                &[1.0],
                |_, y, dy| {
                    dy[0] = y[0];
                    Ok(())
                },
                |_, _| {},
            )
        };
        let (_, e) = richardson(16, 1e-8, run).unwrap();
        assert!(e.exceeded());
        let (_, e) = richardson(4000, 1e-8, run).unwrap();
        assert!(!e.exceeded(), "{e:?}");
    }
}
