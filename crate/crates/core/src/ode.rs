//! Embedded Dormand-Prince 5(4) integrator for complex linear systems.
//!
//! The state is a flat `[C64]` buffer so that density matrices, stacks of
//! conditional components and scalar accumulators can share one step
//! controller.

use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step, in seconds.
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-14,
            max_step: None,
            max_steps: 2_000_000,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            ..Self::default()
        }
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = Some(match self.max_step {
            Some(prev) => prev.min(h),
            None => h,
        });
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t1` in place.
///
/// `t1 < t0` integrates backwards. `after_step` runs on every accepted
/// state (used for re-symmetrisation).
pub fn integrate<F, P>(
    y: &mut [C64],
    t0: f64,
    t1: f64,
    opts: &SolverOptions,
    mut rhs: F,
    mut after_step: P,
) -> Result<Stats>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    P: FnMut(&mut [C64]),
{
    let mut stats = Stats::default();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(stats);
    }
    let dir = span.signum();
    let n = y.len();
    let mut k1 = vec![C64::default(); n];
    let mut k2 = vec![C64::default(); n];
    let mut k3 = vec![C64::default(); n];
    let mut k4 = vec![C64::default(); n];
    let mut k5 = vec![C64::default(); n];
    let mut k6 = vec![C64::default(); n];
    let mut k7 = vec![C64::default(); n];
    let mut tmp = vec![C64::default(); n];
    let mut ynew = vec![C64::default(); n];

    let max_h = opts.max_step.unwrap_or(f64::INFINITY).min(span.abs());
    let mut t = t0;
    rhs(t, y, &mut k1);

    // initial step from the derivative scale
    let mut h = {
        let d0 = norm_scaled(y, y, opts);
        let d1 = norm_scaled(&k1, y, opts);
        let guess = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6 * span.abs()
        } else {
            0.01 * d0 / d1
        };
        guess.min(max_h).max(1e-12 * span.abs())
    };

    let min_h = 1e-14 * (t0.abs().max(t1.abs())).max(span.abs());
    let mut prev_err: f64 = 1e-4;

    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        let hs = h * dir;

        for i in 0..n {
            tmp[i] = y[i] + k1[i] * (hs * A21);
        }
        rhs(t + C2 * hs, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * hs;
        }
        rhs(t + C3 * hs, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * hs;
        }
        rhs(t + C4 * hs, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * hs;
        }
        rhs(t + C5 * hs, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * hs;
        }
        rhs(t + hs, &tmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i]
                + (k1[i] * B1 + k3[i] * B3 + k4[i] * B4 + k5[i] * B5 + k6[i] * B6) * hs;
        }
        let t_new = if last { t1 } else { t + hs };
        rhs(t_new, &ynew, &mut k7);

        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                * hs;
            let sc = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
            err = err.max(e.norm() / sc);
        }

        if err <= 1.0 {
            stats.accepted += 1;
            t = t_new;
            y.copy_from_slice(&ynew);
            after_step(y);
            // after_step may modify y, so k7 is not reused as k1
            rhs(t, y, &mut k1);
            if last {
                break;
            }
            // PI controller
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.7 / 5.0) * prev_err.powf(0.4 / 5.0)).clamp(0.2, 5.0)
            };
            prev_err = err.max(1e-4);
            h = (h * factor).min(max_h);
        } else {
            stats.rejected += 1;
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= factor;
            if h < min_h {
                return Err(Error::StepUnderflow { t, step: h });
            }
        }
    }
    Ok(stats)
}

fn norm_scaled(v: &[C64], y: &[C64], opts: &SolverOptions) -> f64 {
    v.iter()
        .zip(y)
        .map(|(a, b)| a.norm() / (opts.atol + opts.rtol * b.norm()) * opts.rtol)
        .fold(0.0, f64::max)
}
