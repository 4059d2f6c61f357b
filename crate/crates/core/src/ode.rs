//! Dormand–Prince 5(4) with PI step-size control for small fixed-size systems.

use crate::error::{numeric, Result};

#[derive(Debug, Clone, Copy)]
pub struct DopriOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for DopriOptions {
    fn default() -> Self {
        DopriOptions {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 1e-3,
            h_min: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

/// What the step callback asks the driver to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Reached `t_end`.
    Finished,
    /// The callback returned `Stop`.
    Stopped,
    /// Step size fell below `h_min`.
    Underflow,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate y′ = f(t, y) from `t0` towards `t_end` (either direction).
/// `h_max(t)` caps |h|; `on_step(t, y)` sees every accepted step, including the start.
#[allow(clippy::type_complexity)]
pub fn dopri5<const N: usize>(
    f: &mut dyn FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &DopriOptions,
    h_max: &dyn Fn(f64) -> f64,
    on_step: &mut dyn FnMut(f64, &[f64; N]) -> Control,
) -> Result<Outcome> {
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut h = opts.h_init.min(h_max(t)).min((t_end - t0).abs());
    if on_step(t, &y) == Control::Stop {
        return Ok(Outcome::Stopped);
    }
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y)?;
    let mut err_prev: f64 = 1e-4;
    for _ in 0..opts.max_steps {
        if (t_end - t) * dir <= 0.0 {
            return Ok(Outcome::Finished);
        }
        h = h.min(h_max(t)).min((t_end - t).abs());
        if h < opts.h_min {
            return Ok(Outcome::Underflow);
        }
        let hs = h * dir;
        for st in 1..7 {
            let mut ys = y;
            for (i, v) in ys.iter_mut().enumerate() {
                for j in 0..st {
                    *v += hs * A[st][j] * k[j][i];
                }
            }
            k[st] = f(t + C[st] * hs, &ys)?;
        }
        let mut y_new = y;
        for (i, v) in y_new.iter_mut().enumerate() {
            for j in 0..6 {
                *v += hs * A[6][j] * k[j][i];
            }
        }
        let mut err: f64 = 0.0;
        for i in 0..N {
            let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * hs;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            h *= 0.25;
            continue;
        }
        if err <= 1.0 {
            t += hs;
            y = y_new;
            // FSAL: the last stage is f(t_new, y_new)
            k[0] = k[6];
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h *= fac.clamp(0.2, 5.0);
            err_prev = err.max(1e-4);
            if on_step(t, &y) == Control::Stop {
                return Ok(Outcome::Stopped);
            }
        } else {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
    }
    numeric(format!("dopri5: step budget of {} exhausted", opts.max_steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_both_directions() {
        let opts = DopriOptions {
            rtol: 1e-12,
            atol: 1e-14,
            ..Default::default()
        };
        let mut last = (0.0, 0.0);
        let out = dopri5::<1>(
            &mut |_, y| Ok([-y[0]]),
            0.0,
            [1.0],
            3.0,
            &opts,
            &|_| 1.0,
            &mut |t, y| {
                last = (t, y[0]);
                Control::Continue
            },
        )
        .unwrap();
        assert_eq!(out, Outcome::Finished);
        assert!((last.0 - 3.0).abs() < 1e-14);
        assert!((last.1 - (-3f64).exp()).abs() < 1e-11);

        let out = dopri5::<1>(
            &mut |_, y| Ok([-y[0]]),
            3.0,
            [(-3f64).exp()],
            0.0,
            &opts,
            &|_| 1.0,
            &mut |t, y| {
                last = (t, y[0]);
                Control::Continue
            },
        )
        .unwrap();
        assert_eq!(out, Outcome::Finished);
        assert!((last.1 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn oscillator_keeps_energy() {
        let opts = DopriOptions {
            rtol: 1e-11,
            atol: 1e-13,
            ..Default::default()
        };
        let mut y_end = [0.0; 2];
        dopri5::<2>(
            &mut |_, y| Ok([y[1], -y[0]]),
            0.0,
            [1.0, 0.0],
            10.0,
            &opts,
            &|_| 0.5,
            &mut |_, y| {
                y_end = *y;
                Control::Continue
            },
        )
        .unwrap();
        assert!((y_end[0] - 10f64.cos()).abs() < 1e-9);
    }
}
