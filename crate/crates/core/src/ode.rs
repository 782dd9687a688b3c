//! Adaptive Dormand–Prince 5(4) integrator with dense output.
//!
//! Output is sampled on a uniform grid through the 4th-order continuous
//! extension, so the step sequence is chosen by the error controller alone
//! and does not depend on the sampling interval.

use std::time::{Duration, Instant};

use crate::error::FailureKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Any state component above this magnitude (or non-finite) stops integration.
    pub state_bound: f64,
    /// Accepted+rejected step budget; exceeding it is reported as `Stiff`.
    pub max_steps: usize,
    pub wall_clock: Option<Duration>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            state_bound: 1e6,
            max_steps: 2_000_000,
            wall_clock: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeOutcome {
    /// One row per successfully produced grid sample.
    pub samples: Vec<Vec<f64>>,
    pub failure: Option<(FailureKind, f64)>,
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

/// Integrates `y' = f(t, y)` from `y0` at `t0`, producing `n_out` samples at
/// `t0 + i * dt`. Sample 0 is `y0` itself.
pub fn integrate<F>(
    mut f: F,
    y0: &[f64],
    t0: f64,
    dt: f64,
    n_out: usize,
    opts: &OdeOptions,
) -> OdeOutcome
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(n_out);
    if n_out == 0 {
        return OdeOutcome {
            samples,
            failure: None,
        };
    }
    if y0
        .iter()
        .any(|v| !v.is_finite() || v.abs() > opts.state_bound)
    {
        return OdeOutcome {
            samples,
            failure: Some((FailureKind::Diverged, t0)),
        };
    }
    samples.push(y0.to_vec());
    if n_out == 1 {
        return OdeOutcome {
            samples,
            failure: None,
        };
    }

    let t_end = t0 + (n_out - 1) as f64 * dt;
    let span = t_end - t0;
    let started = Instant::now();

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let mut rc = vec![[0.0f64; 5]; dim];

    f(t, &y, &mut k1);
    let mut h = initial_step(&mut f, t, &y, &k1, span, opts);
    let h_min = 1e-14 * span.abs().max(1.0);
    let mut next_sample = 1usize;
    let mut steps = 0usize;

    while next_sample < n_out {
        steps += 1;
        if steps > opts.max_steps || h < h_min {
            return OdeOutcome {
                samples,
                failure: Some((FailureKind::Stiff, t)),
            };
        }
        if let Some(cap) = opts.wall_clock {
            if steps.is_multiple_of(64) && started.elapsed() > cap {
                return OdeOutcome {
                    samples,
                    failure: Some((FailureKind::Timeout, t)),
                };
            }
        }
        let last = t + h >= t_end || (t_end - (t + h)) < 1e-12 * span;
        if last {
            h = t_end - t;
        }

        for i in 0..dim {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &ytmp, &mut k2);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &ytmp, &mut k3);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &ytmp, &mut k4);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &ytmp, &mut k5);
        for i in 0..dim {
            ytmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &ytmp, &mut k6);
        for i in 0..dim {
            ynew[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &ynew, &mut k7);

        let mut err = 0.0;
        let mut finite = true;
        for i in 0..dim {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sc).powi(2);
            finite &= ynew[i].is_finite() && e.is_finite();
        }
        err = (err / dim.max(1) as f64).sqrt();
        if !finite {
            // shrink hard; a genuinely exploding state is caught by the bound check
            h *= 0.1;
            continue;
        }

        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            for i in 0..dim {
                let d = ynew[i] - y[i];
                let r3 = h * k1[i] - d;
                let r4 = d - h * k7[i] - r3;
                let r5 = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                rc[i] = [y[i], d, r3, r4, r5];
            }
            while next_sample < n_out {
                let ts = t0 + next_sample as f64 * dt;
                if ts > t_new && next_sample != n_out - 1 {
                    break;
                }
                if next_sample == n_out - 1 && !last {
                    break;
                }
                let row = if next_sample == n_out - 1 {
                    ynew.clone()
                } else {
                    let th = (ts - t) / h;
                    let th1 = 1.0 - th;
                    rc.iter()
                        .map(|r| r[0] + th * (r[1] + th1 * (r[2] + th * (r[3] + th1 * r[4]))))
                        .collect()
                };
                samples.push(row);
                next_sample += 1;
            }

            if ynew.iter().any(|v| v.abs() > opts.state_bound) {
                // drop samples past the last in-bound state
                while samples.len() > 1
                    && samples
                        .last()
                        .unwrap()
                        .iter()
                        .any(|v| v.abs() > opts.state_bound)
                {
                    samples.pop();
                }
                return OdeOutcome {
                    samples,
                    failure: Some((FailureKind::Diverged, t)),
                };
            }

            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            let fac = if err == 0.0 {
                10.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
            };
            h *= fac;
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h *= fac;
        }
    }

    OdeOutcome {
        samples,
        failure: None,
    }
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], span: f64, opts: &OdeOptions) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / dim.max(1) as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span.abs());
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; dim];
    f(t + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = rms(&diff);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span.abs()).max(1e-12)
}
