//! Smoothing, derivative estimation and noise-based timepoint weights.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynsys::Trajectory;
use crate::error::{Error, Result};

const Z_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub window_len: usize,
}

impl SmoothingConfig {
    /// A 200 ms window, forced odd.
    pub fn default_for_dt(dt: f64) -> Self {
        let mut l = (0.2 / dt).round().max(1.0) as usize;
        if l.is_multiple_of(2) {
            l += 1;
        }
        Self { window_len: l }
    }
}

/// Unit-sum Hamming window of length `len`.
pub fn hamming_window(len: usize) -> Vec<f64> {
    if len <= 1 {
        return vec![1.0; len.max(1)];
    }
    let w: Vec<f64> = (0..len)
        .map(|k| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / (len - 1) as f64).cos())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Reflect-mode index (`x[-1] = x[1]`) for padding.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Centered convolution with reflection padding; output length = input length.
pub fn convolve_reflect(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = x.len();
    let half = (kernel.len() / 2) as isize;
    (0..n)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * x[reflect(t as isize + k as isize - half, n)])
                .sum()
        })
        .collect()
}

pub fn smooth(traj: &Trajectory, cfg: &SmoothingConfig) -> Result<Trajectory> {
    let n = traj.n_timepoints();
    if cfg.window_len == 0 || cfg.window_len.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "window length must be odd and positive, got {}",
            cfg.window_len
        )));
    }
    if cfg.window_len > n {
        return Err(Error::WindowTooLong {
            window_len: cfg.window_len,
            n,
        });
    }
    let kernel = hamming_window(cfg.window_len);
    let mut values = traj.values.clone();
    for j in 0..traj.dim() {
        let out = convolve_reflect(&traj.column(j), &kernel);
        values.set_column(j, &nalgebra::DVector::from_vec(out));
    }
    Ok(traj.with_values(values))
}

/// 4th-order central differences inside, 2nd-order one-sided at the two
/// points nearest each edge.
pub fn derivative_series(x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 5, "derivative stencil needs at least 5 points");
    let mut d = vec![0.0; n];
    for t in 2..n - 2 {
        d[t] = (-x[t + 2] + 8.0 * x[t + 1] - 8.0 * x[t - 1] + x[t - 2]) / (12.0 * h);
    }
    for t in 0..2 {
        d[t] = (-3.0 * x[t] + 4.0 * x[t + 1] - x[t + 2]) / (2.0 * h);
    }
    for t in n - 2..n {
        d[t] = (3.0 * x[t] - 4.0 * x[t - 1] + x[t - 2]) / (2.0 * h);
    }
    d
}

pub fn estimate_derivatives(traj: &Trajectory) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(traj.n_timepoints(), traj.dim());
    for j in 0..traj.dim() {
        let d = derivative_series(&traj.column(j), traj.dt);
        out.set_column(j, &nalgebra::DVector::from_vec(d));
    }
    out
}

/// Per-variable, per-timepoint weights `w[j][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<Vec<f64>>,
}

impl WeightVector {
    pub fn uniform(dim: usize, n: usize) -> Self {
        Self {
            weights: vec![vec![1.0; n]; dim],
        }
    }

    pub fn variable(&self, j: usize) -> &[f64] {
        &self.weights[j]
    }
}

/// Weight for the centre of one window: residual z-score against a fitted
/// line, mapped through `ln(1/max(z, floor) + 1)`.
fn window_weight(y: &[f64], center: usize) -> f64 {
    let m = y.len() as f64;
    let s_mean = (y.len() - 1) as f64 / 2.0;
    let y_mean = y.iter().sum::<f64>() / m;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, v) in y.iter().enumerate() {
        let ds = i as f64 - s_mean;
        sxy += ds * (v - y_mean);
        sxx += ds * ds;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let resid: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, v)| v - y_mean - slope * (i as f64 - s_mean))
        .collect();
    let r_mean = resid.iter().sum::<f64>() / m;
    let r_std = (resid.iter().map(|r| (r - r_mean).powi(2)).sum::<f64>() / m).sqrt();
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let z = if r_std <= 1e-9 * scale + f64::MIN_POSITIVE {
        0.0
    } else {
        (resid[center] - r_mean).abs() / r_std
    };
    (1.0 / z.max(Z_FLOOR) + 1.0).ln()
}

/// Noise-based weights from local linear detrending of the noisy series.
///
/// The detrended residual's z-score is unchanged by the rotation the paper
/// describes (it scales all residuals equally), so only the line fit is
/// applied.
pub fn timepoint_weights(noisy: &Trajectory, halfwidth: usize) -> Result<WeightVector> {
    if halfwidth < 2 {
        return Err(Error::InvalidArgument(format!(
            "halfwidth must be at least 2, got {halfwidth}"
        )));
    }
    let n = noisy.n_timepoints();
    let weights = (0..noisy.dim())
        .map(|j| {
            let x = noisy.column(j);
            (0..n)
                .map(|t| {
                    let lo = t.saturating_sub(halfwidth);
                    let hi = (t + halfwidth).min(n - 1);
                    window_weight(&x[lo..=hi], t - lo)
                })
                .collect()
        })
        .collect();
    Ok(WeightVector { weights })
}

/// The cap `ln(1/z_floor + 1)` assigned to perfectly predictable points.
pub fn max_weight() -> f64 {
    (1.0 / Z_FLOOR + 1.0).ln()
}

/// Weight of a derivative estimate: mean of the weights at `t±1, t±2`.
pub fn derivative_weights(w: &WeightVector) -> WeightVector {
    let weights = w
        .weights
        .iter()
        .map(|wj| {
            let n = wj.len();
            (0..n)
                .map(|t| {
                    let mut s = 0.0;
                    let mut c = 0;
                    for off in [-2isize, -1, 1, 2] {
                        let u = t as isize + off;
                        if u >= 0 && (u as usize) < n {
                            s += wj[u as usize];
                            c += 1;
                        }
                    }
                    if c == 0 {
                        wj[t]
                    } else {
                        s / c as f64
                    }
                })
                .collect()
        })
        .collect();
    WeightVector { weights }
}

/// Centered rolling population standard deviation, truncated at the edges.
pub fn rolling_std(x: &[f64], window_len: usize) -> Vec<f64> {
    let n = x.len();
    let half = window_len / 2;
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            crate::linalg::std_dev(&x[lo..=hi])
        })
        .collect()
}
