//! Weighted, FFT-augmented ensemble least squares (§2.2.2–2.2.4).
//!
//! Design matrices are passed column-wise: `theta[i]` is the time-series of
//! the i-th active functional.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, median, norm2, DEFAULT_RANK_TOL};
use crate::spectral::HalfFft;

const EPS_ABS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FftMode {
    /// Real and imaginary parts of every half-spectrum bin.
    Complex,
    /// Real parts only.
    Real,
    /// Complex rows weighted by the target's relative bin magnitude.
    Magnitude,
    /// Complex rows weighted by the target's relative bin power.
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionConfig {
    pub n_subsets: usize,
    pub subset_fraction: f64,
    pub fft_mode: FftMode,
    pub fft_block_scale: f64,
    pub ratio_threshold: f64,
    pub seed: u64,
    pub rank_tol: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            n_subsets: 17,
            subset_fraction: 0.7,
            fft_mode: FftMode::Power,
            fft_block_scale: 1.0,
            ratio_threshold: 30.0,
            seed: 0,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subsets == 0 {
            return Err(Error::InvalidArgument(
                "n_subsets must be at least 1".into(),
            ));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "subset_fraction must lie in (0, 1], got {}",
                self.subset_fraction
            )));
        }
        if !(self.fft_block_scale >= 0.0) || !(self.ratio_threshold > 0.0) {
            return Err(Error::InvalidArgument(
                "fft_block_scale and ratio_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `n_subsets` sorted index sets of size `round(fraction * n)`, drawn
/// without replacement.
pub fn select_subsets(
    n_timepoints: usize,
    n_active: usize,
    cfg: &RegressionConfig,
) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let size = ((cfg.subset_fraction * n_timepoints as f64).round() as usize).min(n_timepoints);
    if size < n_active + 2 {
        return Err(Error::SubsetTooSmall { size, n_active });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.n_subsets)
        .map(|_| {
            if size == n_timepoints {
                (0..n_timepoints).collect()
            } else {
                let mut idx = sample(&mut rng, n_timepoints, size).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect())
}

/// `true` where a timepoint is kept: the ratio of largest to smallest
/// absolute functional value stays within `threshold`.
pub fn exclude_extreme_ratio(theta: &[Vec<f64>], threshold: f64) -> Vec<bool> {
    let n = theta.first().map_or(0, Vec::len);
    if theta.len() <= 1 {
        return vec![true; n];
    }
    (0..n)
        .map(|t| {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for col in theta {
                let v = col[t].abs();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            hi / lo.max(EPS_ABS) <= threshold
        })
        .collect()
}

/// Weighted least squares on `[A; B]`, with `A` the √w-weighted rows at
/// included timepoints and `B` the spectral rows of the masked, √w-weighted
/// series, scaled so that `‖B ẋ‖ = fft_block_scale · ‖A ẋ‖`.
///
/// The half spectrum is weighted per bin so that, in complex mode with an
/// unweighted target, `B` is an exact isometry of the time-domain rows.
pub fn fit_coefficients(
    theta: &[Vec<f64>],
    dxdt: &[f64],
    weights: &[f64],
    mask: &[bool],
    cfg: &RegressionConfig,
) -> Result<Vec<f64>> {
    let fft = HalfFft::new(dxdt.len());
    fit_with_plan(theta, dxdt, weights, mask, cfg, &fft)
}

fn fit_with_plan(
    theta: &[Vec<f64>],
    dxdt: &[f64],
    weights: &[f64],
    mask: &[bool],
    cfg: &RegressionConfig,
    fft: &HalfFft,
) -> Result<Vec<f64>> {
    let n = dxdt.len();
    if weights.len() != n || mask.len() != n || theta.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(
            "regression inputs differ in length".into(),
        ));
    }
    let p = theta.len();
    if p == 0 {
        return Ok(vec![]);
    }
    let rows: Vec<usize> = (0..n).filter(|&t| mask[t]).collect();
    if rows.len() < p {
        return Err(Error::SubsetTooSmall {
            size: rows.len(),
            n_active: p,
        });
    }
    let sw: Vec<f64> = (0..n)
        .map(|t| {
            if mask[t] {
                weights[t].max(0.0).sqrt()
            } else {
                0.0
            }
        })
        .collect();

    let mut cols: Vec<Vec<f64>> = theta
        .iter()
        .map(|c| rows.iter().map(|&t| sw[t] * c[t]).collect())
        .collect();
    let mut target: Vec<f64> = rows.iter().map(|&t| sw[t] * dxdt[t]).collect();

    if cfg.fft_block_scale > 0.0 {
        let masked = |c: &[f64]| -> Vec<f64> { c.iter().zip(&sw).map(|(v, s)| v * s).collect() };
        let tspec = fft.transform(&masked(dxdt));
        let bin_w: Vec<f64> = match cfg.fft_mode {
            FftMode::Complex | FftMode::Real => {
                (0..tspec.len()).map(|k| fft.bin_weight(k)).collect()
            }
            FftMode::Magnitude | FftMode::Power => {
                let power = if cfg.fft_mode == FftMode::Power { 2 } else { 1 };
                let mags: Vec<f64> = tspec.iter().map(|c| c.norm()).collect();
                let top = mags.iter().cloned().fold(0.0, f64::max);
                mags.iter()
                    .enumerate()
                    .map(|(k, m)| {
                        let rel = if top > 0.0 { m / top } else { 0.0 };
                        fft.bin_weight(k) * rel.powi(power)
                    })
                    .collect()
            }
        };
        let with_imag = cfg.fft_mode != FftMode::Real;
        let expand = |spec: &[rustfft::num_complex::Complex<f64>]| -> Vec<f64> {
            let mut out: Vec<f64> = spec.iter().zip(&bin_w).map(|(c, w)| w * c.re).collect();
            if with_imag {
                out.extend(spec.iter().zip(&bin_w).map(|(c, w)| w * c.im));
            }
            out
        };
        let b_cols: Vec<Vec<f64>> = theta
            .iter()
            .map(|c| expand(&fft.transform(&masked(c))))
            .collect();
        let b_target = expand(&tspec);

        // Scaled on the target side so the relative block weight does not
        // change when a functional column is rescaled.
        let a_norm = norm2(&target);
        let b_norm = norm2(&b_target);
        if b_norm > 0.0 && a_norm > 0.0 {
            let s = cfg.fft_block_scale * a_norm / b_norm;
            for (col, b) in cols.iter_mut().zip(b_cols) {
                col.extend(b.into_iter().map(|v| v * s));
            }
            target.extend(b_target.into_iter().map(|v| v * s));
        }
    }

    if cols.iter().any(|c| norm2(c) == 0.0) {
        return Err(Error::RankDeficient {
            rank: p - 1,
            n_cols: p,
        });
    }
    lstsq(&cols, &target, cfg.rank_tol)
}

/// Per-subset coefficient draws and their column-wise median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEnsemble {
    /// `[subset][active term]`, successful subsets only.
    pub draws: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    /// Union of the timepoints that entered at least one successful fit.
    pub fit_timepoints: Vec<usize>,
}

/// Column-wise median of a set of draws.
pub fn median_of_draws(draws: &[Vec<f64>]) -> Vec<f64> {
    let p = draws.first().map_or(0, Vec::len);
    (0..p)
        .map(|i| median(&draws.iter().map(|d| d[i]).collect::<Vec<_>>()))
        .collect()
}

/// Ratio exclusion as applied inside the ensemble: columns are first
/// normalized by their median magnitude so the ratio compares functionals on
/// a common scale, and exclusion is skipped for a subset when it would leave
/// too few rows to fit.
fn subset_mask(norm_theta: &[Vec<f64>], subset: &[usize], n: usize, threshold: f64) -> Vec<bool> {
    let p = norm_theta.len();
    let sub_cols: Vec<Vec<f64>> = norm_theta
        .iter()
        .map(|c| subset.iter().map(|&t| c[t]).collect())
        .collect();
    let keep = exclude_extreme_ratio(&sub_cols, threshold);
    let kept = keep.iter().filter(|k| **k).count();
    let min_rows = (subset.len() / 4).max(p + 2);
    let mut mask = vec![false; n];
    for (k, &t) in subset.iter().enumerate() {
        mask[t] = kept < min_rows || keep[k];
    }
    mask
}

pub fn ensemble_fit(
    theta: &[Vec<f64>],
    dxdt: &[f64],
    weights: &[f64],
    cfg: &RegressionConfig,
) -> Result<CoefficientEnsemble> {
    let n = dxdt.len();
    let p = theta.len();
    let subsets = select_subsets(n, p, cfg)?;
    let norm_theta: Vec<Vec<f64>> = theta
        .iter()
        .map(|c| {
            let m = median(&c.iter().map(|v| v.abs()).collect::<Vec<_>>());
            let m = if m > 0.0 { m } else { f64::MIN_POSITIVE };
            c.iter().map(|v| v / m).collect()
        })
        .collect();
    let fft = HalfFft::new(n);
    let results: Vec<(Result<Vec<f64>>, Vec<bool>)> = subsets
        .par_iter()
        .map(|s| {
            let mask = subset_mask(&norm_theta, s, n, cfg.ratio_threshold);
            (fit_with_plan(theta, dxdt, weights, &mask, cfg, &fft), mask)
        })
        .collect();
    let mut draws = Vec::new();
    let mut first_err = None;
    let mut used = vec![false; n];
    for (r, mask) in results {
        match r {
            Ok(c) if c.iter().all(|v| v.is_finite()) => {
                used.iter_mut().zip(&mask).for_each(|(u, m)| *u |= *m);
                draws.push(c);
            }
            Ok(_) => {
                first_err.get_or_insert(Error::RankDeficient { rank: 0, n_cols: p });
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if draws.is_empty() || 2 * draws.len() <= cfg.n_subsets.saturating_sub(1) {
        return Err(first_err.unwrap_or(Error::RankDeficient { rank: 0, n_cols: p }));
    }
    let median = median_of_draws(&draws);
    let fit_timepoints = (0..n).filter(|&t| used[t]).collect();
    Ok(CoefficientEnsemble {
        draws,
        median,
        fit_timepoints,
    })
}
