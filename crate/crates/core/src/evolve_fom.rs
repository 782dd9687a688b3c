//! Model evolution from estimated initial conditions and the six
//! evolution-based figures of merit (§2.3.1–2.3.2).

use std::time::Duration;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynsys::Trajectory;
use crate::error::{Error, FailureKind, Result};
use crate::linalg::{pearson, std_dev};
use crate::model::SparseModel;
use crate::ode::{integrate, OdeOptions};
use crate::preprocess::{rolling_std, WeightVector};
use crate::spectral::centered_power_spectrum;

pub const HIST_BINS: usize = 50;
pub const ENVELOPE_FACTOR: f64 = 2.0;
pub const BOUNDS_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionLimits {
    pub state_bound: f64,
    pub wall_clock_cap_s: f64,
    /// Step budget; running out is reported as `stiff`.
    pub max_steps: usize,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for EvolutionLimits {
    fn default() -> Self {
        Self {
            state_bound: 1e6,
            wall_clock_cap_s: 10.0,
            max_steps: 50_000,
            rtol: 1e-7,
            atol: 1e-7,
        }
    }
}

impl EvolutionLimits {
    fn ode_options(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.atol,
            state_bound: self.state_bound,
            max_steps: self.max_steps,
            wall_clock: (self.wall_clock_cap_s > 0.0)
                .then(|| Duration::from_secs_f64(self.wall_clock_cap_s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub limits: EvolutionLimits,
    /// Points averaged for each initial-condition estimate.
    pub ic_points: usize,
    /// Evolutions per stability estimate (offsets 0, 2, 4, ...); 1 skips it.
    pub n_repeats: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            limits: EvolutionLimits::default(),
            ic_points: 5,
            n_repeats: 3,
        }
    }
}

/// The six figures of merit for one (model, trajectory) pair. When the
/// evolution fails every per-variable list is empty and `stability` is
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomSuite {
    pub evolution_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
    pub stability: Option<f64>,
    pub in_bounds_frac: Vec<f64>,
    pub in_envelope_frac: Vec<f64>,
    pub std_rel_err: Vec<f64>,
    pub fft_power_corr: Vec<f64>,
    pub hist_corr: Vec<f64>,
}

impl FomSuite {
    pub fn failed(kind: FailureKind) -> Self {
        Self {
            evolution_ok: false,
            failure: Some(kind),
            stability: None,
            in_bounds_frac: vec![],
            in_envelope_frac: vec![],
            std_rel_err: vec![],
            fft_power_corr: vec![],
            hist_corr: vec![],
        }
    }

    /// Per-variable `in_envelope + hist_corr + fft_corr − |std_rel_err|`,
    /// averaged over variables. `None` for a failed evolution.
    pub fn score(&self) -> Option<f64> {
        if !self.evolution_ok || self.in_envelope_frac.is_empty() {
            return None;
        }
        let d = self.in_envelope_frac.len();
        let s: f64 = (0..d)
            .map(|j| {
                self.in_envelope_frac[j] + self.hist_corr[j] + self.fft_power_corr[j]
                    - self.std_rel_err[j].abs()
            })
            .sum();
        Some(s / d as f64)
    }
}

/// Weighted mean of `k` noisy samples starting at `offset`, per variable.
/// All-zero weights fall back to the plain mean.
pub fn initial_condition_at(
    values: &DMatrix<f64>,
    weights: &WeightVector,
    k: usize,
    offset: usize,
) -> Result<Vec<f64>> {
    let n = values.nrows();
    if k == 0 || offset + k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot average {k} points from offset {offset} of {n}"
        )));
    }
    Ok((0..values.ncols())
        .map(|j| {
            let w = &weights.weights[j][offset..offset + k];
            let wsum: f64 = w.iter().sum();
            let vals = (offset..offset + k).map(|t| values[(t, j)]);
            if wsum > 0.0 {
                vals.zip(w).map(|(v, wi)| v * wi).sum::<f64>() / wsum
            } else {
                vals.sum::<f64>() / k as f64
            }
        })
        .collect())
}

pub fn initial_condition_estimate(
    traj: &Trajectory,
    weights: &WeightVector,
    k: usize,
) -> Result<Vec<f64>> {
    initial_condition_at(&traj.values, weights, k, 0)
}

/// Result of one evolution: the samples produced (possibly fewer than
/// requested) and the reason for stopping early.
#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub values: DMatrix<f64>,
    pub failure: Option<FailureKind>,
}

pub fn evolve_partial(
    model: &SparseModel,
    ic: &[f64],
    dt: f64,
    n: usize,
    limits: &EvolutionLimits,
) -> Evolution {
    if !model.is_finite() {
        return Evolution {
            values: DMatrix::zeros(0, ic.len()),
            failure: Some(FailureKind::Diverged),
        };
    }
    let rhs = model.rhs();
    let out = integrate(
        |_, y, dy| rhs.eval(y, dy),
        ic,
        0.0,
        dt,
        n,
        &limits.ode_options(),
    );
    let rows = out.samples.len();
    Evolution {
        values: DMatrix::from_fn(rows, ic.len(), |t, j| out.samples[t][j]),
        failure: out.failure.map(|(k, _)| k),
    }
}

/// Evolves `model` from `ic` over `n` samples spaced `dt`.
pub fn evolve_model(
    model: &SparseModel,
    ic: &[f64],
    dt: f64,
    n: usize,
    limits: &EvolutionLimits,
) -> Result<DMatrix<f64>> {
    let e = evolve_partial(model, ic, dt, n, limits);
    match e.failure {
        None => Ok(e.values),
        Some(kind) => Err(Error::EvolutionFailed {
            kind,
            last_index: e.values.nrows().saturating_sub(1),
        }),
    }
}

/// Everything about a reference trajectory that FoMs compare against.
#[derive(Debug, Clone)]
pub struct Reference {
    pub dt: f64,
    pub noisy: DMatrix<f64>,
    pub smoothed: DMatrix<f64>,
    pub weights: WeightVector,
    /// Rolling std of `noisy − smoothed`, per timepoint and variable.
    pub noise_std_local: DMatrix<f64>,
}

impl Reference {
    pub fn new(
        noisy: &Trajectory,
        smoothed: &Trajectory,
        weights: WeightVector,
        window_len: usize,
    ) -> Self {
        let n = noisy.n_timepoints();
        let d = noisy.dim();
        let mut local = DMatrix::zeros(n, d);
        for j in 0..d {
            let resid: Vec<f64> = (0..n)
                .map(|t| noisy.values[(t, j)] - smoothed.values[(t, j)])
                .collect();
            for (t, v) in rolling_std(&resid, window_len).into_iter().enumerate() {
                local[(t, j)] = v;
            }
        }
        Self {
            dt: noisy.dt,
            noisy: noisy.values.clone(),
            smoothed: smoothed.values.clone(),
            weights,
            noise_std_local: local,
        }
    }

    pub fn n(&self) -> usize {
        self.noisy.nrows()
    }
}

fn col(m: &DMatrix<f64>, j: usize, from: usize) -> Vec<f64> {
    m.column(j).iter().skip(from).copied().collect()
}

fn histogram(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; HIST_BINS];
    let width = (hi - lo) / HIST_BINS as f64;
    for &v in x {
        let b = if width > 0.0 {
            ((v - lo) / width).floor() as isize
        } else {
            0
        };
        h[b.clamp(0, HIST_BINS as isize - 1) as usize] += 1.0;
    }
    h
}

/// Correlation of 50-bin histograms over the joint value range.
pub fn histogram_correlation(a: &[f64], b: &[f64]) -> f64 {
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    pearson(&histogram(a, lo, hi), &histogram(b, lo, hi))
}

/// FoMs 2–6 for a prediction aligned with rows `start..` of the references.
pub fn compute_foms(
    pred: &DMatrix<f64>,
    noisy_ref: &DMatrix<f64>,
    smoothed_ref: &DMatrix<f64>,
    noise_std_local: &DMatrix<f64>,
    start: usize,
) -> FomSuite {
    let d = pred.ncols();
    let mut s = FomSuite {
        evolution_ok: true,
        failure: None,
        stability: None,
        in_bounds_frac: Vec::with_capacity(d),
        in_envelope_frac: Vec::with_capacity(d),
        std_rel_err: Vec::with_capacity(d),
        fft_power_corr: Vec::with_capacity(d),
        hist_corr: Vec::with_capacity(d),
    };
    for j in 0..d {
        let p: Vec<f64> = pred.column(j).iter().copied().collect();
        let m = p.len() as f64;
        let noisy_j = noisy_ref.column(j);
        let lo = noisy_j.min();
        let hi = noisy_j.max();
        let margin = BOUNDS_MARGIN * (hi - lo);
        let inb = p
            .iter()
            .filter(|v| **v >= lo - margin && **v <= hi + margin)
            .count();
        s.in_bounds_frac.push(inb as f64 / m);

        let sm = col(smoothed_ref, j, start);
        let ns = col(noise_std_local, j, start);
        let inenv = p
            .iter()
            .zip(&sm)
            .zip(&ns)
            .filter(|((v, r), e)| (*v - *r).abs() <= ENVELOPE_FACTOR * **e)
            .count();
        s.in_envelope_frac.push(inenv as f64 / m);

        let sr = std_dev(&sm);
        let sp = std_dev(&p);
        s.std_rel_err.push(if sr > 0.0 {
            (sp - sr) / sr
        } else if sp == 0.0 {
            0.0
        } else {
            f64::MAX
        });

        s.fft_power_corr.push(pearson(
            &centered_power_spectrum(&p),
            &centered_power_spectrum(&sm),
        ));
        s.hist_corr.push(histogram_correlation(&p, &sm));
    }
    s
}

/// Index where an evolution whose IC averages `k` points from `offset`
/// begins: the middle of the averaged neighbourhood.
pub fn evolution_start(offset: usize, k: usize) -> usize {
    offset + (k.max(1) - 1) / 2
}

/// Evolves `model` against `reference` and computes all six FoMs.
///
/// Stability launches `n_repeats` evolutions from neighbourhoods offset by
/// 0, 2, 4, ... samples and reports the largest pairwise RMS deviation over
/// the common grid, relative to σ of the smoothed reference.
pub fn evaluate_model(
    model: &SparseModel,
    reference: &Reference,
    cfg: &EvolutionConfig,
) -> FomSuite {
    let n = reference.n();
    let k = cfg.ic_points.max(1).min(n);
    let run = |offset: usize| -> std::result::Result<(usize, DMatrix<f64>), FailureKind> {
        let ic = initial_condition_at(&reference.noisy, &reference.weights, k, offset)
            .map_err(|_| FailureKind::Diverged)?;
        let start = evolution_start(offset, k);
        let e = evolve_partial(model, &ic, reference.dt, n - start, &cfg.limits);
        match e.failure {
            None => Ok((start, e.values)),
            Some(kind) => Err(kind),
        }
    };
    let (start, pred) = match run(0) {
        Ok(v) => v,
        Err(kind) => return FomSuite::failed(kind),
    };
    let mut suite = compute_foms(
        &pred,
        &reference.noisy,
        &reference.smoothed,
        &reference.noise_std_local,
        start,
    );

    let repeats = cfg.n_repeats.max(1);
    if repeats == 1 {
        suite.stability = Some(0.0);
        return suite;
    }
    let mut runs = vec![(start, pred)];
    for r in 1..repeats {
        let offset = 2 * r;
        if evolution_start(offset, k) >= n.saturating_sub(2) || offset + k > n {
            break;
        }
        match run(offset) {
            Ok(v) => runs.push(v),
            Err(kind) => return FomSuite::failed(kind),
        }
    }
    suite.stability = Some(stability(&runs, &reference.smoothed));
    suite
}

/// Largest pairwise RMS deviation between evolutions over their common
/// grid, divided by σ of the smoothed reference, maximized over variables.
pub fn stability(runs: &[(usize, DMatrix<f64>)], smoothed_ref: &DMatrix<f64>) -> f64 {
    let n_total = smoothed_ref.nrows();
    let common = runs.iter().map(|(s, _)| *s).max().unwrap_or(0);
    let mut worst = 0.0f64;
    for j in 0..smoothed_ref.ncols() {
        let sigma = std_dev(&col(smoothed_ref, j, 0));
        let sigma = if sigma > 0.0 { sigma } else { 1.0 };
        for a in 0..runs.len() {
            for b in a + 1..runs.len() {
                let (sa, ma) = &runs[a];
                let (sb, mb) = &runs[b];
                let mut acc = 0.0;
                let mut cnt = 0usize;
                for t in common..n_total {
                    let (ia, ib) = (t - sa, t - sb);
                    if ia < ma.nrows() && ib < mb.nrows() {
                        acc += (ma[(ia, j)] - mb[(ib, j)]).powi(2);
                        cnt += 1;
                    }
                }
                if cnt > 0 {
                    worst = worst.max((acc / cnt as f64).sqrt() / sigma);
                }
            }
        }
    }
    worst
}
