//! Benchmark systems, simulation, and calibrated FFT-domain noise.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, FailureKind, Result};
use crate::library::{build_polynomial_library, FunctionalTerm};
use crate::linalg::std_dev;
use crate::model::SparseModel;
use crate::ode::{integrate, OdeOptions};

/// Uniformly sampled multivariate time-series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    /// `n_timepoints x dim`
    pub values: DMatrix<f64>,
    pub clean_ref: Option<DMatrix<f64>>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, values: DMatrix<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if values.nrows() < 5 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs at least 5 timepoints, got {}",
                values.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "trajectory contains non-finite values".into(),
            ));
        }
        Ok(Self {
            t0,
            dt,
            values,
            clean_ref: None,
        })
    }

    pub fn with_clean_ref(mut self, clean: DMatrix<f64>) -> Result<Self> {
        if clean.shape() != self.values.shape() {
            return Err(Error::InvalidArgument(
                "clean reference shape differs from values".into(),
            ));
        }
        self.clean_ref = Some(clean);
        Ok(self)
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().copied().collect()
    }

    /// Same grid, new values; the clean reference is kept.
    pub fn with_values(&self, values: DMatrix<f64>) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            values,
            clean_ref: self.clean_ref.clone(),
        }
    }

    pub fn clean(&self) -> Option<Trajectory> {
        self.clean_ref.as_ref().map(|c| Trajectory {
            t0: self.t0,
            dt: self.dt,
            values: c.clone(),
            clean_ref: Some(c.clone()),
        })
    }
}

/// Builds a `n x dim` matrix from per-variable columns.
pub fn matrix_from_columns(columns: &[Vec<f64>]) -> DMatrix<f64> {
    let n = columns.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, columns.len(), |t, j| columns[j][t])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub target_level_pct: f64,
    pub seed: u64,
    /// Hermitian-symmetrize the spectrum instead of taking the real part.
    pub hermitian: bool,
}

impl NoiseSpec {
    pub fn new(target_level_pct: f64, seed: u64) -> Self {
        Self {
            target_level_pct,
            seed,
            hermitian: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    pub dim: usize,
    pub true_model: SparseModel,
    pub default_ics: Vec<Vec<f64>>,
    pub validation_ics: Vec<Vec<f64>>,
    /// Trajectory length used in the paper, seconds.
    pub duration: f64,
    pub dt: f64,
    /// Library degree the paper fitted this system with.
    pub paper_max_degree: u32,
}

pub const SYSTEM_NAMES: [&str; 5] = ["lorenz", "linear3d", "harm_linear", "harm_cubic", "hopf2d"];

fn spec(
    name: &str,
    dim: usize,
    degree: u32,
    entries: &[(usize, &[u32], f64)],
    ics: &[&[f64]],
    val: &[&[f64]],
    duration: f64,
    paper_max_degree: u32,
) -> SystemSpec {
    let lib = build_polynomial_library(dim, degree, true).expect("registry library");
    let entries: Vec<(usize, FunctionalTerm, f64)> = entries
        .iter()
        .map(|(j, e, c)| (*j, FunctionalTerm::new(e.to_vec()), *c))
        .collect();
    SystemSpec {
        name: name.to_string(),
        dim,
        true_model: SparseModel::from_entries(lib, &entries).expect("registry model"),
        default_ics: ics.iter().map(|v| v.to_vec()).collect(),
        validation_ics: val.iter().map(|v| v.to_vec()).collect(),
        duration,
        dt: 0.002,
        paper_max_degree,
    }
}

/// Looks up a benchmark system by registry name.
pub fn system(name: &str) -> Result<SystemSpec> {
    let s = match name {
        "lorenz" => spec(
            "lorenz",
            3,
            2,
            &[
                (0, &[1, 0, 0], -10.0),
                (0, &[0, 1, 0], 10.0),
                (1, &[1, 0, 0], 28.0),
                (1, &[0, 1, 0], -1.0),
                (1, &[1, 0, 1], -1.0),
                (2, &[0, 0, 1], -2.67),
                (2, &[1, 1, 0], 1.0),
            ],
            &[&[-8.0, 8.0, 27.0], &[5.0, -7.0, 29.0], &[-2.0, 7.0, 21.0]],
            &[&[8.0, 7.0, 15.0], &[-6.0, 12.0, 25.0]],
            10.0,
            4,
        ),
        "linear3d" => spec(
            "linear3d",
            3,
            1,
            &[
                (0, &[1, 0, 0], -0.1),
                (0, &[0, 1, 0], -2.0),
                (1, &[1, 0, 0], 2.0),
                (1, &[0, 1, 0], -0.1),
                (2, &[0, 0, 1], -0.3),
            ],
            &[&[2.0, 0.0, 1.0], &[4.0, -1.0, 2.0], &[3.0, 3.0, 3.0]],
            &[&[3.0, 1.0, 1.0], &[9.0, 1.0, 3.0]],
            24.0,
            2,
        ),
        "harm_linear" => spec(
            "harm_linear",
            2,
            1,
            &[
                (0, &[1, 0], -0.1),
                (0, &[0, 1], 2.0),
                (1, &[1, 0], -2.0),
                (1, &[0, 1], -0.1),
            ],
            &[&[2.0, 0.0], &[4.0, 1.0], &[7.0, 1.0]],
            &[&[3.0, 2.0], &[6.0, 3.0]],
            28.0,
            3,
        ),
        "harm_cubic" => spec(
            "harm_cubic",
            2,
            3,
            &[
                (0, &[3, 0], -0.1),
                (0, &[0, 3], 2.0),
                (1, &[3, 0], -2.0),
                (1, &[0, 3], -0.1),
            ],
            &[&[2.0, 0.0], &[4.0, 1.0], &[7.0, 1.0]],
            &[&[3.0, 2.0], &[6.0, 3.0]],
            28.0,
            5,
        ),
        "hopf2d" => spec(
            "hopf2d",
            2,
            3,
            &[
                (0, &[1, 0], 0.2),
                (0, &[0, 1], 1.0),
                (0, &[3, 0], -1.0),
                (0, &[1, 2], -1.0),
                (1, &[1, 0], 1.0),
                (1, &[0, 1], 0.2),
                (1, &[2, 1], -1.0),
                (1, &[0, 3], -1.0),
            ],
            &[&[1.0, 0.75], &[0.9, -0.1], &[0.25, 1.0]],
            &[&[0.1, -0.75], &[0.5, -0.5]],
            16.0,
            5,
        ),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown system `{other}` (known: {})",
                SYSTEM_NAMES.join(", ")
            )))
        }
    };
    Ok(s)
}

/// Number of grid points for a run of `duration` seconds at step `dt`.
pub fn n_points(duration: f64, dt: f64) -> usize {
    (duration / dt + 1e-9).floor() as usize + 1
}

pub fn simulate(system: &SystemSpec, ic: &[f64], duration: f64, dt: f64) -> Result<Trajectory> {
    simulate_with(system, ic, duration, dt, &OdeOptions::default())
}

pub fn simulate_with(
    system: &SystemSpec,
    ic: &[f64],
    duration: f64,
    dt: f64,
    opts: &OdeOptions,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !(duration >= 5.0 * dt) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} is shorter than 5 steps"
        )));
    }
    if ic.len() != system.dim {
        return Err(Error::InvalidArgument(format!(
            "initial condition has {} components, system `{}` has {}",
            ic.len(),
            system.name,
            system.dim
        )));
    }
    let n = n_points(duration, dt);
    let rhs = system.true_model.rhs();
    let out = integrate(|_, y, dy| rhs.eval(y, dy), ic, 0.0, dt, n, opts);
    if let Some((kind, t_last)) = out.failure {
        return Err(match kind {
            FailureKind::Diverged => Error::IntegrationDiverged {
                t_last,
                bound: opts.state_bound,
            },
            _ => Error::EvolutionFailed {
                kind,
                last_index: out.samples.len(),
            },
        });
    }
    let values = DMatrix::from_fn(n, system.dim, |t, j| out.samples[t][j]);
    let traj = Trajectory::new(0.0, dt, values.clone())?;
    traj.with_clean_ref(values)
}

/// Raw noise series for one variable: inverse FFT of i.i.d. complex
/// Gaussian coefficients, real part (or Hermitian-symmetrized).
fn raw_noise(
    n: usize,
    rng: &mut ChaCha20Rng,
    hermitian: bool,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let mut spec: Vec<Complex<f64>> = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex::new(re, im)
        })
        .collect();
    if hermitian {
        spec[0].im = 0.0;
        if n.is_multiple_of(2) {
            spec[n / 2].im = 0.0;
        }
        for k in 1..n.div_ceil(2) {
            spec[n - k] = spec[k].conj();
        }
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    spec.into_iter().map(|c| c.re).collect()
}

/// Adds white noise scaled per variable so that
/// `100 * σ(noise_j) / σ(clean_j)` equals the target exactly.
pub fn add_noise(traj: &Trajectory, spec: &NoiseSpec) -> Result<Trajectory> {
    if !spec.target_level_pct.is_finite() || spec.target_level_pct < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and nonnegative, got {}",
            spec.target_level_pct
        )));
    }
    if spec.target_level_pct == 0.0 {
        return Ok(traj.clone());
    }
    let n = traj.n_timepoints();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut planner = FftPlanner::new();
    let mut values = traj.values.clone();
    for j in 0..traj.dim() {
        let clean = traj.column(j);
        let sigma_x = std_dev(&clean);
        if !(sigma_x > 0.0) {
            return Err(Error::DegenerateReference { variable: j });
        }
        let raw = raw_noise(n, &mut rng, spec.hermitian, &mut planner);
        let sigma_raw = std_dev(&raw);
        let scale = spec.target_level_pct / 100.0 * sigma_x / sigma_raw;
        for t in 0..n {
            values[(t, j)] += scale * raw[t];
        }
    }
    Ok(traj.with_values(values))
}

/// `100 * σ(noisy_j − clean_j) / σ(clean_j)` per variable.
pub fn measure_noise_level(noisy: &DMatrix<f64>, clean: &DMatrix<f64>) -> Result<Vec<f64>> {
    if noisy.shape() != clean.shape() {
        return Err(Error::InvalidArgument(
            "noisy and clean shapes differ".into(),
        ));
    }
    (0..clean.ncols())
        .map(|j| {
            let c: Vec<f64> = clean.column(j).iter().copied().collect();
            let d: Vec<f64> = noisy.column(j).iter().zip(&c).map(|(a, b)| a - b).collect();
            let sc = std_dev(&c);
            if !(sc > 0.0) {
                return Err(Error::DegenerateReference { variable: j });
            }
            Ok(100.0 * std_dev(&d) / sc)
        })
        .collect()
}
