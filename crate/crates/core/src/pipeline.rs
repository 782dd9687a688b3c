//! Orchestration: per-trajectory iteration loop (regress → FoMs →
//! restore check → cull), restart on emptied variables, best-model
//! selection, library union and the second pass (§2, §2.5.1–2.5.3).

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::{
    closest_to_true_transform, coefficient_errors, in_span_alternatives, leave_one_out_redundancy,
    ErrorTable, SpanReport, Substitution,
};
use crate::cull::{
    lin_dep_cull, restore_check, threshold_cull, CullConfig, CullEvent, CullKind, CullState,
    VariableCandidates,
};
use crate::dynsys::{add_noise, simulate, NoiseSpec, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::evolve_fom::{
    evaluate_model, evolve_partial, initial_condition_at, EvolutionConfig, FomSuite, Reference,
};
use crate::library::{
    build_polynomial_library, evaluate_library, rescale_factors, FunctionalLibrary, FunctionalTerm,
};
use crate::linalg::{lstsq_truncated, std_dev};
use crate::model::SparseModel;
use crate::preprocess::{
    derivative_weights, estimate_derivatives, smooth, timepoint_weights, SmoothingConfig,
    WeightVector,
};
use crate::regress::{ensemble_fit, RegressionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_degree: u32,
    pub include_constant: bool,
    /// Hamming window length; `None` uses 200 ms rounded to an odd count.
    pub smoothing_window: Option<usize>,
    /// Half-width of the timepoint-weight windows; `None` uses half the
    /// smoothing window (at least 2).
    pub weight_halfwidth: Option<usize>,
    pub regression: RegressionConfig,
    pub cull: CullConfig,
    pub evolution: EvolutionConfig,
    /// Evolutions are skipped while any variable has more active terms.
    pub density_threshold: usize,
    pub restart_enabled: bool,
    pub max_iterations: usize,
    /// Weight of non-home trajectories in the selection score.
    pub validation_weight: f64,
    /// Scores within this fraction of the best score's magnitude count as
    /// ties.
    pub selection_tolerance: f64,
    pub seed: u64,
    /// `(variable, term name)` pairs re-activated before pass 2.
    pub reinstate: Vec<(usize, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_degree: 2,
            include_constant: true,
            smoothing_window: None,
            weight_halfwidth: None,
            regression: RegressionConfig::default(),
            cull: CullConfig::default(),
            evolution: EvolutionConfig::default(),
            density_threshold: 12,
            restart_enabled: false,
            max_iterations: 400,
            validation_weight: 2.0,
            selection_tolerance: 0.1,
            seed: 0,
            reinstate: vec![],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.regression.validate()?;
        if self.max_degree == 0 {
            return Err(Error::InvalidArgument(
                "max_degree must be at least 1".into(),
            ));
        }
        if !(self.cull.r2_threshold > 0.0 && self.cull.r2_threshold < 1.0) {
            return Err(Error::InvalidArgument(
                "cull.r2_threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.cull.degradation_fraction > 0.0 && self.cull.degradation_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "cull.degradation_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn window_for(&self, dt: f64) -> usize {
        self.smoothing_window
            .unwrap_or_else(|| SmoothingConfig::default_for_dt(dt).window_len)
    }
}

/// Training and validation trajectories, plus the reference model when
/// the data are synthetic.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub truth: Option<SparseModel>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.train.first().map_or(0, Trajectory::dim)
    }
}

/// Simulates a benchmark system at its registry initial conditions and adds
/// noise (distinct seed per trajectory).
pub fn synthetic_dataset(
    system: &SystemSpec,
    duration: f64,
    noise_pct: f64,
    seed: u64,
) -> Result<Dataset> {
    let make = |ic: &Vec<f64>, k: u64| -> Result<Trajectory> {
        let clean = simulate(system, ic, duration, system.dt)?;
        add_noise(&clean, &NoiseSpec::new(noise_pct, mix(seed, &[0x6e6f, k])))
    };
    let train = system
        .default_ics
        .iter()
        .enumerate()
        .map(|(k, ic)| make(ic, k as u64))
        .collect::<Result<Vec<_>>>()?;
    let validation = system
        .validation_ics
        .iter()
        .enumerate()
        .map(|(k, ic)| make(ic, 100 + k as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        train,
        validation,
        truth: Some(system.true_model.clone()),
    })
}

/// SplitMix64-style seed derivation.
fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(*p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Everything derived from one trajectory before iterating.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub noisy: Trajectory,
    pub smoothed: Trajectory,
    pub dxdt: DMatrix<f64>,
    pub weights: WeightVector,
    pub dweights: WeightVector,
    /// Θ over the full library, evaluated on the smoothed series.
    pub theta: DMatrix<f64>,
    pub reference: Reference,
}

pub fn prepare(traj: &Trajectory, lib: &FunctionalLibrary, cfg: &RunConfig) -> Result<Prepared> {
    let window = cfg.window_for(traj.dt);
    let smoothed = smooth(traj, &SmoothingConfig { window_len: window })?;
    let dxdt = estimate_derivatives(&smoothed);
    let halfwidth = cfg.weight_halfwidth.unwrap_or((window / 2).max(2));
    let weights = timepoint_weights(traj, halfwidth)?;
    let mut dweights = derivative_weights(&weights);
    // rows whose smoothing window reaches the reflected padding bias the fit
    let edge = (window / 2 + 2).min(traj.n_timepoints() / 4);
    for wj in dweights.weights.iter_mut() {
        let n = wj.len();
        wj[..edge].iter_mut().for_each(|v| *v = 0.0);
        wj[n - edge..].iter_mut().for_each(|v| *v = 0.0);
    }
    let theta = evaluate_library(lib, &smoothed.values)?;
    let reference = Reference::new(traj, &smoothed, weights.clone(), window);
    Ok(Prepared {
        noisy: traj.clone(),
        smoothed,
        dxdt,
        weights,
        dweights,
        theta,
        reference,
    })
}

/// Compact model snapshot: the `(term, coefficient)` pairs of each
/// variable's active terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl ModelSnapshot {
    pub fn of(model: &SparseModel) -> Self {
        Self {
            rows: (0..model.dim())
                .map(|j| {
                    model
                        .library
                        .active_terms(j)
                        .into_iter()
                        .map(|i| (i, model.coefficients[j][i]))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_model(&self, universe: &FunctionalLibrary) -> SparseModel {
        let mut lib = universe.clone();
        lib.active
            .iter_mut()
            .for_each(|r| r.iter_mut().for_each(|a| *a = false));
        let mut m = SparseModel::zeros(lib);
        for (j, row) in self.rows.iter().enumerate() {
            for &(i, c) in row {
                m.library.active[j][i] = true;
                m.coefficients[j][i] = c;
            }
        }
        m
    }

    pub fn total_active(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub pass: u8,
    pub home: usize,
    pub iteration: usize,
    pub model: ModelSnapshot,
    pub active_counts: Vec<usize>,
    /// One entry per trajectory (training then validation, in dataset
    /// order); `None` when evolutions were skipped.
    pub foms: Vec<Option<FomSuite>>,
    pub event: CullEvent,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rank_deficient: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub removed_variables: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub pass: u8,
    pub home: usize,
    pub records: Vec<IterationRecord>,
    pub aborted: Option<String>,
}

struct LoopCtx<'a> {
    cfg: &'a RunConfig,
    pass: u8,
    home: usize,
    universe: &'a FunctionalLibrary,
    prepared: &'a [Prepared],
}

fn column_rows(theta: &DMatrix<f64>, i: usize, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&t| theta[(t, i)]).collect()
}

struct FitOutcome {
    model: SparseModel,
    fit_timepoints: Vec<Vec<usize>>,
    rank_deficient: Vec<usize>,
}

fn fit_model(ctx: &LoopCtx, lib: &FunctionalLibrary, iteration: usize) -> FitOutcome {
    let prep = &ctx.prepared[ctx.home];
    let n = prep.noisy.n_timepoints();
    let all: Vec<usize> = (0..n).collect();
    let results: Vec<(Vec<f64>, Vec<usize>, bool)> = (0..lib.dim)
        .into_par_iter()
        .map(|j| {
            let terms = lib.active_terms(j);
            let mut coef = vec![0.0; lib.n_terms()];
            if terms.is_empty() {
                return (coef, all.clone(), false);
            }
            let cols: Vec<Vec<f64>> = terms
                .iter()
                .map(|&i| column_rows(&prep.theta, i, &all))
                .collect();
            let dx: Vec<f64> = prep.dxdt.column(j).iter().copied().collect();
            let rcfg = RegressionConfig {
                seed: mix(
                    ctx.cfg.seed,
                    &[ctx.pass as u64, ctx.home as u64, iteration as u64, j as u64],
                ),
                ..ctx.cfg.regression
            };
            match ensemble_fit(&cols, &dx, &prep.dweights.weights[j], &rcfg) {
                Ok(e) => {
                    for (&i, c) in terms.iter().zip(&e.median) {
                        coef[i] = *c;
                    }
                    (coef, e.fit_timepoints, false)
                }
                Err(_) => {
                    // basic least-squares solution so culling can still rank terms
                    let w: Vec<f64> = prep.dweights.weights[j].iter().map(|v| v.sqrt()).collect();
                    let wc: Vec<Vec<f64>> = cols
                        .iter()
                        .map(|c| c.iter().zip(&w).map(|(a, b)| a * b).collect())
                        .collect();
                    let wy: Vec<f64> = dx.iter().zip(&w).map(|(a, b)| a * b).collect();
                    if let Ok(sol) = lstsq_truncated(&wc, &wy, rcfg.rank_tol) {
                        for (&i, c) in terms.iter().zip(&sol.coef) {
                            coef[i] = *c;
                        }
                    }
                    (coef, all.clone(), true)
                }
            }
        })
        .collect();
    let mut model = SparseModel::zeros(lib.clone());
    let mut fit_timepoints = Vec::new();
    let mut rank_deficient = Vec::new();
    for (j, (coef, tp, rd)) in results.into_iter().enumerate() {
        model.coefficients[j] = coef;
        fit_timepoints.push(tp);
        if rd {
            rank_deficient.push(j);
        }
    }
    model.enforce_mask();
    FitOutcome {
        model,
        fit_timepoints,
        rank_deficient,
    }
}

fn evaluate_all(ctx: &LoopCtx, model: &SparseModel) -> Vec<Option<FomSuite>> {
    (0..ctx.prepared.len())
        .into_par_iter()
        .map(|k| {
            let mut ecfg = ctx.cfg.evolution;
            if k != ctx.home {
                ecfg.n_repeats = 1;
            }
            Some(evaluate_model(model, &ctx.prepared[k].reference, &ecfg))
        })
        .collect()
}

fn candidates(ctx: &LoopCtx, fit: &FitOutcome, removed: &[bool]) -> Vec<VariableCandidates> {
    let theta = &ctx.prepared[ctx.home].theta;
    let lib = &fit.model.library;
    (0..lib.dim)
        .filter(|&j| !removed[j])
        .filter_map(|j| {
            let terms = lib.active_terms(j);
            if terms.is_empty() {
                return None;
            }
            let tp = &fit.fit_timepoints[j];
            let columns: Vec<Vec<f64>> = terms.iter().map(|&i| column_rows(theta, i, tp)).collect();
            let scores = match rescale_factors(theta, &terms, tp, ctx.cfg.cull.percentile_m) {
                Ok(rf) => terms
                    .iter()
                    .map(|&i| {
                        (rf.get(i).unwrap_or(f64::MIN_POSITIVE) * fit.model.coefficients[j][i])
                            .abs()
                    })
                    .collect(),
                Err(_) => terms
                    .iter()
                    .map(|&i| fit.model.coefficients[j][i].abs())
                    .collect(),
            };
            Some(VariableCandidates {
                variable: j,
                terms,
                columns,
                scores,
            })
        })
        .collect()
}

/// The iteration loop on one home trajectory starting from `initial`.
fn run_home(ctx: &LoopCtx, initial: &FunctionalLibrary) -> RunLog {
    let cfg = ctx.cfg;
    let dim = initial.dim;
    let mut lib = initial.clone();
    // variables entering the run without terms were removed by an earlier restart
    let mut removed: Vec<bool> = (0..dim).map(|j| initial.active_count(j) == 0).collect();
    let mut state = CullState::new(cfg.cull);
    let mut prev_home: Option<FomSuite> = None;
    let mut records = Vec::new();
    let mut aborted = None;

    for it in 0..cfg.max_iterations {
        let fit = fit_model(ctx, &lib, it);
        let counts = lib.active_counts();
        let live_max = (0..dim)
            .filter(|&j| !removed[j])
            .map(|j| counts[j])
            .max()
            .unwrap_or(0);
        let foms = if live_max <= cfg.density_threshold && fit.rank_deficient.is_empty() {
            evaluate_all(ctx, &fit.model)
        } else {
            vec![None; ctx.prepared.len()]
        };
        let home_foms = foms[ctx.home].clone();

        let mut event = None;
        if state.last_cull.is_some() {
            if let Some(e) = restore_check(prev_home.as_ref(), home_foms.as_ref(), &state) {
                event = Some(e);
            }
        }
        let restored = event.is_some();
        if !restored {
            prev_home = home_foms.clone();
            let cands = candidates(ctx, &fit, &removed);
            event = lin_dep_cull(&cands, &state);
            if event.is_none() && !fit.rank_deficient.is_empty() {
                aborted = Some(format!(
                    "regression rank deficient for variables {:?} and no linear dependence to cull",
                    fit.rank_deficient
                ));
            }
            if event.is_none() && aborted.is_none() {
                event = threshold_cull(&cands, &counts, &state).ok();
            }
        }
        let event = event.unwrap_or_else(CullEvent::none);

        records.push(IterationRecord {
            pass: ctx.pass,
            home: ctx.home,
            iteration: it,
            model: ModelSnapshot::of(&fit.model),
            active_counts: counts,
            foms,
            event: event.clone(),
            rank_deficient: fit.rank_deficient.clone(),
            removed_variables: (0..dim).filter(|&j| removed[j]).collect(),
        });
        if aborted.is_some() {
            break;
        }
        state.tick();
        state.apply(&event, &mut lib, it);
        if event.kind == CullKind::None {
            break;
        }

        let emptied: Vec<usize> = (0..dim)
            .filter(|&j| !removed[j] && lib.active_count(j) == 0)
            .collect();
        if !emptied.is_empty() {
            if !cfg.restart_enabled {
                break;
            }
            for &v in &emptied {
                removed[v] = true;
            }
            if removed.iter().all(|r| *r) {
                break;
            }
            lib = restart_library(ctx.universe, initial, &removed);
            state = CullState::new(cfg.cull);
            prev_home = None;
            if (0..dim).any(|j| !removed[j] && lib.active_count(j) == 0) {
                break;
            }
        }
    }
    RunLog {
        pass: ctx.pass,
        home: ctx.home,
        records,
        aborted,
    }
}

/// The starting library minus every term containing a removed variable;
/// removed variables get no terms.
pub fn restart_library(
    universe: &FunctionalLibrary,
    initial: &FunctionalLibrary,
    removed: &[bool],
) -> FunctionalLibrary {
    let mut lib = initial.clone();
    debug_assert!(lib.same_universe(universe));
    for (v, &r) in removed.iter().enumerate() {
        if r {
            lib.drop_terms_with(v);
            lib.active[v].iter_mut().for_each(|a| *a = false);
        }
    }
    lib
}

/// Runs the iteration loop on every training trajectory.
pub fn run_fit(
    cfg: &RunConfig,
    data: &Dataset,
    initial: &FunctionalLibrary,
    pass: u8,
) -> Result<Vec<RunLog>> {
    let prepared = prepare_all(cfg, data, initial)?;
    Ok(run_fit_prepared(
        cfg,
        &prepared,
        data.train.len(),
        initial,
        pass,
    ))
}

pub fn prepare_all(
    cfg: &RunConfig,
    data: &Dataset,
    lib: &FunctionalLibrary,
) -> Result<Vec<Prepared>> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one training trajectory is required".into(),
        ));
    }
    data.train
        .iter()
        .chain(&data.validation)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|t| {
            if t.dim() != lib.dim {
                return Err(Error::InvalidArgument(format!(
                    "trajectory has {} variables, library has {}",
                    t.dim(),
                    lib.dim
                )));
            }
            prepare(t, lib, cfg)
        })
        .collect()
}

fn run_fit_prepared(
    cfg: &RunConfig,
    prepared: &[Prepared],
    n_train: usize,
    initial: &FunctionalLibrary,
    pass: u8,
) -> Vec<RunLog> {
    (0..n_train)
        .into_par_iter()
        .map(|home| {
            let ctx = LoopCtx {
                cfg,
                pass,
                home,
                universe: initial,
                prepared,
            };
            run_home(&ctx, initial)
        })
        .collect()
}

/// Selection score of one record: weighted mean over trajectories of
/// [`FomSuite::score`], `None` unless every trajectory evolved.
pub fn record_score(rec: &IterationRecord, validation_weight: f64) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, f) in rec.foms.iter().enumerate() {
        let s = f.as_ref()?.score_excluding(&rec.removed_variables)?;
        let w = if k == rec.home {
            1.0
        } else {
            validation_weight
        };
        num += w * s;
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

impl FomSuite {
    fn score_excluding(&self, removed: &[usize]) -> Option<f64> {
        if removed.is_empty() {
            return self.score();
        }
        if !self.evolution_ok {
            return None;
        }
        let live: Vec<usize> = (0..self.in_envelope_frac.len())
            .filter(|j| !removed.contains(j))
            .collect();
        if live.is_empty() {
            return None;
        }
        let s: f64 = live
            .iter()
            .map(|&j| {
                self.in_envelope_frac[j] + self.hist_corr[j] + self.fft_power_corr[j]
                    - self.std_rel_err[j].abs()
            })
            .sum();
        Some(s / live.len() as f64)
    }
}

/// Index (into `log.records`) of the sparsest iteration scoring within
/// `tolerance · |best|` of the best; remaining ties go to the higher score, then the
/// earlier iteration.
pub fn select_best_model(log: &RunLog, validation_weight: f64, tolerance: f64) -> Result<usize> {
    let scored: Vec<(usize, f64, usize)> = log
        .records
        .iter()
        .enumerate()
        .filter(|(_, rec)| {
            !rec.model
                .rows
                .iter()
                .enumerate()
                .any(|(j, r)| r.is_empty() && !rec.removed_variables.contains(&j))
        })
        .filter_map(|(idx, rec)| {
            record_score(rec, validation_weight).map(|s| (idx, s, rec.model.total_active()))
        })
        .collect();
    let top = scored.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    scored
        .iter()
        .filter(|c| c.1 >= top - (tolerance * top.abs()).max(1e-12))
        .min_by(|a, b| a.2.cmp(&b.2).then(b.1.total_cmp(&a.1)).then(a.0.cmp(&b.0)))
        .map(|c| c.0)
        .ok_or(Error::NoViableModel)
}

/// Per-variable union of the models' supports over their shared universe.
pub fn union_of_libraries(models: &[SparseModel]) -> Result<FunctionalLibrary> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models to unite".into()))?;
    let mut lib = first.library.clone();
    lib.active
        .iter_mut()
        .for_each(|r| r.iter_mut().for_each(|a| *a = false));
    for m in models {
        if !m.library.same_universe(&lib) {
            return Err(Error::MismatchedLibrary(
                "models to unite use different libraries".into(),
            ));
        }
        for j in 0..m.dim() {
            for i in m.support(j) {
                lib.active[j][i] = true;
            }
        }
    }
    Ok(lib)
}

fn apply_reinstate(lib: &mut FunctionalLibrary, reinstate: &[(usize, String)]) -> Result<()> {
    for (j, name) in reinstate {
        let term = FunctionalTerm::parse(name, lib.dim)?;
        let i = lib
            .term_index(&term)
            .ok_or_else(|| Error::InvalidArgument(format!("term {name} is not in the library")))?;
        if *j >= lib.dim {
            return Err(Error::InvalidArgument(format!("variable {j} out of range")));
        }
        lib.active[*j][i] = true;
    }
    Ok(())
}

/// Assessment of one final model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub home: usize,
    pub alternatives: SpanReport,
    pub redundancy: SpanReport,
    pub raw_errors: Option<ErrorTable>,
    pub closest: Option<ClosestReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosestReport {
    pub model: ModelSnapshot,
    pub errors: ErrorTable,
    pub substitutions: Vec<Substitution>,
    pub traces: Vec<Vec<f64>>,
    /// Relative RMS deviation between the raw and transformed models evolved
    /// on the home trajectory, per variable (σ of the smoothed reference).
    pub behavior_deviation: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FullResult {
    pub universe: FunctionalLibrary,
    pub pass1: Vec<RunLog>,
    pub best1: Vec<Option<usize>>,
    pub union: FunctionalLibrary,
    pub pass2: Vec<RunLog>,
    pub best2: Vec<Option<usize>>,
    pub final_models: Vec<Option<SparseModel>>,
    pub assessments: Vec<Option<Assessment>>,
}

/// Pass 1 → selection → union → pass 2 → selection → assessment.
pub fn run_full(cfg: &RunConfig, data: &Dataset) -> Result<FullResult> {
    run_full_with(cfg, data, |_, _| Ok(()))
}

/// [`run_full`], handing each pass's logs to `on_pass` as soon as the pass
/// ends so callers can persist them even if a later stage fails.
pub fn run_full_with(
    cfg: &RunConfig,
    data: &Dataset,
    mut on_pass: impl FnMut(&FunctionalLibrary, &[RunLog]) -> Result<()>,
) -> Result<FullResult> {
    let dim = data.dim();
    let universe = build_polynomial_library(dim, cfg.max_degree, cfg.include_constant)?;
    let prepared = prepare_all(cfg, data, &universe)?;
    let n_train = data.train.len();

    let pass1 = run_fit_prepared(cfg, &prepared, n_train, &universe, 1);
    on_pass(&universe, &pass1)?;
    let best1: Vec<Option<usize>> = pass1
        .iter()
        .map(|l| select_best_model(l, cfg.validation_weight, cfg.selection_tolerance).ok())
        .collect();
    let best_models: Vec<SparseModel> = pass1
        .iter()
        .zip(&best1)
        .filter_map(|(l, b)| b.map(|i| l.records[i].model.to_model(&universe)))
        .collect();
    if best_models.is_empty() {
        return Err(Error::NoViableModel);
    }
    let mut union = union_of_libraries(&best_models)?;
    apply_reinstate(&mut union, &cfg.reinstate)?;

    let pass2 = run_fit_prepared(cfg, &prepared, n_train, &union, 2);
    on_pass(&universe, &pass2)?;
    let best2: Vec<Option<usize>> = pass2
        .iter()
        .map(|l| select_best_model(l, cfg.validation_weight, cfg.selection_tolerance).ok())
        .collect();

    let mut final_models = Vec::new();
    for k in 0..n_train {
        let m = match (best2[k], best1[k]) {
            (Some(i), _) => Some(pass2[k].records[i].model.to_model(&universe)),
            (None, Some(i)) => Some(pass1[k].records[i].model.to_model(&universe)),
            _ => None,
        };
        final_models.push(m);
    }

    let truth = match &data.truth {
        Some(t) => Some(t.embed(&universe)?),
        None => None,
    };
    let assessments = final_models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            m.as_ref()
                .map(|m| assess_model(m, &union, &prepared[k], truth.as_ref(), cfg, k))
        })
        .collect();

    Ok(FullResult {
        universe,
        pass1,
        best1,
        union,
        pass2,
        best2,
        final_models,
        assessments,
    })
}

/// Span reports and (with a reference model) raw and closest-to-true error
/// tables for `model` on its home trajectory.
pub fn assess_model(
    model: &SparseModel,
    start_library: &FunctionalLibrary,
    home: &Prepared,
    truth: Option<&SparseModel>,
    cfg: &RunConfig,
    home_index: usize,
) -> Assessment {
    let r2 = cfg.cull.r2_threshold;
    let culled: Vec<Vec<usize>> = (0..model.dim())
        .map(|j| {
            let support = model.support(j);
            start_library
                .active_terms(j)
                .into_iter()
                .filter(|i| !support.contains(i))
                .collect()
        })
        .collect();
    let alternatives = in_span_alternatives(model, &culled, &home.theta, r2);
    let redundancy = leave_one_out_redundancy(model, &home.theta, r2);
    let (raw_errors, closest) = match truth {
        None => (None, None),
        Some(t) => {
            let raw = coefficient_errors(model, t).ok();
            let closest = Some(match closest_to_true_transform(model, t, &home.theta, r2) {
                Ok(out) => ClosestReport {
                    model: ModelSnapshot::of(&out.model),
                    behavior_deviation: behavior_deviation(model, &out.model, home, &cfg.evolution),
                    errors: out.table,
                    substitutions: out.substitutions,
                    traces: out.traces,
                    error: None,
                },
                Err(e) => ClosestReport {
                    model: ModelSnapshot::of(model),
                    errors: ErrorTable { rows: vec![] },
                    substitutions: vec![],
                    traces: vec![],
                    behavior_deviation: None,
                    error: Some(e.to_string()),
                },
            });
            (raw, closest)
        }
    };
    Assessment {
        home: home_index,
        alternatives,
        redundancy,
        raw_errors,
        closest,
    }
}

/// Relative RMS deviation between two models evolved from the same
/// estimated initial condition on `home`.
pub fn behavior_deviation(
    a: &SparseModel,
    b: &SparseModel,
    home: &Prepared,
    ecfg: &EvolutionConfig,
) -> Option<Vec<f64>> {
    let r = &home.reference;
    let k = ecfg.ic_points.max(1).min(r.n());
    let ic = initial_condition_at(&r.noisy, &r.weights, k, 0).ok()?;
    let n = r.n() - crate::evolve_fom::evolution_start(0, k);
    let ea = evolve_partial(a, &ic, r.dt, n, &ecfg.limits);
    let eb = evolve_partial(b, &ic, r.dt, n, &ecfg.limits);
    if ea.failure.is_some() || eb.failure.is_some() {
        return None;
    }
    Some(
        (0..a.dim())
            .map(|j| {
                let sigma = std_dev(&home.smoothed.column(j));
                let rms = ((0..n)
                    .map(|t| (ea.values[(t, j)] - eb.values[(t, j)]).powi(2))
                    .sum::<f64>()
                    / n as f64)
                    .sqrt();
                if sigma > 0.0 {
                    rms / sigma
                } else {
                    rms
                }
            })
            .collect(),
    )
}

#[derive(Serialize)]
struct LogHeader<'a> {
    record: &'static str,
    pass: u8,
    dim: usize,
    terms: Vec<String>,
    n_train: usize,
    n_validation: usize,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct LogLine<'a> {
    record: &'static str,
    #[serde(flatten)]
    iteration: &'a IterationRecord,
}

/// Writes one header line and one JSON object per iteration record.
pub fn write_log<W: Write>(
    mut w: W,
    cfg: &RunConfig,
    universe: &FunctionalLibrary,
    n_train: usize,
    n_validation: usize,
    logs: &[RunLog],
) -> Result<()> {
    let pass = logs.first().map_or(0, |l| l.pass);
    let header = LogHeader {
        record: "header",
        pass,
        dim: universe.dim,
        terms: universe.terms.iter().map(|t| t.name()).collect(),
        n_train,
        n_validation,
        config: cfg,
    };
    let to_io = |e: serde_json::Error| Error::Io(e.to_string());
    serde_json::to_writer(&mut w, &header).map_err(to_io)?;
    writeln!(w)?;
    for log in logs {
        for rec in &log.records {
            serde_json::to_writer(
                &mut w,
                &LogLine {
                    record: "iteration",
                    iteration: rec,
                },
            )
            .map_err(to_io)?;
            writeln!(w)?;
        }
        if let Some(msg) = &log.aborted {
            serde_json::to_writer(
                &mut w,
                &serde_json::json!({"record": "aborted", "pass": log.pass, "home": log.home, "reason": msg}),
            )
            .map_err(to_io)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Parsed iteration log: the universe (from the header) and all records.
#[derive(Debug, Clone)]
pub struct ParsedLog {
    pub universe: FunctionalLibrary,
    pub n_train: usize,
    pub n_validation: usize,
    pub config: serde_json::Value,
    pub records: Vec<IterationRecord>,
}

pub fn read_log(text: &str) -> Result<ParsedLog> {
    let mut universe = None;
    let mut config = serde_json::Value::Null;
    let (mut n_train, mut n_validation) = (0, 0);
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("log line {}: {e}", n + 1)))?;
        match v.get("record").and_then(|r| r.as_str()) {
            Some("header") => {
                let dim = v["dim"]
                    .as_u64()
                    .ok_or_else(|| Error::Parse("header lacks dim".into()))?
                    as usize;
                let names: Vec<String> = serde_json::from_value(v["terms"].clone())
                    .map_err(|e| Error::Parse(e.to_string()))?;
                let terms = names
                    .iter()
                    .map(|s| FunctionalTerm::parse(s, dim))
                    .collect::<Result<Vec<_>>>()?;
                let max_degree = terms.iter().map(FunctionalTerm::degree).max().unwrap_or(1);
                let n_terms = terms.len();
                universe = Some(FunctionalLibrary {
                    dim,
                    max_degree,
                    terms,
                    active: vec![vec![true; n_terms]; dim],
                });
                config = v["config"].clone();
                n_train = v["n_train"].as_u64().unwrap_or(0) as usize;
                n_validation = v["n_validation"].as_u64().unwrap_or(0) as usize;
            }
            Some("iteration") => records.push(
                serde_json::from_value(v)
                    .map_err(|e| Error::Parse(format!("log line {}: {e}", n + 1)))?,
            ),
            _ => {}
        }
    }
    Ok(ParsedLog {
        universe: universe.ok_or_else(|| Error::Parse("log has no header".into()))?,
        n_train,
        n_validation,
        config,
        records,
    })
}
