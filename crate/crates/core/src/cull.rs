//! One-functional-per-iteration culling: linear-dependence culls first,
//! then rescaled-coefficient thresholding, with restore-and-protect
//! (§2.4.1–2.4.5).

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve_fom::FomSuite;
use crate::library::FunctionalLibrary;
use crate::linalg::{mean, span_fit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CullConfig {
    /// Largest allowed gap between per-variable active counts; `None`
    /// disables the balance constraint (`"none"` in config files).
    #[serde(with = "optional_limit")]
    pub balance_limit: Option<usize>,
    pub r2_threshold: f64,
    pub protect_span: usize,
    pub degradation_fraction: f64,
    /// Smallest absolute drop of a watched FoM that can trigger a restore.
    pub min_drop: f64,
    /// Restores allowed per (variable, term) over a run.
    pub max_restores: usize,
    /// Also watch the histogram and spectrum correlations for degradation.
    pub watch_correlations: bool,
    /// Exempt pairs restored after a lin-dep cull from further lin-dep culls.
    pub exempt_restored: bool,
    pub percentile_m: f64,
}

impl Default for CullConfig {
    fn default() -> Self {
        Self {
            balance_limit: Some(3),
            r2_threshold: 0.95,
            protect_span: 4,
            degradation_fraction: 0.5,
            min_drop: 0.05,
            max_restores: 3,
            watch_correlations: true,
            exempt_restored: true,
            percentile_m: 50.0,
        }
    }
}

/// `Option<usize>` as either an integer or the string `"none"`, since TOML
/// has no null.
mod optional_limit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => s.serialize_u64(*n as u64),
            None => s.serialize_str("none"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Count(usize),
        Word(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Count(n) => Ok(Some(n)),
            Repr::Word(w) if w == "none" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected an integer or \"none\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CullKind {
    LinDep,
    Threshold,
    Restore,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CullEvent {
    pub kind: CullKind,
    pub variable: Option<usize>,
    pub term: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
}

impl CullEvent {
    pub fn none() -> Self {
        Self {
            kind: CullKind::None,
            variable: None,
            term: None,
            r2: None,
        }
    }

    pub fn at(kind: CullKind, variable: usize, term: usize, r2: Option<f64>) -> Self {
        Self {
            kind,
            variable: Some(variable),
            term: Some(term),
            r2,
        }
    }
}

/// Mutable culling bookkeeping for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct CullState {
    pub cfg: CullConfig,
    /// (variable, term) → remaining protected iterations.
    pub protections: BTreeMap<(usize, usize), usize>,
    /// (variable, term, iteration) of the most recent cull.
    pub last_cull: Option<(usize, usize, usize)>,
    pub last_cull_kind: Option<CullKind>,
    pub restore_counts: BTreeMap<(usize, usize), usize>,
    /// Pairs restored after a lin-dep cull; removing them degraded the
    /// model, so they are no longer treated as redundant.
    pub lin_dep_exempt: BTreeSet<(usize, usize)>,
}

impl CullState {
    pub fn new(cfg: CullConfig) -> Self {
        Self {
            cfg,
            protections: BTreeMap::new(),
            last_cull: None,
            last_cull_kind: None,
            restore_counts: BTreeMap::new(),
            lin_dep_exempt: BTreeSet::new(),
        }
    }

    pub fn is_protected(&self, variable: usize, term: usize) -> bool {
        self.protections
            .get(&(variable, term))
            .is_some_and(|&c| c > 0)
    }

    /// Decrements every protection counter by one iteration.
    pub fn tick(&mut self) {
        self.protections
            .values_mut()
            .for_each(|c| *c = c.saturating_sub(1));
        self.protections.retain(|_, c| *c > 0);
    }

    /// Applies `event` to the library mask and records it.
    pub fn apply(&mut self, event: &CullEvent, lib: &mut FunctionalLibrary, iteration: usize) {
        let previous = self.last_cull_kind.take();
        let (Some(j), Some(i)) = (event.variable, event.term) else {
            self.last_cull = None;
            return;
        };
        match event.kind {
            CullKind::LinDep | CullKind::Threshold => {
                lib.active[j][i] = false;
                self.last_cull = Some((j, i, iteration));
                self.last_cull_kind = Some(event.kind);
            }
            CullKind::Restore => {
                lib.active[j][i] = true;
                self.protections.insert((j, i), self.cfg.protect_span);
                *self.restore_counts.entry((j, i)).or_insert(0) += 1;
                if self.cfg.exempt_restored && previous == Some(CullKind::LinDep) {
                    self.lin_dep_exempt.insert((j, i));
                }
                self.last_cull = None;
            }
            CullKind::None => self.last_cull = None,
        }
    }
}

/// One variable's inputs to a culling decision.
#[derive(Debug, Clone)]
pub struct VariableCandidates {
    pub variable: usize,
    /// Library indices of the active terms.
    pub terms: Vec<usize>,
    /// Θ columns of the active terms over the fit timepoints.
    pub columns: Vec<Vec<f64>>,
    /// Rescaled coefficient magnitudes `|v_i ξ_i|`.
    pub scores: Vec<f64>,
}

/// Leave-one-out R² of each column on the others, with intercept.
///
/// Constant columns are collinear with the intercept and report 0. Uses the
/// inverse correlation matrix (`R²_i = 1 − 1/(C⁻¹)_ii`) and falls back to
/// explicit QR fits when the correlation matrix is numerically singular.
pub fn leave_one_out_r2(columns: &[Vec<f64>]) -> Vec<f64> {
    let p = columns.len();
    let mut out = vec![0.0; p];
    let idx: Vec<usize> = (0..p)
        .filter(|&i| {
            let c = &columns[i];
            let m = mean(c);
            let scale = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            c.iter().any(|v| (v - m).abs() > 1e-12 * scale)
        })
        .collect();
    let q = idx.len();
    if q < 2 {
        return out;
    }
    let n = columns[0].len() as f64;
    let centered: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            let c = &columns[i];
            let m = mean(c);
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            c.iter().map(|v| (v - m) / sd).collect()
        })
        .collect();
    let corr = DMatrix::from_fn(q, q, |a, b| {
        centered[a]
            .iter()
            .zip(&centered[b])
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / n
    });
    let fast = corr.clone().cholesky().and_then(|ch| {
        let inv = ch.inverse();
        let r2: Vec<f64> = (0..q).map(|a| 1.0 - 1.0 / inv[(a, a)]).collect();
        // a huge condition number makes the diagonal unreliable
        r2.iter()
            .all(|r| r.is_finite() && *r < 1.0 - 1e-9)
            .then_some(r2)
    });
    match fast {
        Some(r2) => {
            for (a, &i) in idx.iter().enumerate() {
                out[i] = r2[a].clamp(0.0, 1.0);
            }
        }
        None => {
            for (a, &i) in idx.iter().enumerate() {
                let basis: Vec<&[f64]> = idx
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| *b != a)
                    .map(|(_, &k)| columns[k].as_slice())
                    .collect();
                out[i] = span_fit(&columns[i], &basis, true).r2;
            }
        }
    }
    out
}

/// Among all unprotected, non-exempt pairs with leave-one-out R² ≥
/// threshold, culls the one with the smallest rescaled coefficient.
pub fn lin_dep_cull(candidates: &[VariableCandidates], state: &CullState) -> Option<CullEvent> {
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for vc in candidates {
        if vc.terms.len() < 2 {
            continue;
        }
        let r2 = leave_one_out_r2(&vc.columns);
        for (k, &term) in vc.terms.iter().enumerate() {
            if r2[k] < state.cfg.r2_threshold
                || state.is_protected(vc.variable, term)
                || state.lin_dep_exempt.contains(&(vc.variable, term))
            {
                continue;
            }
            let s = vc.scores[k];
            if best.is_none_or(|(bs, ..)| s < bs) {
                best = Some((s, vc.variable, term, r2[k]));
            }
        }
    }
    best.map(|(_, j, i, r2)| CullEvent::at(CullKind::LinDep, j, i, Some(r2)))
}

/// Culls the unprotected pair with the smallest rescaled coefficient among
/// variables that can lose a term without the post-cull gap
/// `max(counts') − counts'_j` exceeding the balance limit.
pub fn threshold_cull(
    candidates: &[VariableCandidates],
    counts: &[usize],
    state: &CullState,
) -> Result<CullEvent> {
    let mut best: Option<(f64, usize, usize)> = None;
    for vc in candidates {
        let j = vc.variable;
        if let Some(limit) = state.cfg.balance_limit {
            let mut after = counts.to_vec();
            after[j] = after[j].saturating_sub(1);
            let top = after.iter().copied().max().unwrap_or(0);
            if top - after[j] > limit {
                continue;
            }
        }
        for (k, &term) in vc.terms.iter().enumerate() {
            if state.is_protected(j, term) {
                continue;
            }
            let s = vc.scores[k];
            if best.is_none_or(|(bs, ..)| s < bs) {
                best = Some((s, j, term));
            }
        }
    }
    best.map(|(_, j, i)| CullEvent::at(CullKind::Threshold, j, i, None))
        .ok_or(Error::NoCandidates)
}

/// Per-variable values the restore trigger watches: in-envelope fraction,
/// `max(0, 1 − |std_rel_err|)` and the two correlations clamped at zero.
fn watched(s: &FomSuite, correlations: bool) -> Option<Vec<[f64; 4]>> {
    if !s.evolution_ok || s.in_envelope_frac.is_empty() {
        return None;
    }
    Some(
        s.in_envelope_frac
            .iter()
            .zip(&s.std_rel_err)
            .zip(s.hist_corr.iter().zip(&s.fft_power_corr))
            .map(|((e, r), (h, f))| {
                let c = if correlations { 1.0 } else { 0.0 };
                [*e, (1.0 - r.abs()).max(0.0), c * h.max(0.0), c * f.max(0.0)]
            })
            .collect(),
    )
}

/// Restores the last-culled pair if a watched home-trajectory FoM lost more
/// than `degradation_fraction` of its previous value (and at least
/// `min_drop` in absolute terms). A failed evolution
/// after a successful one counts as a drop.
pub fn restore_check(
    before: Option<&FomSuite>,
    after: Option<&FomSuite>,
    state: &CullState,
) -> Option<CullEvent> {
    let (j, i, _) = state.last_cull?;
    if state.restore_counts.get(&(j, i)).copied().unwrap_or(0) >= state.cfg.max_restores {
        return None;
    }
    let corr = state.cfg.watch_correlations;
    let prev = watched(before?, corr)?;
    let keep = 1.0 - state.cfg.degradation_fraction;
    let dropped = match after.and_then(|a| watched(a, corr)) {
        None => after.is_some_and(|s| !s.evolution_ok),
        Some(cur) => prev
            .iter()
            .zip(&cur)
            .any(|(p, c)| (0..4).any(|k| c[k] < keep * p[k] && p[k] - c[k] >= state.cfg.min_drop)),
    };
    dropped.then(|| CullEvent::at(CullKind::Restore, j, i, None))
}
