//! Linear-span analysis of discovered models: alternative-functional reports
//! (§2.5.4) and the oracle closest-to-true transform with coefficient error
//! tables (§2.6).

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::variable_name;
use crate::linalg::span_fit;
use crate::model::SparseModel;

const LAMBDA_GRID: usize = 41;
const GOLDEN_TOL: f64 = 1e-6;
const MAX_GREEDY_STEPS: usize = 200;

fn column(theta: &DMatrix<f64>, i: usize) -> Vec<f64> {
    theta.column(i).iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEntry {
    pub variable: usize,
    pub term: usize,
    pub basis: Vec<usize>,
    pub betas: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
    /// `r2 ≥ threshold`: an alternative (for culled terms) or a redundancy
    /// candidate (for retained terms).
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub entries: Vec<SpanEntry>,
}

impl SpanReport {
    pub fn get(&self, variable: usize, term: usize) -> Option<&SpanEntry> {
        self.entries
            .iter()
            .find(|e| e.variable == variable && e.term == term)
    }

    pub fn render(&self, model: &SparseModel) -> String {
        let names: Vec<String> = model.library.terms.iter().map(|t| t.name()).collect();
        let mut out = String::new();
        for e in &self.entries {
            let basis: Vec<&str> = e.basis.iter().map(|&i| names[i].as_str()).collect();
            let _ = writeln!(
                out,
                "{}': {} on {{{}}}  R2 = {:.3}{}",
                variable_name(e.variable),
                names[e.term],
                basis.join(", "),
                e.r2,
                if e.flagged { "  *" } else { "" }
            );
        }
        out
    }
}

fn span_entry(
    theta: &DMatrix<f64>,
    variable: usize,
    term: usize,
    basis: Vec<usize>,
    threshold: f64,
) -> SpanEntry {
    let target = column(theta, term);
    let cols: Vec<Vec<f64>> = basis.iter().map(|&i| column(theta, i)).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let fit = span_fit(&target, &refs, true);
    SpanEntry {
        variable,
        term,
        basis,
        flagged: fit.r2 >= threshold,
        betas: fit.betas,
        intercept: fit.intercept,
        r2: fit.r2,
    }
}

/// Fits each culled term (per variable) on that variable's retained active
/// terms.
pub fn in_span_alternatives(
    model: &SparseModel,
    culled_terms: &[Vec<usize>],
    theta: &DMatrix<f64>,
    r2_threshold: f64,
) -> SpanReport {
    let mut entries = Vec::new();
    for (j, culled) in culled_terms.iter().enumerate().take(model.dim()) {
        let basis = model.support(j);
        if basis.is_empty() {
            continue;
        }
        for &g in culled {
            if !basis.contains(&g) {
                entries.push(span_entry(theta, j, g, basis.clone(), r2_threshold));
            }
        }
    }
    SpanReport { entries }
}

/// Fits each retained term on the other retained terms of its equation.
pub fn leave_one_out_redundancy(
    model: &SparseModel,
    theta: &DMatrix<f64>,
    r2_threshold: f64,
) -> SpanReport {
    let mut entries = Vec::new();
    for j in 0..model.dim() {
        let support = model.support(j);
        if support.len() < 2 {
            continue;
        }
        for &k in &support {
            let basis: Vec<usize> = support.iter().copied().filter(|&i| i != k).collect();
            entries.push(span_entry(theta, j, k, basis, r2_threshold));
        }
    }
    SpanReport { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermError {
    Percent(f64),
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEntry {
    pub term: usize,
    pub true_coef: f64,
    pub estimate: f64,
    pub error: TermError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub variable: usize,
    pub true_terms: Vec<TermEntry>,
    /// `(term, coefficient)` of active terms absent from the reference.
    pub extras: Vec<(usize, f64)>,
}

impl ErrorRow {
    /// Percent errors over the true terms, `None` where missing.
    pub fn percents(&self) -> Vec<Option<f64>> {
        self.true_terms
            .iter()
            .map(|e| match e.error {
                TermError::Percent(p) => Some(p),
                TermError::Missing => None,
            })
            .collect()
    }

    /// Largest relative error (fraction, missing counts as 1).
    pub fn max_relative_error(&self) -> f64 {
        self.true_terms
            .iter()
            .map(|e| match e.error {
                TermError::Percent(p) => p / 100.0,
                TermError::Missing => 1.0,
            })
            .fold(0.0, f64::max)
    }

    /// The paper's tuple: rounded percents in library order, `inf` for
    /// missing true terms and `*` for extra terms.
    pub fn render_tuple(&self) -> String {
        let mut items: Vec<(usize, String)> = self
            .true_terms
            .iter()
            .map(|e| {
                let s = match e.error {
                    TermError::Percent(p) => format!("{}", p.round() as i64),
                    TermError::Missing => "inf".to_string(),
                };
                (e.term, s)
            })
            .collect();
        items.extend(self.extras.iter().map(|(i, _)| (*i, "*".to_string())));
        items.sort_by_key(|(i, _)| *i);
        let parts: Vec<String> = items.into_iter().map(|(_, s)| s).collect();
        format!("({})", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    /// Aligned text: one line per variable with the assessed equation and
    /// its error tuple.
    pub fn render(&self, assessed: &SparseModel) -> String {
        let eqs: Vec<String> = (0..assessed.dim())
            .map(|j| assessed.render_equation(j, Some(2)))
            .collect();
        let width = eqs.iter().map(|e| e.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (row, eq) in self.rows.iter().zip(&eqs) {
            let pad = width - eq.chars().count();
            let _ = writeln!(out, "{eq}{}    {}", " ".repeat(pad), row.render_tuple());
        }
        out
    }

    /// All non-missing percent errors across variables.
    pub fn all_percents(&self) -> Vec<Option<f64>> {
        self.rows.iter().flat_map(|r| r.percents()).collect()
    }
}

fn error_row(variable: usize, est: &[f64], truth: &[f64]) -> ErrorRow {
    let mut true_terms = Vec::new();
    let mut extras = Vec::new();
    for (i, (&e, &c)) in est.iter().zip(truth).enumerate() {
        if c != 0.0 {
            let error = if e == 0.0 {
                TermError::Missing
            } else {
                TermError::Percent(100.0 * ((e - c) / c).abs())
            };
            true_terms.push(TermEntry {
                term: i,
                true_coef: c,
                estimate: e,
                error,
            });
        } else if e != 0.0 {
            extras.push((i, e));
        }
    }
    ErrorRow {
        variable,
        true_terms,
        extras,
    }
}

fn check_universe(a: &SparseModel, b: &SparseModel) -> Result<()> {
    if !a.library.same_universe(&b.library) {
        return Err(Error::MismatchedLibrary(format!(
            "{} terms in dimension {} vs {} terms in dimension {}",
            a.library.n_terms(),
            a.dim(),
            b.library.n_terms(),
            b.dim()
        )));
    }
    Ok(())
}

/// Percent coefficient errors of `assessed` against `true_model`.
pub fn coefficient_errors(assessed: &SparseModel, true_model: &SparseModel) -> Result<ErrorTable> {
    check_universe(assessed, true_model)?;
    Ok(ErrorTable {
        rows: (0..assessed.dim())
            .map(|j| error_row(j, &assessed.coefficients[j], &true_model.coefficients[j]))
            .collect(),
    })
}

/// A linear relation `0 ≈ −f_k + Σ β_i f_i` as a coefficient vector over
/// the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub target: usize,
    pub r2: f64,
    pub coefs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub variable: usize,
    pub term: usize,
    pub r2: f64,
    /// `(true term, β)`
    pub betas: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformOutcome {
    pub model: SparseModel,
    pub table: ErrorTable,
    pub substitutions: Vec<Substitution>,
    /// Per variable: max relative error before the greedy stage and after
    /// every accepted relation shift.
    pub traces: Vec<Vec<f64>>,
}

fn max_rel_error(xi: &[f64], truth: &[f64], true_terms: &[usize]) -> f64 {
    true_terms
        .iter()
        .map(|&i| ((xi[i] - truth[i]) / truth[i]).abs())
        .fold(0.0, f64::max)
}

/// Minimizes the convex function `f` on `[lo, hi]`: 41-point grid, then
/// golden-section refinement around the best grid point.
pub fn minimize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let step = (hi - lo) / (LAMBDA_GRID - 1) as f64;
    let grid: Vec<f64> = (0..LAMBDA_GRID).map(|k| lo + k as f64 * step).collect();
    let (kbest, _) =
        grid.iter()
            .map(|&x| f(x))
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |(bk, bv), (k, v)| if v < bv { (k, v) } else { (bk, bv) },
            );
    let mut a = grid[kbest.saturating_sub(1)];
    let mut b = grid[(kbest + 1).min(LAMBDA_GRID - 1)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let candidates = [
        (grid[kbest], f(grid[kbest])),
        (c, fc),
        (d, fd),
        (0.5 * (a + b), f(0.5 * (a + b))),
    ];
    candidates
        .into_iter()
        .fold((0.0, f64::INFINITY), |best, cand| {
            if cand.1 < best.1 {
                cand
            } else {
                best
            }
        })
}

/// No-intercept fit of column `target` on `basis`; the constant column
/// participates only if it is in `basis`.
fn relation_fit(theta: &DMatrix<f64>, target: usize, basis: &[usize]) -> (Vec<f64>, f64) {
    let t = column(theta, target);
    let cols: Vec<Vec<f64>> = basis.iter().map(|&i| column(theta, i)).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let fit = span_fit(&t, &refs, false);
    (fit.betas, fit.r2)
}

/// The oracle transform of §2.6 applied per variable: substitute in-span
/// non-true terms by their fit on the true library, then greedily shift
/// along leave-one-out dependence relations while the maximum relative
/// error over true terms strictly decreases.
pub fn closest_to_true_transform(
    discovered: &SparseModel,
    true_model: &SparseModel,
    theta: &DMatrix<f64>,
    r2_threshold: f64,
) -> Result<TransformOutcome> {
    check_universe(discovered, true_model)?;
    if theta.ncols() != discovered.library.n_terms() {
        return Err(Error::InvalidArgument(format!(
            "Θ has {} columns, library has {} terms",
            theta.ncols(),
            discovered.library.n_terms()
        )));
    }
    let n_terms = discovered.library.n_terms();
    let constant = discovered.library.constant_index();
    let mut model = discovered.clone();
    let mut substitutions = Vec::new();
    let mut traces = Vec::new();

    for j in 0..discovered.dim() {
        let truth = &true_model.coefficients[j];
        let true_terms: Vec<usize> = (0..n_terms).filter(|&i| truth[i] != 0.0).collect();
        let mut xi = discovered.coefficients[j].clone();

        // steps 1–3: substitute in-span extras by the true library
        let extras: Vec<usize> = (0..n_terms)
            .filter(|&g| xi[g] != 0.0 && truth[g] == 0.0 && Some(g) != constant)
            .collect();
        for g in extras {
            if true_terms.is_empty() {
                break;
            }
            let (betas, r2) = relation_fit(theta, g, &true_terms);
            if r2 >= r2_threshold {
                let c = xi[g];
                xi[g] = 0.0;
                for (&i, b) in true_terms.iter().zip(&betas) {
                    xi[i] += c * b;
                }
                substitutions.push(Substitution {
                    variable: j,
                    term: g,
                    r2,
                    betas: true_terms.iter().copied().zip(betas).collect(),
                });
            }
        }
        if !true_terms.iter().any(|&i| xi[i] != 0.0) {
            return Err(Error::NoTrueOverlap { variable: j });
        }

        // step 4: dependence relations within the transformed active set
        let mut set: Vec<usize> = (0..n_terms)
            .filter(|&i| xi[i] != 0.0 || truth[i] != 0.0)
            .collect();
        set.sort_unstable();
        let mut relations = Vec::new();
        for &k in &set {
            if Some(k) == constant {
                continue;
            }
            let basis: Vec<usize> = set.iter().copied().filter(|&i| i != k).collect();
            if basis.is_empty() {
                continue;
            }
            let (betas, r2) = relation_fit(theta, k, &basis);
            if r2 >= r2_threshold {
                let mut coefs = vec![0.0; n_terms];
                coefs[k] = -1.0;
                for (&i, b) in basis.iter().zip(&betas) {
                    coefs[i] = *b;
                }
                relations.push(Relation {
                    target: k,
                    r2,
                    coefs,
                });
            }
        }

        // step 5: greedy relation shifts
        let mut err = max_rel_error(&xi, truth, &true_terms);
        let mut trace = vec![err];
        for _ in 0..MAX_GREEDY_STEPS {
            let span = xi.iter().chain(truth).fold(0.0f64, |a, v| a.max(v.abs()));
            let mut best: Option<(f64, usize, f64)> = None;
            for (r_idx, rel) in relations.iter().enumerate() {
                let eval = |lam: f64| {
                    true_terms
                        .iter()
                        .map(|&i| ((xi[i] + lam * rel.coefs[i] - truth[i]) / truth[i]).abs())
                        .fold(0.0, f64::max)
                };
                let (lam, val) = minimize_1d(eval, -span, span);
                if val < err - 1e-12 && best.is_none_or(|(bv, ..)| val < bv) {
                    best = Some((val, r_idx, lam));
                }
            }
            let Some((val, r_idx, lam)) = best else { break };
            for (x, r) in xi.iter_mut().zip(&relations[r_idx].coefs) {
                *x += lam * r;
            }
            err = val;
            trace.push(err);
        }
        traces.push(trace);

        for (i, x) in xi.iter().enumerate() {
            model.library.active[j][i] = *x != 0.0;
        }
        model.coefficients[j] = xi;
    }
    let table = coefficient_errors(&model, true_model)?;
    Ok(TransformOutcome {
        model,
        table,
        substitutions,
        traces,
    })
}
