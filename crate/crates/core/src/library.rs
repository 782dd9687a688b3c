//! Polynomial functional libraries.
//!
//! A library is an ordered list of monomials plus a per-variable activity
//! mask: `active[j][i] == false` means the coefficient of term `i` in the
//! equation for variable `j` is pinned to zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{median, percentile_nearest_rank};

const NAMES: [&str; 6] = ["x", "y", "z", "w", "u", "v"];

/// Display name of state variable `j`: `x, y, z, w, u, v`, then `x7, x8, ...`.
pub fn variable_name(j: usize) -> String {
    NAMES
        .get(j)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("x{}", j + 1))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionalTerm {
    pub exponents: Vec<u32>,
}

impl FunctionalTerm {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn constant(dim: usize) -> Self {
        Self {
            exponents: vec![0; dim],
        }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    pub fn involves(&self, variable: usize) -> bool {
        self.exponents.get(variable).copied().unwrap_or(0) > 0
    }

    pub fn eval(&self, state: &[f64]) -> f64 {
        let mut acc = 1.0;
        for (x, &e) in state.iter().zip(&self.exponents) {
            for _ in 0..e {
                acc *= x;
            }
        }
        acc
    }

    /// Renders e.g. `x^2*z`; the constant term renders as `1`.
    pub fn name(&self) -> String {
        if self.is_constant() {
            return "1".to_string();
        }
        let mut parts = Vec::new();
        for (j, &e) in self.exponents.iter().enumerate() {
            match e {
                0 => {}
                1 => parts.push(variable_name(j)),
                _ => parts.push(format!("{}^{}", variable_name(j), e)),
            }
        }
        parts.join("*")
    }

    /// Inverse of [`FunctionalTerm::name`].
    pub fn parse(s: &str, dim: usize) -> Result<Self> {
        let s = s.trim();
        let mut exps = vec![0u32; dim];
        if s == "1" {
            return Ok(Self { exponents: exps });
        }
        for factor in s.split('*') {
            let (var, pow) = match factor.split_once('^') {
                Some((v, p)) => (
                    v.trim(),
                    p.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::Parse(format!("bad exponent in `{factor}`")))?,
                ),
                None => (factor.trim(), 1),
            };
            let j = (0..dim)
                .find(|&j| variable_name(j) == var)
                .ok_or_else(|| Error::Parse(format!("unknown variable `{var}` in term `{s}`")))?;
            exps[j] += pow;
        }
        Ok(Self { exponents: exps })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalLibrary {
    pub dim: usize,
    pub max_degree: u32,
    pub terms: Vec<FunctionalTerm>,
    /// `active[variable][term]`
    pub active: Vec<Vec<bool>>,
}

impl FunctionalLibrary {
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn active_terms(&self, variable: usize) -> Vec<usize> {
        self.active[variable]
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect()
    }

    pub fn active_count(&self, variable: usize) -> usize {
        self.active[variable].iter().filter(|&&a| a).count()
    }

    pub fn active_counts(&self) -> Vec<usize> {
        (0..self.dim).map(|j| self.active_count(j)).collect()
    }

    pub fn term_index(&self, term: &FunctionalTerm) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    pub fn constant_index(&self) -> Option<usize> {
        self.terms.iter().position(|t| t.is_constant())
    }

    /// Same term list (the "library universe"), ignoring activity masks.
    pub fn same_universe(&self, other: &FunctionalLibrary) -> bool {
        self.dim == other.dim && self.terms == other.terms
    }

    /// Deactivates every term containing `variable`, for all equations.
    pub fn drop_terms_with(&mut self, variable: usize) {
        for (i, t) in self.terms.iter().enumerate() {
            if t.involves(variable) {
                for row in self.active.iter_mut() {
                    row[i] = false;
                }
            }
        }
    }
}

/// All monomials in `dim` variables of total degree `<= max_degree`, ordered
/// by degree and then by descending exponent vector (`x^2, x*y, x*z, y^2, ...`).
pub fn build_polynomial_library(
    dim: usize,
    max_degree: u32,
    include_constant: bool,
) -> Result<FunctionalLibrary> {
    if dim == 0 || max_degree == 0 {
        return Err(Error::InvalidArgument(
            "library needs dim >= 1 and max_degree >= 1".into(),
        ));
    }
    let mut terms = Vec::new();
    let start = if include_constant { 0 } else { 1 };
    for deg in start..=max_degree {
        let mut cur = vec![0u32; dim];
        push_compositions(deg, 0, &mut cur, &mut terms);
    }
    let active = vec![vec![true; terms.len()]; dim];
    Ok(FunctionalLibrary {
        dim,
        max_degree,
        terms,
        active,
    })
}

fn push_compositions(
    remaining: u32,
    pos: usize,
    cur: &mut Vec<u32>,
    out: &mut Vec<FunctionalTerm>,
) {
    if pos == cur.len() - 1 {
        cur[pos] = remaining;
        out.push(FunctionalTerm::new(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        push_compositions(remaining - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Θ with one row per sample of `states` (`n x dim`) and one column per term.
pub fn evaluate_library(lib: &FunctionalLibrary, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if states.ncols() != lib.dim {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} variables, library expects {}",
            states.ncols(),
            lib.dim
        )));
    }
    let n = states.nrows();
    let mut theta = DMatrix::zeros(n, lib.n_terms());
    let mut row = vec![0.0; lib.dim];
    for t in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = states[(t, j)];
        }
        for (i, term) in lib.terms.iter().enumerate() {
            theta[(t, i)] = term.eval(&row);
        }
    }
    Ok(theta)
}

/// Per-term magnitude rescaling used to rank coefficients for culling.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaleFactors {
    /// `(term index, v_i)` for each active term, in the order given.
    pub factors: Vec<(usize, f64)>,
    /// The percentile `M` of the active medians.
    pub percentile_value: f64,
}

impl RescaleFactors {
    pub fn get(&self, term: usize) -> Option<f64> {
        self.factors
            .iter()
            .find(|(i, _)| *i == term)
            .map(|(_, v)| *v)
    }
}

/// `v_i = med(|f_i|) / M` with `M` the nearest-rank `percentile_m` of the
/// active medians, all medians taken over `fit_timepoints`.
///
/// A term whose median is exactly zero gets the smallest positive factor so
/// it ranks first for culling.
pub fn rescale_factors(
    theta: &DMatrix<f64>,
    active_terms: &[usize],
    fit_timepoints: &[usize],
    percentile_m: f64,
) -> Result<RescaleFactors> {
    if active_terms.is_empty() {
        return Err(Error::InvalidArgument("no active terms to rescale".into()));
    }
    let rows: Vec<usize> = if fit_timepoints.is_empty() {
        (0..theta.nrows()).collect()
    } else {
        fit_timepoints.to_vec()
    };
    let meds: Vec<f64> = active_terms
        .iter()
        .map(|&i| {
            let vals: Vec<f64> = rows.iter().map(|&t| theta[(t, i)].abs()).collect();
            median(&vals)
        })
        .collect();
    let m = percentile_nearest_rank(&meds, percentile_m);
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::DegeneratePercentile);
    }
    let factors = active_terms
        .iter()
        .zip(&meds)
        .map(|(&i, &med)| (i, (med / m).max(f64::MIN_POSITIVE)))
        .collect();
    Ok(RescaleFactors {
        factors,
        percentile_value: m,
    })
}
