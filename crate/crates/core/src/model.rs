//! Sparse coefficient matrices over a functional library, with the text
//! format used for model dumps and model files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{build_polynomial_library, variable_name, FunctionalLibrary, FunctionalTerm};

/// `ẋ_j = Σ_i coefficients[j][i] · f_i(x)`, restricted to active terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    pub library: FunctionalLibrary,
    /// `[variable][term]`; zero wherever the library mask is inactive.
    pub coefficients: Vec<Vec<f64>>,
}

impl SparseModel {
    pub fn zeros(library: FunctionalLibrary) -> Self {
        let coefficients = vec![vec![0.0; library.n_terms()]; library.dim];
        Self {
            library,
            coefficients,
        }
    }

    /// Builds a model from `(variable, term, coefficient)` triples; only the
    /// listed pairs are active.
    pub fn from_entries(
        mut library: FunctionalLibrary,
        entries: &[(usize, FunctionalTerm, f64)],
    ) -> Result<Self> {
        for row in library.active.iter_mut() {
            row.iter_mut().for_each(|a| *a = false);
        }
        let mut model = Self::zeros(library);
        for (j, term, c) in entries {
            let i = model.library.term_index(term).ok_or_else(|| {
                Error::InvalidArgument(format!("term {} not in library", term.name()))
            })?;
            model.library.active[*j][i] = true;
            model.coefficients[*j][i] = *c;
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.library.dim
    }

    pub fn coefficient(&self, variable: usize, term: usize) -> f64 {
        self.coefficients[variable][term]
    }

    pub fn total_active(&self) -> usize {
        self.library.active_counts().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coefficients.iter().flatten().all(|c| c.is_finite())
    }

    /// Pins coefficients of inactive terms to zero.
    pub fn enforce_mask(&mut self) {
        for (row, mask) in self.coefficients.iter_mut().zip(&self.library.active) {
            for (c, &a) in row.iter_mut().zip(mask) {
                if !a {
                    *c = 0.0;
                }
            }
        }
    }

    /// Terms with a nonzero coefficient in the equation for `variable`.
    pub fn support(&self, variable: usize) -> Vec<usize> {
        self.coefficients[variable]
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c != 0.0).then_some(i))
            .collect()
    }

    /// Re-expresses this model over another library universe. Terms with a
    /// nonzero coefficient must exist in `lib`; the mask becomes this
    /// model's support.
    pub fn embed(&self, lib: &FunctionalLibrary) -> Result<Self> {
        if lib.dim != self.dim() {
            return Err(Error::MismatchedLibrary(format!(
                "dimension {} vs {}",
                self.dim(),
                lib.dim
            )));
        }
        let mut entries = Vec::new();
        for j in 0..self.dim() {
            for i in self.library.active_terms(j) {
                let c = self.coefficients[j][i];
                if c != 0.0 {
                    let term = &self.library.terms[i];
                    if lib.term_index(term).is_none() {
                        return Err(Error::MismatchedLibrary(format!(
                            "term {} is not in the target library",
                            term.name()
                        )));
                    }
                    entries.push((j, term.clone(), c));
                }
            }
        }
        Self::from_entries(lib.clone(), &entries)
    }

    pub fn rhs(&self) -> CompiledRhs {
        CompiledRhs::new(self)
    }

    /// One equation, e.g. `y' = 28 x - 1 y - 1 x*z`. `precision = None`
    /// prints shortest round-trip decimals.
    pub fn render_equation(&self, variable: usize, precision: Option<usize>) -> String {
        let mut s = format!("{}' =", variable_name(variable));
        let mut first = true;
        for i in self.library.active_terms(variable) {
            let c = self.coefficients[variable][i];
            let term = &self.library.terms[i];
            let mag = format_number(c.abs(), precision);
            let neg = c.is_sign_negative() && c != 0.0;
            if first {
                s.push(' ');
                if neg {
                    s.push('-');
                }
            } else {
                s.push_str(if neg { " - " } else { " + " });
            }
            s.push_str(&mag);
            if !term.is_constant() {
                s.push(' ');
                s.push_str(&term.name());
            }
            first = false;
        }
        if first {
            s.push_str(" 0");
        }
        s
    }

    pub fn render(&self, precision: Option<usize>) -> String {
        let mut out = String::new();
        for j in 0..self.dim() {
            let _ = writeln!(out, "{}", self.render_equation(j, precision));
        }
        out
    }

    /// Model file: a header naming the library universe followed by one
    /// equation per line at full precision.
    pub fn to_model_file(&self) -> String {
        let constant = self.library.constant_index().is_some();
        format!(
            "# sparse model dim={} max_degree={} constant={}\n{}",
            self.dim(),
            self.library.max_degree,
            constant,
            self.render(None)
        )
    }

    pub fn parse_model_file(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty model file".into()))?;
        let body = header
            .strip_prefix("# sparse model")
            .ok_or_else(|| Error::Parse("missing `# sparse model` header".into()))?;
        let mut dim = None;
        let mut max_degree = None;
        let mut constant = None;
        for kv in body.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field `{kv}`")))?;
            let bad = || Error::Parse(format!("bad header value `{kv}`"));
            match k {
                "dim" => dim = Some(v.parse::<usize>().map_err(|_| bad())?),
                "max_degree" => max_degree = Some(v.parse::<u32>().map_err(|_| bad())?),
                "constant" => constant = Some(v.parse::<bool>().map_err(|_| bad())?),
                _ => return Err(Error::Parse(format!("unknown header field `{k}`"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("header is missing `{k}`"));
        let dim = dim.ok_or_else(|| missing("dim"))?;
        let lib = build_polynomial_library(
            dim,
            max_degree.ok_or_else(|| missing("max_degree"))?,
            constant.ok_or_else(|| missing("constant"))?,
        )?;
        let mut entries = Vec::new();
        let mut seen = vec![false; dim];
        for line in lines {
            if line.starts_with('#') {
                continue;
            }
            let (j, eq) = parse_equation(line, dim)?;
            if seen[j] {
                return Err(Error::Parse(format!(
                    "duplicate equation for {}",
                    variable_name(j)
                )));
            }
            seen[j] = true;
            for (term, c) in eq {
                entries.push((j, term, c));
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Parse(format!(
                "no equation for {}",
                variable_name(j)
            )));
        }
        Self::from_entries(lib, &entries)
    }
}

fn format_number(v: f64, precision: Option<usize>) -> String {
    match precision {
        None => format!("{v}"),
        Some(p) => {
            let s = format!("{v:.p$}");
            if s.contains('.') {
                let t = s.trim_end_matches('0');
                let t = t
                    .strip_suffix('.')
                    .map(|u| format!("{u}.0"))
                    .unwrap_or_else(|| t.to_string());
                t
            } else {
                s
            }
        }
    }
}

fn parse_equation(line: &str, dim: usize) -> Result<(usize, Vec<(FunctionalTerm, f64)>)> {
    let (lhs, rhs) = line
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("missing `=` in `{line}`")))?;
    let name = lhs
        .trim()
        .strip_suffix('\'')
        .ok_or_else(|| Error::Parse(format!("left side must look like `x'` in `{line}`")))?;
    let j = (0..dim)
        .find(|&j| variable_name(j) == name)
        .ok_or_else(|| Error::Parse(format!("unknown variable `{name}`")))?;

    let tokens: Vec<&str> = rhs.split_whitespace().collect();
    let mut out: Vec<(FunctionalTerm, f64)> = Vec::new();
    if tokens == ["0"] {
        return Ok((j, out));
    }
    let mut k = 0;
    let mut sign = 1.0;
    while k < tokens.len() {
        let tok = tokens[k];
        if tok == "+" || tok == "-" {
            if k == 0 {
                return Err(Error::Parse(format!("leading operator in `{line}`")));
            }
            sign = if tok == "-" { -1.0 } else { 1.0 };
            k += 1;
            continue;
        }
        let c: f64 = tok
            .parse()
            .map_err(|_| Error::Parse(format!("expected a number, found `{tok}` in `{line}`")))?;
        k += 1;
        let term = match tokens.get(k) {
            Some(&t) if t != "+" && t != "-" => {
                k += 1;
                FunctionalTerm::parse(t, dim)?
            }
            _ => FunctionalTerm::constant(dim),
        };
        if out.iter().any(|(t, _)| *t == term) {
            return Err(Error::Parse(format!(
                "term {} repeated in `{line}`",
                term.name()
            )));
        }
        out.push((term, sign * c));
        sign = 1.0;
        if let Some(&t) = tokens.get(k) {
            if t != "+" && t != "-" {
                return Err(Error::Parse(format!("unexpected `{t}` in `{line}`")));
            }
        }
    }
    Ok((j, out))
}

/// Right-hand side evaluator restricted to the terms in use.
#[derive(Debug, Clone)]
pub struct CompiledRhs {
    dim: usize,
    exponents: Vec<Vec<u32>>,
    /// `[used term][variable]`
    coefs: Vec<Vec<f64>>,
}

impl CompiledRhs {
    fn new(model: &SparseModel) -> Self {
        let dim = model.dim();
        let mut exponents = Vec::new();
        let mut coefs = Vec::new();
        for (i, term) in model.library.terms.iter().enumerate() {
            let col: Vec<f64> = (0..dim).map(|j| model.coefficients[j][i]).collect();
            if col.iter().any(|&c| c != 0.0) {
                exponents.push(term.exponents.clone());
                coefs.push(col);
            }
        }
        Self {
            dim,
            exponents,
            coefs,
        }
    }

    pub fn eval(&self, state: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (exps, col) in self.exponents.iter().zip(&self.coefs) {
            let mut f = 1.0;
            for (x, &e) in state.iter().zip(exps) {
                for _ in 0..e {
                    f *= x;
                }
            }
            for j in 0..self.dim {
                out[j] += col[j] * f;
            }
        }
    }
}
