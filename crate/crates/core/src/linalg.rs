//! Dense least-squares and small statistics helpers.
//!
//! Least squares is solved with a Householder QR factorization using column
//! pivoting on an equilibrated copy of the design matrix (every column scaled
//! to unit norm before factoring). The pivoted diagonal of `R` gives the
//! effective rank, which the regression stage uses to detect linear
//! dependence between functionals.

use crate::error::{Error, Result};

/// Relative tolerance on `|R_kk| / |R_00|` below which a pivot is treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coef: Vec<f64>,
    pub rank: usize,
}

/// Solves `min ||A x - b||` where `A` is given as a list of columns.
///
/// Returns `RankDeficient` when the effective rank is below the column count.
pub fn lstsq(columns: &[Vec<f64>], b: &[f64], rank_tol: f64) -> Result<Vec<f64>> {
    let sol = lstsq_truncated(columns, b, rank_tol)?;
    if sol.rank < columns.len() {
        return Err(Error::RankDeficient {
            rank: sol.rank,
            n_cols: columns.len(),
        });
    }
    Ok(sol.coef)
}

/// Same as [`lstsq`] but returns the basic solution of a rank-deficient
/// system: coefficients of the dropped (trailing pivot) columns are zero.
pub fn lstsq_truncated(columns: &[Vec<f64>], b: &[f64], rank_tol: f64) -> Result<LstsqSolution> {
    let n = columns.len();
    let m = b.len();
    if columns.iter().any(|c| c.len() != m) {
        return Err(Error::InvalidArgument(
            "design columns and target differ in length".into(),
        ));
    }
    if n == 0 {
        return Ok(LstsqSolution {
            coef: vec![],
            rank: 0,
        });
    }

    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let mut rhs = b.to_vec();

    // Column equilibration. Zero columns keep scale 1 and end up as the
    // trailing pivots, which the rank test then drops.
    let mut scale = vec![1.0; n];
    for (j, col) in a.iter_mut().enumerate() {
        let nrm = norm2(col);
        if nrm > 0.0 && nrm.is_finite() {
            scale[j] = 1.0 / nrm;
            col.iter_mut().for_each(|v| *v *= scale[j]);
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    let steps = n.min(m);
    let mut diag = Vec::with_capacity(steps);

    for k in 0..steps {
        // choose the remaining column with the largest trailing norm
        let mut best = k;
        let mut best_norm = -1.0;
        for (j, col) in a.iter().enumerate().skip(k) {
            let s: f64 = col[k..].iter().map(|v| v * v).sum();
            if s > best_norm {
                best_norm = s;
                best = j;
            }
        }
        a.swap(k, best);
        perm.swap(k, best);

        let alpha_norm = best_norm.max(0.0).sqrt();
        if alpha_norm == 0.0 {
            diag.push(0.0);
            continue;
        }
        let x0 = a[k][k];
        let alpha = if x0 >= 0.0 { -alpha_norm } else { alpha_norm };
        // v = x - alpha e1, stored in place of column k (below the diagonal)
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            let apply = |col: &mut [f64]| {
                let dot: f64 = v.iter().zip(col.iter()).map(|(p, q)| p * q).sum();
                let f = 2.0 * dot / vnorm2;
                col.iter_mut()
                    .zip(v.iter())
                    .for_each(|(c, vi)| *c -= f * vi);
            };
            for col in a.iter_mut().skip(k + 1) {
                apply(&mut col[k..]);
            }
            apply(&mut rhs[k..]);
        }
        a[k][k] = alpha;
        for v in a[k][k + 1..].iter_mut() {
            *v = 0.0;
        }
        diag.push(alpha);
    }

    let r00 = diag.first().map(|d| d.abs()).unwrap_or(0.0);
    let rank = if r00 == 0.0 {
        0
    } else {
        diag.iter().take_while(|d| d.abs() > rank_tol * r00).count()
    };

    // back substitution on the leading rank x rank block
    let mut y = vec![0.0; n];
    for i in (0..rank).rev() {
        let mut s = rhs[i];
        for j in i + 1..rank {
            s -= a[j][i] * y[j];
        }
        y[i] = s / a[i][i];
    }

    let mut coef = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        coef[p] = y[k] * scale[p];
    }
    Ok(LstsqSolution { coef, rank })
}

/// Result of regressing one series on a basis of other series.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanFit {
    pub betas: Vec<f64>,
    pub intercept: f64,
    /// Coefficient of determination `1 - SS_res / SS_tot` (centered `SS_tot`),
    /// clamped to `[0, 1]`. Zero-variance targets report 0.
    pub r2: f64,
}

/// Regresses `target` on `basis`, optionally with an intercept.
///
/// Never fails on collinear bases: the truncated basic solution is used.
pub fn span_fit(target: &[f64], basis: &[&[f64]], intercept: bool) -> SpanFit {
    let m = target.len();
    let t_mean = mean(target);
    let ss_tot: f64 = target.iter().map(|v| (v - t_mean).powi(2)).sum();

    let (betas, icpt) = if basis.is_empty() {
        (vec![], if intercept { t_mean } else { 0.0 })
    } else if intercept {
        let means: Vec<f64> = basis.iter().map(|c| mean(c)).collect();
        let cols: Vec<Vec<f64>> = basis
            .iter()
            .zip(&means)
            .map(|(c, mu)| c.iter().map(|v| v - mu).collect())
            .collect();
        let y: Vec<f64> = target.iter().map(|v| v - t_mean).collect();
        let sol = lstsq_truncated(&cols, &y, DEFAULT_RANK_TOL).expect("consistent shapes");
        let icpt = t_mean
            - sol
                .coef
                .iter()
                .zip(&means)
                .map(|(b, mu)| b * mu)
                .sum::<f64>();
        (sol.coef, icpt)
    } else {
        let cols: Vec<Vec<f64>> = basis.iter().map(|c| c.to_vec()).collect();
        let sol = lstsq_truncated(&cols, target, DEFAULT_RANK_TOL).expect("consistent shapes");
        (sol.coef, 0.0)
    };

    let mut ss_res = 0.0;
    for t in 0..m {
        let mut pred = icpt;
        for (b, col) in betas.iter().zip(basis) {
            pred += b * col[t];
        }
        ss_res += (target[t] - pred).powi(2);
    }
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        0.0
    };
    SpanFit {
        betas,
        intercept: icpt,
        r2,
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Median; even-length inputs average the two middle values.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * N)` (1-based,
/// clamped to `[1, N]`) of the ascending sort.
pub fn percentile_nearest_rank(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    let rank = ((p / 100.0) * n as f64).ceil() as isize;
    let idx = rank.clamp(1, n as isize) as usize - 1;
    s[idx]
}

/// Pearson correlation clamped to `[-1, 1]`.
///
/// Bitwise-identical inputs give exactly 1; a zero-variance input gives 0.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.is_empty() {
        return 0.0;
    }
    if a == b && std_dev(a) > 0.0 {
        return 1.0;
    }
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}
