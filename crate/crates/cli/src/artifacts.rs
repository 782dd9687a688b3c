//! Run artifacts: per-iteration model dumps, FoM mosaics (SVG + CSV),
//! trajectory overlays and assessment reports.
//!
//! Dumps and mosaics depend only on the iteration log, so `fit` and
//! `report` produce identical files through [`write_log_artifacts`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sindy_core::cull::CullKind;
use sindy_core::evolve_fom::{
    evolution_start, evolve_partial, initial_condition_at, EvolutionConfig,
};
use sindy_core::library::{variable_name, FunctionalLibrary};
use sindy_core::model::SparseModel;
use sindy_core::pipeline::{
    select_best_model, Assessment, IterationRecord, Prepared, RunConfig, RunLog,
};

use crate::error::CliResult;
use crate::svg::{Canvas, Panel, Series, PALETTE};

/// Records grouped by `(pass, home)` in log order.
pub fn group_runs(records: &[IterationRecord]) -> BTreeMap<(u8, usize), Vec<IterationRecord>> {
    let mut runs: BTreeMap<(u8, usize), Vec<IterationRecord>> = BTreeMap::new();
    for r in records {
        runs.entry((r.pass, r.home)).or_default().push(r.clone());
    }
    runs
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> CliResult<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    written.push(path);
    Ok(())
}

/// Model dumps and FoM mosaics for every `(pass, home)` run in `records`.
pub fn write_log_artifacts(
    dir: &Path,
    universe: &FunctionalLibrary,
    n_train: usize,
    records: &[IterationRecord],
    cfg: &RunConfig,
) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    for ((pass, home), recs) in group_runs(records) {
        let log = RunLog {
            pass,
            home,
            records: recs,
            aborted: None,
        };
        let best = select_best_model(&log, cfg.validation_weight, cfg.selection_tolerance).ok();
        let stem = format!("pass{pass}_home{home}");
        write(
            dir,
            &format!("models_{stem}.txt"),
            &model_dump(universe, &log.records, best),
            &mut written,
        )?;
        let (svg, csv) = mosaic(universe.dim, n_train, &log.records, best, &stem);
        write(dir, &format!("mosaic_{stem}.svg"), &svg, &mut written)?;
        write(dir, &format!("mosaic_{stem}.csv"), &csv, &mut written)?;
    }
    Ok(written)
}

fn describe_event(universe: &FunctionalLibrary, r: &IterationRecord) -> String {
    let e = &r.event;
    let kind = match e.kind {
        CullKind::LinDep => "lin-dep cull",
        CullKind::Threshold => "threshold cull",
        CullKind::Restore => "restore",
        CullKind::None => return "stop".into(),
    };
    let mut s = kind.to_string();
    if let (Some(j), Some(i)) = (e.variable, e.term) {
        let _ = write!(s, " {}': {}", variable_name(j), universe.terms[i].name());
    }
    if let Some(r2) = e.r2 {
        let _ = write!(s, " (R2 {r2:.3})");
    }
    s
}

/// Text dump: one block per iteration with the model at that iteration.
pub fn model_dump(
    universe: &FunctionalLibrary,
    records: &[IterationRecord],
    best: Option<usize>,
) -> String {
    let mut out = String::new();
    for (idx, r) in records.iter().enumerate() {
        let counts: Vec<String> = r.active_counts.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "# pass {} home {} iteration {}: counts ({}), {}{}",
            r.pass,
            r.home,
            r.iteration,
            counts.join(", "),
            describe_event(universe, r),
            if Some(idx) == best {
                "  [selected]"
            } else {
                ""
            }
        );
        out.push_str(&r.model.to_model(universe).render(Some(4)));
        out.push('\n');
    }
    out
}

type FomRow = (
    &'static str,
    (f64, f64),
    fn(&sindy_core::evolve_fom::FomSuite) -> &Vec<f64>,
);

const FOM_ROWS: [FomRow; 5] = [
    ("in-envelope fraction", (0.0, 1.0), |s| &s.in_envelope_frac),
    ("std relative error", (-1.0, 1.0), |s| &s.std_rel_err),
    ("FFT power correlation", (-1.0, 1.0), |s| &s.fft_power_corr),
    ("histogram correlation", (-1.0, 1.0), |s| &s.hist_corr),
    ("in-bounds fraction", (0.0, 1.0), |s| &s.in_bounds_frac),
];

fn trajectory_label(k: usize, home: usize, n_train: usize) -> String {
    if k == home {
        format!("train {k} (home)")
    } else if k < n_train {
        format!("train {k}")
    } else {
        format!("validation {}", k - n_train)
    }
}

/// FoM-vs-iteration panels (rows: active counts then FoMs; columns:
/// trajectories), plus the same values as a long-format CSV.
pub fn mosaic(
    dim: usize,
    n_train: usize,
    records: &[IterationRecord],
    best: Option<usize>,
    title: &str,
) -> (String, String) {
    let n_traj = records
        .iter()
        .map(|r| r.foms.len())
        .max()
        .unwrap_or(0)
        .max(1);
    let home = records.first().map_or(0, |r| r.home);
    let x_max = records.last().map_or(1.0, |r| r.iteration as f64).max(1.0);
    let iters: Vec<f64> = records.iter().map(|r| r.iteration as f64).collect();
    let mut markers: Vec<(f64, &str, bool)> = records
        .iter()
        .filter(|r| r.event.kind == CullKind::Restore)
        .map(|r| (r.iteration as f64, "#f0a030", false))
        .collect();
    if let Some(b) = best {
        markers.push((records[b].iteration as f64, "#444", true));
    }

    let (pw, ph) = (240.0, 130.0);
    let mut canvas = Canvas::new(
        pw * n_traj as f64 + 20.0,
        ph * (FOM_ROWS.len() + 1) as f64 + 40.0,
    );
    canvas.text(10.0, 18.0, 13.0, &format!("FoM mosaic {title}"));
    let mut csv = String::from("iteration,trajectory,panel,variable,value\n");

    let count_max = records
        .iter()
        .flat_map(|r| r.active_counts.iter())
        .copied()
        .max()
        .unwrap_or(1) as f64;
    for r in records {
        for (j, c) in r.active_counts.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},,active_count,{},{}",
                r.iteration,
                variable_name(j),
                c
            );
        }
    }
    for k in 0..n_traj {
        let x0 = 10.0 + pw * k as f64;
        let series = (0..dim)
            .map(|j| Series {
                color: PALETTE[j % PALETTE.len()],
                width: 1.2,
                points: records
                    .iter()
                    .zip(&iters)
                    .map(|(r, &x)| r.active_counts.get(j).map(|&c| (x, c as f64)))
                    .collect(),
            })
            .collect();
        canvas.panel(
            x0,
            30.0,
            pw,
            ph,
            &Panel {
                title: format!("{}: active functionals", trajectory_label(k, home, n_train)),
                x_range: (0.0, x_max),
                y_range: (0.0, count_max),
                series,
                markers: markers.clone(),
            },
        );
        for (row, (name, range, get)) in FOM_ROWS.iter().enumerate() {
            let series = (0..dim)
                .map(|j| Series {
                    color: PALETTE[j % PALETTE.len()],
                    width: 1.0,
                    points: records
                        .iter()
                        .zip(&iters)
                        .map(|(r, &x)| {
                            let s = r.foms.get(k)?.as_ref()?;
                            get(s).get(j).map(|&v| (x, v))
                        })
                        .collect(),
                })
                .collect();
            canvas.panel(
                x0,
                30.0 + ph * (row + 1) as f64,
                pw,
                ph,
                &Panel {
                    title: (*name).to_string(),
                    x_range: (0.0, x_max),
                    y_range: *range,
                    series,
                    markers: markers.clone(),
                },
            );
        }
    }
    for r in records {
        for (k, f) in r.foms.iter().enumerate() {
            let Some(s) = f else { continue };
            for (name, _, get) in FOM_ROWS.iter() {
                for (j, v) in get(s).iter().enumerate() {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{}",
                        r.iteration,
                        k,
                        name,
                        variable_name(j),
                        v
                    );
                }
            }
            if let Some(st) = s.stability {
                let _ = writeln!(csv, "{},{},stability,,{}", r.iteration, k, st);
            }
        }
    }
    (canvas.finish(), csv)
}

/// `model` evolved on each prepared trajectory next to the noisy and
/// smoothed series: one SVG (rows: variables, columns: trajectories) and one
/// CSV per trajectory.
pub fn write_overlays(
    dir: &Path,
    stem: &str,
    model: &SparseModel,
    prepared: &[Prepared],
    ecfg: &EvolutionConfig,
) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    let dim = model.dim();
    let (pw, ph) = (300.0, 130.0);
    let mut canvas = Canvas::new(pw * prepared.len() as f64 + 20.0, ph * dim as f64 + 40.0);
    canvas.text(
        10.0,
        18.0,
        13.0,
        &format!("{stem}: noisy (grey), smoothed (black), model (red)"),
    );
    for (k, p) in prepared.iter().enumerate() {
        let r = &p.reference;
        let n = r.n();
        let kpts = ecfg.ic_points.max(1).min(n);
        let start = evolution_start(0, kpts);
        let evolved = initial_condition_at(&r.noisy, &r.weights, kpts, 0)
            .ok()
            .map(|ic| evolve_partial(model, &ic, r.dt, n - start, &ecfg.limits));
        let model_at = |t: usize, j: usize| -> Option<f64> {
            let e = evolved.as_ref()?;
            let i = t.checked_sub(start)?;
            (i < e.values.nrows()).then(|| e.values[(i, j)])
        };
        let mut csv = String::from("t");
        for prefix in ["noisy", "smoothed", "model"] {
            for j in 0..dim {
                let _ = write!(csv, ",{prefix}_{}", variable_name(j));
            }
        }
        csv.push('\n');
        for t in 0..n {
            let _ = write!(csv, "{}", p.noisy.time(t));
            for j in 0..dim {
                let _ = write!(csv, ",{}", r.noisy[(t, j)]);
            }
            for j in 0..dim {
                let _ = write!(csv, ",{}", r.smoothed[(t, j)]);
            }
            for j in 0..dim {
                match model_at(t, j) {
                    Some(v) => {
                        let _ = write!(csv, ",{v}");
                    }
                    None => csv.push(','),
                }
            }
            csv.push('\n');
        }
        write(dir, &format!("{stem}_traj{k}.csv"), &csv, &mut written)?;

        let stride = n.div_ceil(800).max(1);
        let t_of = |t: usize| p.noisy.time(t);
        for j in 0..dim {
            let col = |get: &dyn Fn(usize) -> f64| -> Vec<Option<(f64, f64)>> {
                (0..n)
                    .step_by(stride)
                    .map(|t| Some((t_of(t), get(t))))
                    .collect()
            };
            let lo = r.noisy.column(j).min();
            let hi = r.noisy.column(j).max();
            let model_pts = (0..n)
                .step_by(stride)
                .map(|t| {
                    model_at(t, j)
                        .filter(|v| v.is_finite())
                        .map(|v| (t_of(t), v))
                })
                .collect();
            canvas.panel(
                10.0 + pw * k as f64,
                30.0 + ph * j as f64,
                pw,
                ph,
                &Panel {
                    title: format!("trajectory {k}: {}", variable_name(j)),
                    x_range: (t_of(0), t_of(n - 1)),
                    y_range: (lo, hi),
                    series: vec![
                        Series {
                            color: "#bbb",
                            width: 0.5,
                            points: col(&|t| r.noisy[(t, j)]),
                        },
                        Series {
                            color: "#000",
                            width: 1.0,
                            points: col(&|t| r.smoothed[(t, j)]),
                        },
                        Series {
                            color: "#d62728",
                            width: 1.0,
                            points: model_pts,
                        },
                    ],
                    markers: vec![],
                },
            );
        }
    }
    write(dir, &format!("{stem}.svg"), &canvas.finish(), &mut written)?;
    Ok(written)
}

/// Span reports, error tables, substitutions and traces for one model.
pub fn assessment_text(model: &SparseModel, a: &Assessment) -> String {
    let mut out = String::new();
    let universe = &model.library;
    if !a.alternatives.entries.is_empty() {
        out.push_str("in-span alternatives for culled functionals (* = R2 above threshold):\n");
        out.push_str(&a.alternatives.render(model));
    }
    if !a.redundancy.entries.is_empty() {
        out.push_str("leave-one-out redundancy of retained functionals:\n");
        out.push_str(&a.redundancy.render(model));
    }
    if let Some(t) = &a.raw_errors {
        out.push_str("raw coefficient errors, % (inf = true term missing, * = extra term):\n");
        out.push_str(&t.render(model));
    }
    if let Some(c) = &a.closest {
        if let Some(e) = &c.error {
            let _ = writeln!(out, "closest-to-true transform failed: {e}");
        } else {
            let m = c.model.to_model(universe);
            out.push_str("closest-to-true transform, % errors:\n");
            out.push_str(&c.errors.render(&m));
            for s in &c.substitutions {
                let betas: Vec<String> = s
                    .betas
                    .iter()
                    .map(|(i, b)| format!("{b:.4} {}", universe.terms[*i].name()))
                    .collect();
                let _ = writeln!(
                    out,
                    "  substituted {}': {} -> {} (R2 {:.3})",
                    variable_name(s.variable),
                    universe.terms[s.term].name(),
                    betas.join(" + "),
                    s.r2
                );
            }
            for (j, tr) in c.traces.iter().enumerate() {
                let steps: Vec<String> = tr.iter().map(|v| format!("{:.1}", 100.0 * v)).collect();
                let _ = writeln!(
                    out,
                    "  {}' max error trace (%): {}",
                    variable_name(j),
                    steps.join(" -> ")
                );
            }
            if let Some(d) = &c.behavior_deviation {
                let d: Vec<String> = d.iter().map(|v| format!("{v:.3}")).collect();
                let _ = writeln!(
                    out,
                    "  behavior deviation (relative RMS): ({})",
                    d.join(", ")
                );
            }
        }
    }
    out
}
