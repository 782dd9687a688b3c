//! `sindy`: simulate benchmark data, fit sparse models, assess them against
//! a reference and re-render artifacts from an iteration log.

mod artifacts;
mod config;
mod error;
mod svg;

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sindy_core::dynsys::{add_noise, simulate, system, NoiseSpec};
use sindy_core::io::{load_trajectory, save_trajectory};
use sindy_core::library::build_polynomial_library;
use sindy_core::model::SparseModel;
use sindy_core::pipeline::{
    assess_model, prepare, prepare_all, read_log, run_full_with, write_log, IterationRecord,
    RunConfig,
};

use crate::config::{load_reference, FitFile};
use crate::error::{CliError, CliResult};

/// Environment variable overriding the output directory.
const OUTPUT_ENV: &str = "SINDY_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "sindy_out";

#[derive(Parser)]
#[command(
    name = "sindy",
    version,
    about = "Sparse equation discovery from noisy time-series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a registry system and write clean and noisy CSVs.
    Simulate {
        #[arg(long)]
        system: String,
        /// Initial condition, comma separated; defaults to the first registry IC.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        ic: Option<Vec<f64>>,
        /// Duration in seconds; defaults to the registry value.
        #[arg(long)]
        duration: Option<f64>,
        /// Sample spacing; defaults to the registry value.
        #[arg(long)]
        dt: Option<f64>,
        /// Noise level in percent of each variable's standard deviation.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// File name stem; defaults to the system name.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run both passes of the pipeline from a TOML config.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `pipeline.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Enables restart on emptied variables.
        #[arg(long)]
        restart: bool,
    },
    /// Compare a model against a reference on one trajectory.
    Assess {
        /// Model file (`# sparse model ...` header).
        #[arg(long)]
        model: PathBuf,
        /// Registry system name or model file.
        #[arg(long)]
        reference: String,
        /// Trajectory CSV supplying Θ for span fits and the transform.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        r2: f64,
        /// Smoothing window in samples; defaults to 200 ms.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render model dumps and FoM mosaics from an iteration log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flag, then environment, then config file, then the default.
fn output_dir(flag: Option<PathBuf>, from_config: Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = flag
        .or_else(|| {
            std::env::var_os(OUTPUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .or(from_config)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    std::fs::create_dir_all(&dir).map_err(|e| {
        CliError::Usage(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate {
            system,
            ic,
            duration,
            dt,
            noise,
            seed,
            name,
            out,
        } => cmd_simulate(&system, ic, duration, dt, noise, seed, name, out),
        Command::Fit {
            config,
            out,
            seed,
            restart,
        } => cmd_fit(&config, out, seed, restart),
        Command::Assess {
            model,
            reference,
            trajectory,
            r2,
            window,
            out,
        } => cmd_assess(&model, &reference, &trajectory, r2, window, out),
        Command::Report { log, out } => cmd_report(&log, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    name: &str,
    ic: Option<Vec<f64>>,
    duration: Option<f64>,
    dt: Option<f64>,
    noise: f64,
    seed: u64,
    stem: Option<String>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let spec = system(name)?;
    let ic = ic.unwrap_or_else(|| spec.default_ics[0].clone());
    let clean = simulate(
        &spec,
        &ic,
        duration.unwrap_or(spec.duration),
        dt.unwrap_or(spec.dt),
    )?;
    let noisy = add_noise(&clean, &NoiseSpec::new(noise, seed))?;
    let dir = output_dir(out, None)?;
    let stem = stem.unwrap_or_else(|| name.to_string());
    for (suffix, traj) in [("clean", &clean), ("noisy", &noisy)] {
        let path = dir.join(format!("{stem}_{suffix}.csv"));
        save_trajectory(&path, traj, false)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_fit(config: &Path, out: Option<PathBuf>, seed: Option<u64>, restart: bool) -> CliResult<()> {
    let file = FitFile::load(config)?;
    let mut cfg = file.run_config();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.restart_enabled |= restart;
    cfg.validate()?;
    let base = config.parent().unwrap_or(Path::new("."));
    let data = file.dataset(base, cfg.seed)?;
    let dir = output_dir(out, file.output.dir.clone())?;

    let log_path = dir.join("iterations.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let (n_train, n_val) = (data.train.len(), data.validation.len());
    let mut records = Vec::new();
    let mut aborted = Vec::new();
    let result = run_full_with(&cfg, &data, |universe, logs| {
        write_log(&mut log, &cfg, universe, n_train, n_val, logs)?;
        log.flush()?;
        for l in logs {
            records.extend(l.records.iter().cloned());
            if let Some(msg) = &l.aborted {
                aborted.push(format!("pass {} home {}: {msg}", l.pass, l.home));
            }
        }
        Ok(())
    });
    drop(log);
    let universe = build_polynomial_library(data.dim(), cfg.max_degree, cfg.include_constant)?;
    artifacts::write_log_artifacts(&dir, &universe, n_train, &records, &cfg)?;
    let res = result?;

    let prepared = prepare_all(&cfg, &data, &res.universe)?;
    let mut report = String::new();
    let mut summary = Vec::new();
    for (k, m) in res.final_models.iter().enumerate() {
        let _ = writeln!(
            report,
            "== home trajectory {k}: pass-1 best {}, pass-2 best {}",
            iteration_label(&res.pass1[k].records, res.best1[k]),
            iteration_label(
                res.pass2.get(k).map_or(&[][..], |l| &l.records),
                res.best2[k]
            )
        );
        let Some(m) = m else {
            report.push_str("no viable model\n\n");
            summary.push(serde_json::Value::Null);
            continue;
        };
        std::fs::write(dir.join(format!("final_model_{k}.txt")), m.to_model_file())?;
        artifacts::write_overlays(
            &dir,
            &format!("overlay_home{k}"),
            m,
            &prepared,
            &cfg.evolution,
        )?;
        report.push_str(&m.render(Some(4)));
        if let Some(a) = &res.assessments[k] {
            report.push_str(&artifacts::assessment_text(m, a));
        }
        report.push('\n');
        println!("model {k}:\n{}", m.render(Some(4)));
        summary.push(serde_json::json!({
            "home": k,
            "model": m.to_model_file(),
            "assessment": res.assessments[k],
        }));
    }
    for a in &aborted {
        let _ = writeln!(report, "aborted: {a}");
    }
    std::fs::write(dir.join("report.txt"), &report)?;
    let summary = serde_json::json!({ "models": summary, "aborted": aborted });
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Pipeline(e.to_string()))?,
    )?;
    println!("artifacts written to {}", dir.display());

    if res.final_models.iter().all(Option::is_none) {
        return Err(CliError::Pipeline(
            "no trajectory produced a viable model".into(),
        ));
    }
    if !aborted.is_empty() {
        return Err(CliError::Pipeline(format!(
            "run aborted: {}",
            aborted.join("; ")
        )));
    }
    Ok(())
}

fn iteration_label(records: &[IterationRecord], best: Option<usize>) -> String {
    match best.and_then(|b| records.get(b)) {
        Some(r) => format!("iteration {}", r.iteration),
        None => "none".into(),
    }
}

fn cmd_assess(
    model: &Path,
    reference: &str,
    trajectory: &Path,
    r2: f64,
    window: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let text = std::fs::read_to_string(model)
        .map_err(|e| CliError::Usage(format!("cannot read model {}: {e}", model.display())))?;
    let model = SparseModel::parse_model_file(&text)?;
    let truth = if system(reference).is_ok() {
        load_reference(reference, Path::new("."))?.embed(&model.library)?
    } else {
        load_reference(reference, Path::new("."))?
    };
    if truth.library.terms != model.library.terms {
        return Err(sindy_core::Error::MismatchedLibrary(format!(
            "model has {} terms over {} variables, reference has {} over {}",
            model.library.n_terms(),
            model.dim(),
            truth.library.n_terms(),
            truth.dim()
        ))
        .into());
    }
    let traj = load_trajectory(trajectory)?;
    if traj.dim() != model.dim() {
        return Err(CliError::Usage(format!(
            "trajectory has {} variables, model has {}",
            traj.dim(),
            model.dim()
        )));
    }
    let mut cfg = RunConfig {
        smoothing_window: window,
        ..Default::default()
    };
    cfg.cull.r2_threshold = r2;
    cfg.validate()?;
    let mut universe = model.library.clone();
    universe.active = vec![vec![true; universe.n_terms()]; universe.dim];
    let prepared = prepare(&traj, &universe, &cfg)?;
    let a = assess_model(&model, &universe, &prepared, Some(&truth), &cfg, 0);
    let text = artifacts::assessment_text(&model, &a);
    print!("{text}");
    let dir = output_dir(out, None)?;
    std::fs::write(dir.join("assessment.txt"), &text)?;
    std::fs::write(
        dir.join("assessment.json"),
        serde_json::to_string_pretty(&a).map_err(|e| CliError::Pipeline(e.to_string()))?,
    )?;
    Ok(())
}

fn cmd_report(log: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let text = std::fs::read_to_string(log)
        .map_err(|e| CliError::Usage(format!("cannot read log {}: {e}", log.display())))?;
    let parsed = read_log(&text)?;
    let cfg: RunConfig = serde_json::from_value(parsed.config.clone())
        .map_err(|e| CliError::Usage(format!("log header config: {e}")))?;
    let dir = output_dir(out, None)?;
    let written = artifacts::write_log_artifacts(
        &dir,
        &parsed.universe,
        parsed.n_train,
        &parsed.records,
        &cfg,
    )?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
