//! `fit` configuration file: TOML with one section per module.
//!
//! ```toml
//! [data]
//! system = "lorenz"      # synthetic data from the registry, or
//! # train = ["a.csv"]    # trajectory files (validation = [...] optional)
//! noise = 50.0           # required with `system`
//!
//! [pipeline]
//! max_degree = 2
//! seed = 1
//!
//! [cull]
//! balance_limit = "none"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sindy_core::cull::CullConfig;
use sindy_core::dynsys::{system, Trajectory};
use sindy_core::evolve_fom::EvolutionConfig;
use sindy_core::io::load_trajectory;
use sindy_core::model::SparseModel;
use sindy_core::pipeline::{synthetic_dataset, Dataset, RunConfig};
use sindy_core::regress::RegressionConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    pub data: DataSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub smoothing: SmoothingSection,
    #[serde(default)]
    pub regression: RegressionConfig,
    #[serde(default)]
    pub cull: CullConfig,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Registry system to simulate at its §3 initial conditions.
    pub system: Option<String>,
    /// Noise level in percent (synthetic data only).
    pub noise: Option<f64>,
    /// Trajectory duration in seconds; defaults to the registry value.
    pub duration: Option<f64>,
    /// Noise seed; defaults to `pipeline.seed`.
    pub seed: Option<u64>,
    #[serde(default)]
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub validation: Vec<PathBuf>,
    /// Reference model for error tables: a system name or a model file.
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub max_degree: Option<u32>,
    pub include_constant: Option<bool>,
    pub density_threshold: Option<usize>,
    pub restart: Option<bool>,
    pub max_iterations: Option<usize>,
    pub validation_weight: Option<f64>,
    pub selection_tolerance: Option<f64>,
    pub seed: Option<u64>,
    /// `[[variable, "term"], ...]` re-activated before pass 2.
    #[serde(default)]
    pub reinstate: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSection {
    pub window: Option<usize>,
    pub weight_halfwidth: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn missing(key: &str) -> CliError {
    CliError::Usage(format!("missing config key `{key}`"))
}

impl FitFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let f: FitFile =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let d = &f.data;
        match (&d.system, d.train.is_empty()) {
            (None, true) => return Err(missing("data.system` or `data.train")),
            (Some(_), false) => {
                return Err(CliError::Usage(
                    "config: `data.system` and `data.train` are mutually exclusive".into(),
                ))
            }
            (Some(_), true) if d.noise.is_none() => return Err(missing("data.noise")),
            _ => {}
        }
        if d.system.is_none() && (d.noise.is_some() || d.duration.is_some() || d.seed.is_some()) {
            return Err(CliError::Usage(
                "config: `data.noise`, `data.duration` and `data.seed` apply to synthetic data only".into(),
            ));
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn run_config(&self) -> RunConfig {
        let d = RunConfig::default();
        let p = &self.pipeline;
        RunConfig {
            max_degree: p.max_degree.unwrap_or(d.max_degree),
            include_constant: p.include_constant.unwrap_or(d.include_constant),
            smoothing_window: self.smoothing.window,
            weight_halfwidth: self.smoothing.weight_halfwidth,
            regression: self.regression,
            cull: self.cull,
            evolution: self.evolution,
            density_threshold: p.density_threshold.unwrap_or(d.density_threshold),
            restart_enabled: p.restart.unwrap_or(d.restart_enabled),
            max_iterations: p.max_iterations.unwrap_or(d.max_iterations),
            validation_weight: p.validation_weight.unwrap_or(d.validation_weight),
            selection_tolerance: p.selection_tolerance.unwrap_or(d.selection_tolerance),
            seed: p.seed.unwrap_or(d.seed),
            reinstate: p.reinstate.clone(),
        }
    }

    /// Builds the dataset; relative paths resolve against `base`.
    pub fn dataset(&self, base: &Path, run_seed: u64) -> CliResult<Dataset> {
        let d = &self.data;
        let mut data = if let Some(name) = &d.system {
            let spec = system(name)?;
            let duration = d.duration.unwrap_or(spec.duration);
            let noise = d.noise.ok_or_else(|| missing("data.noise"))?;
            synthetic_dataset(&spec, duration, noise, d.seed.unwrap_or(run_seed))?
        } else {
            let load = |paths: &[PathBuf]| -> CliResult<Vec<Trajectory>> {
                paths
                    .iter()
                    .map(|p| Ok(load_trajectory(&base.join(p))?))
                    .collect()
            };
            Dataset {
                train: load(&d.train)?,
                validation: load(&d.validation)?,
                truth: None,
            }
        };
        let dim = data.dim();
        if let Some(t) = data
            .train
            .iter()
            .chain(&data.validation)
            .find(|t| t.dim() != dim)
        {
            return Err(CliError::Usage(format!(
                "trajectories differ in dimension ({} vs {dim})",
                t.dim()
            )));
        }
        if let Some(r) = &d.reference {
            data.truth = Some(load_reference(r, base)?);
        }
        Ok(data)
    }
}

/// A registry system name or a model file path.
pub fn load_reference(r: &str, base: &Path) -> CliResult<SparseModel> {
    if let Ok(spec) = system(r) {
        return Ok(spec.true_model);
    }
    let path = base.join(r);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Usage(format!(
            "reference `{r}` is neither a system nor a readable model file: {e}"
        ))
    })?;
    Ok(SparseModel::parse_model_file(&text)?)
}
