//! Run configuration: TOML files, presets and command-line overrides.
//!
//! A file either names a preset, whose sections act as defaults, or spells
//! every section out. A section given in the file replaces the preset's
//! section as a whole.
//!
//! ```toml
//! preset = "example1"
//! seed = 7
//!
//! [run]
//! t_end = 0.05
//!
//! [output]
//! out_dir = "out/ex1"
//! format = "pgm"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::FluidConfig;
use crate::io::SnapshotFormat;
use crate::kinetic::{KineticInit, KineticParams, Setup1d, StudyConfig};
use crate::macro_solver::{Schedule, StepConfig};
use crate::mesh::{build_grid, GridSpec};
use crate::model::ModelParams;
use crate::presets::{self, InitialData};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl ToString) -> Self {
        ConfigError::Invalid { field: field.to_string(), message: message.to_string() }
    }
}

/// The raw file layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub grid: Option<GridSpec>,
    pub model: Option<ModelParams>,
    pub step: Option<StepConfig>,
    pub fluid: Option<FluidConfig>,
    pub initial: Option<InitialData>,
    pub run: Option<RunSection>,
    pub output: Option<OutputSection>,
    pub kinetic: Option<KineticSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub t_end: f64,
    /// Explicit output times; ignored when `output.snapshot_interval` is set.
    pub snapshot_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub out_dir: Option<PathBuf>,
    pub format: Option<SnapshotFormat>,
    pub snapshot_interval: Option<f64>,
}

/// Settings of the ε-convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KineticSection {
    pub eps: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub r: f64,
    pub cells: usize,
    pub length: f64,
    pub t_end: f64,
    pub dt: f64,
    pub macro_dt: f64,
    pub amplitude: f64,
    pub init: KineticInit,
}

impl Default for KineticSection {
    fn default() -> Self {
        let base = StudyConfig::diffusion_default();
        Self {
            eps: vec![0.4, 0.2, 0.1],
            sigma1: base.setup.kinetic.sigma1,
            sigma2: base.setup.kinetic.sigma2,
            r: base.setup.kinetic.r,
            cells: base.setup.cells,
            length: base.setup.length,
            t_end: base.t_end,
            dt: base.dt,
            macro_dt: base.macro_dt,
            amplitude: base.amplitude,
            init: base.init,
        }
    }
}

impl KineticSection {
    pub fn study(&self) -> StudyConfig {
        let base = StudyConfig::diffusion_default();
        StudyConfig {
            setup: Setup1d {
                cells: self.cells,
                length: self.length,
                kinetic: KineticParams {
                    sigma1: self.sigma1,
                    sigma2: self.sigma2,
                    r: self.r,
                    eps: self.eps.first().copied().unwrap_or(1.0),
                },
                model: base.setup.model,
            },
            init: self.init,
            t_end: self.t_end,
            dt: self.dt,
            macro_dt: self.macro_dt,
            amplitude: self.amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    pub format: SnapshotFormat,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub grid: GridSpec,
    pub model: ModelParams,
    pub step: StepConfig,
    pub fluid: Option<FluidConfig>,
    pub initial: InitialData,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub output: OutputConfig,
    pub kinetic: KineticSection,
}

/// Command-line overrides, applied after the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<SnapshotFormat>,
}

fn require<T>(v: Option<T>, field: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::invalid(field, "missing section (no preset given)"))
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        Self::from_file(ConfigFile { preset: Some(name.to_string()), ..Default::default() })
    }

    pub fn from_file(file: ConfigFile) -> Result<Self, ConfigError> {
        let preset = match &file.preset {
            Some(name) => Some(presets::by_name(name).map_err(|e| ConfigError::invalid("preset", e))?),
            None => None,
        };
        let output = file.output.clone().unwrap_or_default();
        let cfg = match preset {
            Some(p) => {
                let (t_end, times) = match &file.run {
                    Some(r) => (r.t_end, r.snapshot_times.clone().unwrap_or_else(|| vec![r.t_end])),
                    None => (p.t_end, p.snapshot_times.clone()),
                };
                RunConfig {
                    name: p.name,
                    seed: file.seed.unwrap_or(0),
                    grid: file.grid.unwrap_or(p.grid),
                    model: file.model.unwrap_or(p.model),
                    step: file.step.unwrap_or(p.step),
                    fluid: file.fluid.or(p.fluid),
                    initial: file.initial.unwrap_or(p.initial),
                    t_end,
                    snapshot_times: times,
                    output: OutputConfig {
                        out_dir: output.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
                        format: output.format.unwrap_or_default(),
                    },
                    kinetic: file.kinetic.unwrap_or_default(),
                }
            }
            None => {
                let run = require(file.run, "run")?;
                RunConfig {
                    name: "custom".into(),
                    seed: file.seed.unwrap_or(0),
                    grid: require(file.grid, "grid")?,
                    model: require(file.model, "model")?,
                    step: require(file.step, "step")?,
                    fluid: file.fluid,
                    initial: require(file.initial, "initial")?,
                    t_end: run.t_end,
                    snapshot_times: run.snapshot_times.unwrap_or_else(|| vec![run.t_end]),
                    output: OutputConfig {
                        out_dir: output.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
                        format: output.format.unwrap_or_default(),
                    },
                    kinetic: file.kinetic.unwrap_or_default(),
                }
            }
        };
        let mut cfg = cfg;
        if let Some(interval) = output.snapshot_interval {
            if !(interval > 0.0) {
                return Err(ConfigError::invalid("output.snapshot_interval", "must be positive"));
            }
            cfg.snapshot_times = Schedule::every(cfg.t_end, interval).snapshot_times;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(t) = o.t_end {
            self.t_end = t;
            self.snapshot_times.retain(|&s| s < t);
            self.snapshot_times.push(t);
        }
        if let Some(dt) = o.dt {
            self.step.dt = dt;
            if let Some(f) = &mut self.fluid {
                f.dt = dt;
            }
        }
        if let Some(nx) = o.nx {
            self.grid.nx = nx;
        }
        if let Some(ny) = o.ny {
            self.grid.ny = ny;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            self.output.out_dir = dir.clone();
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        build_grid(self.grid.clone()).map_err(|e| ConfigError::invalid("grid", e))?;
        self.model.validate().map_err(|e| ConfigError::invalid("model", e))?;
        self.step.validate().map_err(|e| ConfigError::invalid("step", e))?;
        if let Some(f) = &self.fluid {
            f.validate().map_err(|e| ConfigError::invalid("fluid", e))?;
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(ConfigError::invalid("run.t_end", format!("must be positive, got {}", self.t_end)));
        }
        if self.snapshot_times.iter().any(|&t| !(t >= 0.0) || t > self.t_end) {
            return Err(ConfigError::invalid("run.snapshot_times", "times must lie in [0, t_end]"));
        }
        let k = &self.kinetic;
        if k.eps.is_empty() || k.eps.iter().any(|&e| !(e > 0.0)) || k.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ConfigError::invalid("kinetic.eps", "must be positive and decreasing"));
        }
        let study = k.study();
        study.setup.validate().map_err(|e| ConfigError::invalid("kinetic", e))?;
        if !(k.t_end > 0.0 && k.dt > 0.0 && k.macro_dt > 0.0) {
            return Err(ConfigError::invalid("kinetic", "t_end, dt and macro_dt must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.t_end, self.snapshot_times.clone())
    }
}

/// Parse TOML text; errors carry the line and column.
pub fn parse_config(text: &str, origin: &Path) -> Result<RunConfig, ConfigError> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
    RunConfig::from_file(file)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text, path)
}
