//! Experiment configuration files (TOML).
//!
//! ```toml
//! [problem]
//! noise_variance = 1.0
//!
//! [problem.spectrum]
//! kind = "power_law"        # or "explicit" with `eigenvalues = [...]`
//! dimension = 8
//! exponent = 1.0
//!
//! [problem.init]            # optional; this is the default
//! kind = "deterministic"    # "centered" or "explicit" (with `mean = [...]`)
//! second_moment = 1.0       # scalar or per-coordinate list
//!
//! [schedules.step]
//! kind = "step_decay"       # constant, step_decay, batch_ramp, seesaw, cosine_steps
//! lr = 0.001
//! batch = 1
//! lr_decay = 2.0
//! phase_samples = [4000, 4000, 4000]
//!
//! [schedules.seesaw]
//! kind = "seesaw"
//! lr = 0.001
//! batch = 1
//! lr_decay = 1.4142135623730951
//! batch_ramp = 1.4142135623730951
//! phase_samples = [4000, 4000, 4000]
//!
//! [run]
//! engine = "exact"          # "mc" or "both" (needs [run.mc])
//! family = "sgd"            # or "nsgd"
//! compare = ["seesaw", "step"]
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "json", "svg"]
//! ```
//!
//! Unknown keys anywhere are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use seesaw_core::montecarlo::McConfig;
use seesaw_core::nsgd::NsgdMode;
use seesaw_core::problem::{make_power_law_spectrum, ProblemError, ProblemInstance, Spectrum};
use seesaw_core::schedules::{
    cosine_to_step_cuts, reference_from_cut_plan, seesaw_from_cut_plan, CutPlan, OptimizerFamily, ScheduleError,
    ScheduleSpec,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("[run] {field} references schedule `{name}`, but no [schedules.{name}] block exists")]
    UnknownSchedule { field: &'static str, name: String },
    #[error("[run] engine = \"{0}\" needs a [run.mc] block")]
    MissingMc(&'static str),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("[problem]: {0}")]
    Problem(#[from] ProblemError),
    #[error("[schedules.{name}]: {source}")]
    Schedule { name: String, source: ScheduleError },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub schedules: BTreeMap<String, ScheduleConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub spectrum: SpectrumConfig,
    pub noise_variance: f64,
    #[serde(default)]
    pub init: InitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumConfig {
    PowerLaw {
        dimension: usize,
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Explicit {
        eigenvalues: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Moments {
    Uniform(f64),
    PerCoordinate(Vec<f64>),
}

impl Moments {
    fn expand(&self, d: usize) -> Vec<f64> {
        match self {
            Moments::Uniform(v) => vec![*v; d],
            Moments::PerCoordinate(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// `delta_0 = sqrt(m0)`.
    Deterministic {
        second_moment: Moments,
    },
    /// Zero-mean Gaussian start.
    Centered {
        second_moment: Moments,
    },
    Explicit {
        second_moment: Moments,
        mean: Moments,
    },
}

/// Without an `[problem.init]` block: deterministic start with `m0 = 1`.
impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Deterministic {
            second_moment: Moments::Uniform(1.0),
        }
    }
}

/// Largest power-law dimension a config may request.
pub const MAX_DIMENSION: usize = 1 << 20;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutVariant {
    /// Constant batch, learning rate cut by `alpha`.
    Reference,
    /// Learning rate cut by `sqrt(alpha)`, batch ramped by `alpha`.
    Seesaw,
}

/// Schedule blocks. `step_decay` and `seesaw` take either explicit
/// `phase_samples` or a reference cut plan (`cut_steps` + `total_steps`,
/// each phase then holding `steps * batch` samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant {
        lr: f64,
        batch: f64,
        phase_samples: Vec<u64>,
    },
    StepDecay {
        lr: f64,
        batch: f64,
        lr_decay: f64,
        #[serde(default)]
        phase_samples: Option<Vec<u64>>,
        #[serde(default)]
        cut_steps: Option<Vec<u64>>,
        #[serde(default)]
        total_steps: Option<u64>,
    },
    BatchRamp {
        lr: f64,
        batch: f64,
        batch_ramp: f64,
        phase_samples: Vec<u64>,
    },
    /// Explicit form: `lr_decay`, `batch_ramp`, `phase_samples`. Cut-plan
    /// form: `cut_steps`, `total_steps`, `decay_per_cut` (the reference's
    /// factor; the learning rate is cut by its square root and the batch
    /// ramped by it).
    Seesaw {
        lr: f64,
        batch: f64,
        #[serde(default)]
        lr_decay: Option<f64>,
        #[serde(default)]
        batch_ramp: Option<f64>,
        #[serde(default)]
        phase_samples: Option<Vec<u64>>,
        #[serde(default)]
        cut_steps: Option<Vec<u64>>,
        #[serde(default)]
        total_steps: Option<u64>,
        #[serde(default)]
        decay_per_cut: Option<f64>,
    },
    CosineSteps {
        variant: CutVariant,
        lr: f64,
        batch: f64,
        total_steps: u64,
        alpha: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Exact,
    Mc,
    Both,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Exact => "exact",
            Engine::Mc => "mc",
            Engine::Both => "both",
        }
    }

    pub fn exact(self) -> bool {
        matches!(self, Engine::Exact | Engine::Both)
    }

    pub fn mc(self) -> bool {
        matches!(self, Engine::Mc | Engine::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub record_every: u64,
    #[serde(default = "default_max_dimension")]
    pub max_dimension: usize,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_stride() -> u64 {
    1
}

fn default_max_dimension() -> usize {
    1024
}

impl McSettings {
    pub fn to_config(&self) -> McConfig {
        McConfig {
            trials: self.trials,
            seed: self.seed,
            record_every: self.record_every,
            max_dimension: self.max_dimension,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub engine: Engine,
    #[serde(default = "default_family")]
    pub family: OptimizerFamily,
    #[serde(default)]
    pub nsgd_mode: NsgdMode,
    /// Schedules to run, by name; all of them when absent.
    #[serde(default)]
    pub schedules: Option<Vec<String>>,
    /// Exactly two schedule names to compare phase by phase.
    #[serde(default)]
    pub compare: Option<Vec<String>>,
    #[serde(default = "default_inflation")]
    pub lr_inflation: f64,
    #[serde(default)]
    pub allow_divergent: bool,
    #[serde(default)]
    pub mc: Option<McSettings>,
}

fn default_family() -> OptimizerFamily {
    OptimizerFamily::Sgd
}

fn default_inflation() -> f64 {
    1.01
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Exact,
            family: default_family(),
            nsgd_mode: NsgdMode::default(),
            schedules: None,
            compare: None,
            lr_inflation: default_inflation(),
            allow_divergent: false,
            mc: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Keep every `record_stride`-th step of exact trajectories (phase ends
    /// are always kept).
    #[serde(default = "default_stride")]
    pub record_stride: u64,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
            record_stride: 1,
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|e| match e {
        ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schedules.is_empty() {
            return Err(invalid(
                "schedules",
                "at least one [schedules.<name>] block is required",
            ));
        }
        if let Some(names) = &self.run.schedules {
            if names.is_empty() {
                return Err(invalid("run.schedules", "empty list"));
            }
            for name in names {
                if !self.schedules.contains_key(name) {
                    return Err(ConfigError::UnknownSchedule {
                        field: "schedules",
                        name: name.clone(),
                    });
                }
            }
        }
        if let Some(pair) = &self.run.compare {
            if pair.len() != 2 {
                return Err(invalid(
                    "run.compare",
                    format!("needs exactly two names, got {}", pair.len()),
                ));
            }
            for name in pair {
                if !self.schedules.contains_key(name) {
                    return Err(ConfigError::UnknownSchedule {
                        field: "compare",
                        name: name.clone(),
                    });
                }
            }
        }
        if self.run.engine.mc() && self.run.mc.is_none() {
            return Err(ConfigError::MissingMc(self.run.engine.as_str()));
        }
        if let Some(mc) = &self.run.mc {
            mc.to_config()
                .validate()
                .map_err(|e| invalid("run.mc", e.to_string()))?;
        }
        if !(self.run.lr_inflation.is_finite() && self.run.lr_inflation >= 1.0) {
            return Err(invalid("run.lr_inflation", "must be finite and >= 1"));
        }
        if self.output.record_stride == 0 {
            return Err(invalid("output.record_stride", "must be positive"));
        }
        self.build_problem()?;
        for name in self.schedules.keys() {
            self.build_schedule(name)?;
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<ProblemInstance, ConfigError> {
        let p = &self.problem;
        if let SpectrumConfig::PowerLaw { dimension, .. } = p.spectrum {
            if dimension > MAX_DIMENSION {
                return Err(invalid(
                    "problem.spectrum.dimension",
                    format!("{dimension} exceeds the limit of {MAX_DIMENSION}"),
                ));
            }
        }
        let spectrum = match &p.spectrum {
            SpectrumConfig::PowerLaw {
                dimension,
                exponent,
                scale,
            } => make_power_law_spectrum(*dimension, *exponent, *scale)?,
            SpectrumConfig::Explicit { eigenvalues } => Spectrum::new(eigenvalues.clone())?,
        };
        let d = spectrum.dimension();
        Ok(match &p.init {
            InitConfig::Deterministic { second_moment } => {
                ProblemInstance::with_deterministic_init(spectrum, p.noise_variance, second_moment.expand(d))?
            }
            InitConfig::Centered { second_moment } => {
                ProblemInstance::with_centered_init(spectrum, p.noise_variance, second_moment.expand(d))?
            }
            InitConfig::Explicit { second_moment, mean } => {
                ProblemInstance::new(spectrum, p.noise_variance, second_moment.expand(d), mean.expand(d))?
            }
        })
    }

    pub fn build_schedule(&self, name: &str) -> Result<ScheduleSpec, ConfigError> {
        let block = self.schedules.get(name).ok_or_else(|| ConfigError::UnknownSchedule {
            field: "schedules",
            name: name.to_string(),
        })?;
        let family = self.run.family;
        let wrap = |source| ConfigError::Schedule {
            name: name.to_string(),
            source,
        };
        let from_plan = |plan: CutPlan, variant: CutVariant, lr: f64, batch: f64| match variant {
            CutVariant::Reference => reference_from_cut_plan(&plan, lr, batch, family),
            CutVariant::Seesaw => seesaw_from_cut_plan(&plan, lr, batch).map(|s| ScheduleSpec {
                optimizer_family: family,
                ..s
            }),
        };
        let field = |key: &str| format!("schedules.{name}.{key}");
        match block {
            ScheduleConfig::Constant {
                lr,
                batch,
                phase_samples,
            } => ScheduleSpec::constant(*lr, *batch, phase_samples.clone(), family).map_err(wrap),
            ScheduleConfig::BatchRamp {
                lr,
                batch,
                batch_ramp,
                phase_samples,
            } => ScheduleSpec::new(*lr, *batch, 1.0, *batch_ramp, phase_samples.clone(), family).map_err(wrap),
            ScheduleConfig::StepDecay {
                lr,
                batch,
                lr_decay,
                phase_samples,
                cut_steps,
                total_steps,
            } => match (phase_samples, cut_steps, total_steps) {
                (Some(samples), None, None) => {
                    ScheduleSpec::new(*lr, *batch, *lr_decay, 1.0, samples.clone(), family).map_err(wrap)
                }
                (None, Some(cuts), Some(total)) => CutPlan::new(cuts.clone(), *total, *lr_decay)
                    .and_then(|plan| from_plan(plan, CutVariant::Reference, *lr, *batch))
                    .map_err(wrap),
                _ => Err(invalid(
                    &field("phase_samples"),
                    "give either `phase_samples` or both `cut_steps` and `total_steps`",
                )),
            },
            ScheduleConfig::Seesaw {
                lr,
                batch,
                lr_decay,
                batch_ramp,
                phase_samples,
                cut_steps,
                total_steps,
                decay_per_cut,
            } => match (
                lr_decay,
                batch_ramp,
                phase_samples,
                cut_steps,
                total_steps,
                decay_per_cut,
            ) {
                (Some(a), Some(b), Some(samples), None, None, None) => {
                    ScheduleSpec::new(*lr, *batch, *a, *b, samples.clone(), family).map_err(wrap)
                }
                (None, None, None, Some(cuts), Some(total), Some(decay)) => CutPlan::new(cuts.clone(), *total, *decay)
                    .and_then(|plan| from_plan(plan, CutVariant::Seesaw, *lr, *batch))
                    .map_err(wrap),
                _ => Err(invalid(
                    &field("kind"),
                    "seesaw needs either `lr_decay`, `batch_ramp`, `phase_samples` \
                     or `cut_steps`, `total_steps`, `decay_per_cut`",
                )),
            },
            ScheduleConfig::CosineSteps {
                variant,
                lr,
                batch,
                total_steps,
                alpha,
            } => cosine_to_step_cuts(*total_steps, *alpha)
                .and_then(|plan| from_plan(plan, *variant, *lr, *batch))
                .map_err(wrap),
        }
    }

    /// Schedule names to run, in order.
    pub fn selected_schedules(&self) -> Vec<String> {
        match &self.run.schedules {
            Some(names) => names.clone(),
            None => self.schedules.keys().cloned().collect(),
        }
    }

    pub fn mc_config(&self) -> Option<McConfig> {
        self.run.mc.as_ref().map(McSettings::to_config)
    }
}
