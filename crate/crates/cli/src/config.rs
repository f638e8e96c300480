//! Run configuration: one TOML file per run, flat sections per command.

use std::path::{Path, PathBuf};

use kerr_core::dimer::DimerStudyOptions;
use kerr_core::nonlinear::NonlinearConfig;
use kerr_core::DomainSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error in {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A contrast value or a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    One(f64),
    Sweep(Vec<f64>),
}

impl TauSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TauSpec::One(t) => vec![*t],
            TauSpec::Sweep(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeConfig {
    /// stop the branch once `‖u‖² ≥ n_max`
    pub n_max: f64,
    /// continuation step `Δa`
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    NonlinearConfig::default().max_step
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub newton_tol: f64,
    pub max_iter: usize,
    pub max_halvings: u32,
    pub max_points: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = NonlinearConfig::default();
        Self { newton_tol: d.newton_tol, max_iter: d.max_iter, max_halvings: d.max_halvings, max_points: d.max_points }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// number of leading eigenpairs written
    pub count: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { count: 6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimerConfig {
    pub asym_steps: usize,
    pub asym_step: f64,
    /// 2D: also scan the antisymmetric branch
    pub odd_branch: bool,
}

impl Default for DimerConfig {
    fn default() -> Self {
        let d = DimerStudyOptions::default();
        Self { asym_steps: d.asym_steps, asym_step: d.asym_step, odd_branch: d.odd_branch }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub tau: TauSpec,
    /// 3D: eigenpair index; 2D: 0 = principal resonance, j ≥ 1 = j-th eigenpair of K̃_D
    #[serde(default)]
    pub mode_index: usize,
    pub amplitude: Option<AmplitudeConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub dimer: DimerConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.domain.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let taus = self.tau.values();
        if taus.is_empty() {
            return Err(ConfigError::Invalid("tau sweep is empty".into()));
        }
        if let Some(t) = taus.iter().find(|t| !(t.is_finite() && **t > 1.0)) {
            return Err(ConfigError::Invalid(format!("tau must exceed 1, got {t}")));
        }
        if let Some(a) = &self.amplitude {
            if !(a.n_max > 0.0 && a.step > 0.0) {
                return Err(ConfigError::Invalid("amplitude.n_max and amplitude.step must be positive".into()));
            }
        }
        if self.spectrum.count == 0 {
            return Err(ConfigError::Invalid("spectrum.count must be positive".into()));
        }
        if self.dimer.asym_steps == 0 || self.dimer.asym_step.is_nan() || self.dimer.asym_step <= 0.0 {
            return Err(ConfigError::Invalid("dimer.asym_steps and dimer.asym_step must be positive".into()));
        }
        self.nonlinear().validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn nonlinear(&self) -> NonlinearConfig {
        let t = &self.tolerances;
        NonlinearConfig {
            newton_tol: t.newton_tol,
            max_iter: t.max_iter,
            max_halvings: t.max_halvings,
            max_points: t.max_points,
            max_step: self.amplitude.as_ref().map_or_else(default_step, |a| a.step),
            ..NonlinearConfig::default()
        }
    }

    pub fn dimer_options(&self) -> DimerStudyOptions {
        DimerStudyOptions {
            tau: self.tau.values()[0],
            n_max: self.amplitude.as_ref().map(|a| a.n_max),
            asym_steps: self.dimer.asym_steps,
            asym_step: self.dimer.asym_step,
            odd_branch: self.dimer.odd_branch,
            nonlinear: self.nonlinear(),
        }
    }
}
