use std::fs;
use std::path::{Path, PathBuf};

use elsg_core::barrier::{BarrierConfig, ConstraintSpec};
use elsg_core::classk::ClassKFn;
use elsg_core::controller::SineReference;
use elsg_core::sim::{scenario, ModelConfig, Scenario, SimSettings};
use elsg_core::synthesis::{SamplingConstants, SelectionPolicy, SynthesisReport};
use serde::{Deserialize, Serialize};

/// A run configuration file. `scenario` picks a built-in preset; every other top-level key
/// overrides the preset's value. Without a preset all of `spec`, `alpha`, `beta`, `delta0`,
/// `eta0`, `reference`, `settings`, `x0` are required.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<ConstraintSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<ClassKFn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<ClassKFn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<SelectionPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<SineReference>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settings: Option<SimSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xv0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

/// Barrier parameters for `simulate` and `verify`: a synthesis report, or explicit values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// A configuration error with the file it came from.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn parse(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
    serde_yaml::from_str(text).map_err(|e| match e.location() {
        Some(loc) => ConfigError(format!("{origin}:{}:{}: {e}", loc.line(), loc.column())),
        None => ConfigError(format!("{origin}: {e}")),
    })
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

fn need<T>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError(format!("missing key `{key}` (or set `scenario` to a preset)")))
}

/// Where barrier parameters come from.
pub enum ParamSource {
    Report(PathBuf, Box<SynthesisReport>),
    Explicit(BarrierConfig, Option<SamplingConstants>),
    Missing(PathBuf),
}

impl RunConfig {
    /// The run described by this file: the preset with overrides applied.
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        let base = match &self.scenario {
            Some(id) => Some(scenario(id).map_err(|e| ConfigError(e.to_string()))?),
            None => None,
        };
        let b = base;
        let s = Scenario {
            id: self.id.clone().or(b.as_ref().map(|b| b.id.clone())).unwrap_or_else(|| "run".into()),
            model: self.model.clone().or(b.as_ref().map(|b| b.model.clone())).unwrap_or_default(),
            spec: need(self.spec.clone().or(b.as_ref().map(|b| b.spec.clone())), "spec")?,
            alpha: need(self.alpha.or(b.as_ref().map(|b| b.alpha)), "alpha")?,
            beta: need(self.beta.or(b.as_ref().map(|b| b.beta)), "beta")?,
            delta0: need(self.delta0.or(b.as_ref().map(|b| b.delta0)), "delta0")?,
            eta0: need(self.eta0.or(b.as_ref().map(|b| b.eta0)), "eta0")?,
            policy: self.policy.clone().or(b.as_ref().map(|b| b.policy.clone())).unwrap_or_default(),
            reference: need(self.reference.clone().or(b.as_ref().map(|b| b.reference.clone())), "reference")?,
            settings: need(self.settings.clone().or(b.as_ref().map(|b| b.settings.clone())), "settings")?,
            x0: need(self.x0.clone().or(b.as_ref().map(|b| b.x0.clone())), "x0")?,
            xv0: self.xv0.clone().or(b.as_ref().map(|b| b.xv0.clone())).unwrap_or_else(|| vec![0.0; 2]),
        };
        s.spec.validate().map_err(|e| ConfigError(format!("spec: {e}")))?;
        if s.x0.len() != s.spec.dof() || s.xv0.len() != s.spec.dof() {
            return Err(ConfigError(format!("x0 and xv0 must have {} entries", s.spec.dof())));
        }
        Ok(s)
    }

    /// Output directory, relative to the configuration file's directory.
    pub fn output_dir(&self, base: &Path) -> PathBuf {
        let dir = self.output.as_ref().map(|o| o.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        base.join(dir)
    }

    pub fn report_path(&self, base: &Path, id: &str) -> PathBuf {
        match self.params.as_ref().and_then(|p| p.report.clone()) {
            Some(p) => base.join(p),
            None => self.output_dir(base).join(format!("{id}.report.yaml")),
        }
    }

    pub fn params(&self, base: &Path, id: &str) -> Result<ParamSource, ConfigError> {
        if let Some(cfg) = self.params.as_ref().and_then(|p| p.barrier.clone()) {
            return Ok(ParamSource::Explicit(cfg, self.params.as_ref().and_then(|p| p.sampling)));
        }
        let path = self.report_path(base, id);
        if !path.exists() {
            return Ok(ParamSource::Missing(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let report: SynthesisReport =
            serde_yaml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Ok(ParamSource::Report(path, Box::new(report)))
    }
}
