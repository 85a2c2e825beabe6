//! Run configuration: a TOML file that mirrors the model and training types, plus
//! dotted-key overrides (`training.steps.0.iterations=50`).
//!
//! Resolution order is profile defaults → file → overrides. Every key an
//! override names must already exist in the resolved document, so a typo fails
//! before any work starts instead of being silently ignored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::cdnet::LabelMode;
use crate::error::{Error, Result};
use crate::pipeline::{ModelConfig, TrainingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub label_mode: LabelMode,
    /// Paste 1 or 2 procedural sprites into training frames that carry no foreground.
    pub paste_objects: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            label_mode: LabelMode::Strict,
            paste_objects: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub pca_rank: usize,
    pub rpca_rank: usize,
    pub rpca_threshold: f64,
    /// Threshold used when a baseline writes masks rather than sweeping.
    pub theta: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            pca_rank: 5,
            rpca_rank: 2,
            rpca_threshold: 0.05,
            theta: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig {
            profile: "desk".into(),
            model: ModelConfig::desk(),
            training: TrainingConfig::desk(),
            data: DataConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }

    pub fn paper() -> Self {
        RunConfig {
            profile: "paper".into(),
            model: ModelConfig::paper(),
            training: TrainingConfig::paper(),
            data: DataConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.training.validate()?;
        let b = &self.baselines;
        if b.rpca_rank == 0 {
            return Err(Error::Config("baselines.rpca_rank must be at least 1".into()));
        }
        if !(b.rpca_threshold > 0.0 && b.rpca_threshold.is_finite()) {
            return Err(Error::Config("baselines.rpca_threshold must be positive".into()));
        }
        if !(b.theta >= 0.0 && b.theta.is_finite()) {
            return Err(Error::Config("baselines.theta must be non-negative".into()));
        }
        Ok(())
    }

    /// Applies `key=value` overrides. Values are parsed as TOML literals, and a
    /// bare word that is not valid TOML is taken as a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for raw in overrides {
            let (key, value) = parse_override(raw.as_ref())?;
            set_dotted(&mut doc, &key, value)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Profile defaults, then the optional file, then the overrides.
    pub fn resolve<S: AsRef<str>>(profile: Option<&str>, file: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let base = match (file, profile) {
            (Some(path), _) => Self::load(path)?,
            (None, Some(name)) => Self::profile(name)?,
            (None, None) => Self::desk(),
        };
        if let (Some(_), Some(name)) = (file, profile) {
            if base.profile != name {
                return Err(Error::Config(format!(
                    "config file declares profile `{}` but `{name}` was requested",
                    base.profile
                )));
            }
        }
        base.with_overrides(overrides)
    }
}

fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{raw}` has an empty key")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn set_dotted(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let unknown = || Error::Config(format!("unknown config key `{key}`"));
    let mut node = doc;
    for part in key.split('.') {
        node = match node {
            toml::Value::Table(t) => t.get_mut(part).ok_or_else(unknown)?,
            toml::Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| unknown())?;
                a.get_mut(i).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
    }
    if node.is_table() || node.is_array() {
        return Err(Error::Config(format!("`{key}` names a section, not a value")));
    }
    *node = match (&*node, value) {
        // `lr=1` should still mean 1.0 for float keys.
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    Ok(())
}
