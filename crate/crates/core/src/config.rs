//! Experiment configuration: every tunable grouped by section and
//! addressable by a dotted key such as `train.lr_g`.
//!
//! Config files are JSON. Sections may be nested objects, flat dotted keys,
//! or a mix; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datapipe::AugmentConfig;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::LossConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossConfig,
}

/// Rewrite `{"a.b": 1}` into `{"a": {"b": 1}}`, recursively.
fn expand_dotted(value: Value) -> Result<Value> {
    let Value::Object(map) = value else {
        return Ok(value);
    };
    let mut out = Value::Object(Map::new());
    for (key, v) in map {
        let v = expand_dotted(v)?;
        let mut patch = v;
        for part in key.rsplit('.') {
            if part.is_empty() {
                return Err(Error::Config(format!("malformed key `{key}`")));
            }
            let mut m = Map::new();
            m.insert(part.to_string(), patch);
            patch = Value::Object(m);
        }
        merge(&mut out, patch);
    }
    Ok(out)
}

/// Deep-merge `patch` into `base`; objects merge key by key, anything else
/// replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with a JSON document.
    pub fn from_json(doc: Value) -> Result<Self> {
        Self::default().merged(doc)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(doc)
    }

    /// This config overlaid with `patch` (nested or dotted keys).
    pub fn merged(&self, patch: Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, expand_dotted(patch)?);
        let cfg: ExperimentConfig =
            serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Set one dotted key. The value is parsed as JSON when possible and
    /// taken as a string otherwise.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut patch = Map::new();
        patch.insert(key.to_string(), value);
        *self = self.merged(Value::Object(patch))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        self.generator.validate()?;
        self.loss.validate()?;
        crate::discriminator::Discriminator::new(&self.discriminator)?;
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dotted_and_nested_keys_agree() {
        let a = ExperimentConfig::from_json(json!({"train.lr_g": 0.002, "generator": {"use_aspp": false}})).unwrap();
        let b = ExperimentConfig::from_json(json!({"train": {"lr_g": 0.002}, "generator.use_aspp": false})).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.lr_g, 0.002);
        assert!(!a.generator.use_aspp);
        assert_eq!(a.train.lr_d, TrainConfig::default().lr_d);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(json!({"train.lr_x": 1})).is_err());
        assert!(ExperimentConfig::from_json(json!({"nonsense": 1})).is_err());
    }

    #[test]
    fn set_parses_values() {
        let mut c = ExperimentConfig::default();
        c.set("generator.output_stride", "16").unwrap();
        c.set("train.gan_enabled", "false").unwrap();
        assert_eq!(c.generator.output_stride, 16);
        assert!(!c.train.gan_enabled);
        assert!(c.set("generator.output_stride", "sixteen").is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
