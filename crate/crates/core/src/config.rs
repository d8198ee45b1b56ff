//! Run configuration: a TOML document with one section per module plus a
//! top-level `seed` from which all randomness derives.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::models::ModelConfig;
use crate::objective::ObjectiveConfig;
use crate::trainer::TrainerConfig;

pub const RESOLVED_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub trainer: TrainerConfig,
    pub metrics: MetricsConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Every dotted path in `table` whose last segment is `key`.
fn find_key(table: &toml::Table, key: &str, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if k == key {
            out.push(path.clone());
        }
        if let toml::Value::Table(t) = v {
            find_key(t, key, &path, out);
        }
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> bool {
    let mut parts = path.split('.').peekable();
    let mut cur = table;
    while let Some(p) = parts.next() {
        if parts.peek().is_none() {
            return match cur.get_mut(p) {
                Some(slot) if !slot.is_table() => {
                    *slot = value;
                    true
                }
                _ => false,
            };
        }
        match cur.get_mut(p) {
            Some(toml::Value::Table(t)) => cur = t,
            _ => return false,
        }
    }
    false
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Applies `key=value` overrides. `key` is either dotted (`trainer.base_lr`)
    /// or bare, in which case it must name exactly one entry.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Config> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item.split_once('=').ok_or_else(|| Error::ConfigKey {
                key: item.to_string(),
                reason: "expected key=value".into(),
            })?;
            let key = key.trim();
            let path = if key.contains('.') {
                key.to_string()
            } else {
                let mut hits = Vec::new();
                find_key(&table, key, "", &mut hits);
                match hits.len() {
                    1 => hits.remove(0),
                    0 => {
                        return Err(Error::ConfigKey {
                            key: key.to_string(),
                            reason: "unknown key".into(),
                        })
                    }
                    _ => {
                        return Err(Error::ConfigKey {
                            key: key.to_string(),
                            reason: format!("ambiguous, qualify as one of {}", hits.join(", ")),
                        })
                    }
                }
            };
            if !set_path(&mut table, &path, parse_value(raw.trim())) {
                return Err(Error::ConfigKey {
                    key: key.to_string(),
                    reason: "unknown key".into(),
                });
            }
            let probe: std::result::Result<Config, _> = toml::Value::Table(table.clone()).try_into();
            if let Err(e) = probe {
                return Err(Error::ConfigKey {
                    key: key.to_string(),
                    reason: e.message().to_string(),
                });
            }
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.weights().validate()?;
        self.trainer.validate()?;
        self.model.generator_spec()?;
        if self.objective.clamp_eps <= 0.0 || self.objective.clamp_eps >= 0.5 {
            return Err(Error::Config("objective.clamp_eps must be in (0, 0.5)".into()));
        }
        Ok(())
    }

    /// Writes the resolved configuration next to run outputs.
    pub fn write_resolved(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_NAME);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        let back = Config::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.trainer.base_lr, 2e-4);
        assert_eq!(c.objective.eta, [0.7; 3]);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = Config::from_toml_str("seed = 9\n[trainer]\nepochs_decay = 0\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.trainer.epochs_decay, 0);
        assert_eq!(c.trainer.epochs_constant, 100);
    }

    #[test]
    fn unknown_file_key_is_named() {
        let err = Config::from_toml_str("[trainer]\nlearning_rate = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn overrides() {
        let c = Config::default()
            .with_overrides(&["epochs_constant=1", "trainer.epochs_decay=0", "levels=[256]", "seed=4"])
            .unwrap();
        assert_eq!(c.trainer.epochs_constant, 1);
        assert_eq!(c.trainer.epochs_decay, 0);
        assert_eq!(c.trainer.levels, vec![256]);
        assert_eq!(c.seed, 4);
        let c = Config::default().with_overrides(&["root=/tmp/faces"]).unwrap();
        assert_eq!(c.dataset.root, std::path::PathBuf::from("/tmp/faces"));
        assert_ne!(c.hash(), Config::default().hash());
    }

    #[test]
    fn bad_overrides_name_the_key() {
        for (o, key) in [("nonsense=1", "nonsense"), ("trainer.nope=1", "trainer.nope"), ("base_lr=abc", "base_lr")] {
            match Config::default().with_overrides(&[o]) {
                Err(Error::ConfigKey { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{o}: {other:?}"),
            }
        }
        assert!(Config::default().with_overrides(&["levels=[]"]).is_err());
    }
}
