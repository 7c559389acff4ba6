//! Flat dotted-key configuration: `{"model.hidden": 50, "train.batch_size": 32}`.
//!
//! Every key must name a field of the default settings tree. Values from the
//! file are applied first and `--set key=value` overrides after them.

use std::fs;
use std::path::Path;

use crossdoc::data::SyntheticSpec;
use crossdoc::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SyntheticSpec,
}

/// Keys owned by `--seed` rather than the settings file.
const SEED_KEYS: [&str; 2] = ["train.seed", "synth.seed"];

impl Settings {
    pub fn load(config: Option<&Path>, overrides: &[String], seed: u64) -> Result<Settings, String> {
        let mut tree = serde_json::to_value(Settings::default()).map_err(|e| e.to_string())?;
        if let Some(path) = config {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let flat: Map<String, Value> =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            for (key, value) in flat {
                set_key(&mut tree, &key, value)?;
            }
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| format!("override {item:?} is not key=value"))?;
            // bare words such as `shallow` are taken as strings
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_key(&mut tree, key.trim(), value)?;
        }
        let mut settings: Settings = serde_json::from_value(tree).map_err(|e| format!("invalid settings: {e}"))?;
        settings.train.seed = seed;
        settings.synth.seed = seed;
        Ok(settings)
    }
}

fn set_key(tree: &mut Value, key: &str, value: Value) -> Result<(), String> {
    if SEED_KEYS.contains(&key) {
        return Err(format!("{key} is set with --seed"));
    }
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| format!("unknown setting {key:?}"))?;
    }
    if node.is_object() {
        return Err(format!("{key:?} names a group; set one of its fields"));
    }
    *node = value;
    Ok(())
}
