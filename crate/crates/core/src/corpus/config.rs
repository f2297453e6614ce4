//! Config files are either a JSON object or `key=value` lines; dotted keys
//! address nested fields (`encoder.dim=32`).

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::training::TrainConfig;

fn scalar(raw: &str) -> Value {
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if !v.is_object() && !v.is_array() {
            return v;
        }
    }
    Value::String(raw.to_string())
}

/// Parses config text into a JSON value.
pub fn parse_config_text(text: &str) -> Result<Value> {
    if text.trim_start().starts_with('{') {
        return Ok(serde_json::from_str(text)?);
    }
    let mut root = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("line {}: bad key {key:?}", i + 1)));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
            node = entry
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("line {}: {p} is both a value and a section", i + 1)))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), scalar(value));
    }
    Ok(Value::Object(root))
}

pub fn read_config(path: impl AsRef<Path>) -> Result<Value> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// A training run described by one config file: the [`TrainConfig`] keys
/// plus file locations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainJob {
    pub config: TrainConfig,
    pub train_data: PathBuf,
    pub dev_data: Option<PathBuf>,
    pub kg: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub log: Option<PathBuf>,
}

const JOB_KEYS: [&str; 5] = ["train_data", "dev_data", "kg", "checkpoint", "log"];

impl TrainJob {
    /// Relative paths are resolved against `base`.
    pub fn from_value(value: Value, base: &Path) -> Result<Self> {
        let Value::Object(mut map) = value else {
            return Err(Error::Config("config must be an object".into()));
        };
        let mut take = |k: &str| -> Result<Option<PathBuf>> {
            match map.remove(k) {
                None => Ok(None),
                Some(Value::String(s)) => Ok(Some(base.join(s))),
                Some(other) => Err(Error::Config(format!("{k} must be a path, got {other}"))),
            }
        };
        let [train, dev, kg, ckpt, log] = JOB_KEYS.map(|k| take(k));
        let config: TrainConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(TrainJob {
            config,
            train_data: train?.ok_or_else(|| Error::Config("train_data is required".into()))?,
            dev_data: dev?,
            kg: kg?,
            checkpoint: ckpt?.unwrap_or_else(|| base.join("checkpoint.json")),
            log: log?,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_value(read_config(path)?, base)
    }
}
