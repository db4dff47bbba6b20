//! Flag and JSON-file configuration.
//!
//! Every subcommand's arguments are one struct that clap fills from flags
//! and serde fills from `--config`. Both are turned into JSON objects and
//! the flag object is laid over the file object, so flags win.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Drops unset flags: `null`, and `false` for switches that were not given.
fn set_fields(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m
            .into_iter()
            .filter(|(_, v)| !matches!(v, Value::Null | Value::Bool(false)))
            .collect(),
        _ => Map::new(),
    }
}

pub fn merge<T>(flags: &T, file: Option<&Path>, command: &str) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut merged = Map::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(mut obj) = parsed else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        if let Some(cmd) = obj.remove("command") {
            if cmd.as_str() != Some(command) {
                return Err(CliError::Config(format!("config is for command {cmd}, not `{command}`")));
            }
        }
        let known = match serde_json::to_value(T::default()) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        if let Some(unknown) = obj.keys().find(|k| !known.contains_key(*k)) {
            return Err(CliError::Config(format!("unknown config key `{unknown}` for `{command}`")));
        }
        merged = obj;
    }
    let flags = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))?;
    merged.extend(set_fields(flags));
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("bad config value: {e}")))
}
