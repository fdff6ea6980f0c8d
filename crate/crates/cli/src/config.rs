use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// A configuration problem, reported with the offending key path.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Reads a TOML config into `T`; `None` gives the defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, ConfigError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        match unknown_key(&msg) {
            Some(key) => {
                let full = if path == "." || path.is_empty() || path.ends_with(key) {
                    path_or(key, &path)
                } else {
                    format!("{path}.{key}")
                };
                ConfigError(format!("unknown config key `{full}`"))
            }
            None if path == "." || path.is_empty() => ConfigError(msg),
            None => ConfigError(format!("invalid value for `{path}`: {msg}")),
        }
    })
}

fn path_or(key: &str, path: &str) -> String {
    if path == "." || path.is_empty() {
        key.to_string()
    } else {
        path.to_string()
    }
}

fn unknown_key(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

/// Renders a config as TOML for the run snapshot.
pub fn to_toml<T: Serialize>(cfg: &T) -> String {
    toml::to_string(cfg).expect("configs serialize to TOML")
}
