//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys are the field names of
//! [`TrainConfig`]; unknown or repeated keys are rejected.

use std::collections::HashSet;
use std::fmt;

use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line number; 0 for whole-file problems.
    pub line: usize,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.key) {
            (0, _) => write!(f, "{}", self.message),
            (n, Some(k)) => write!(f, "line {n}: {k}: {}", self.message),
            (n, None) => write!(f, "line {n}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn parse_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let mut config = TrainConfig::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError {
                line,
                key: None,
                message: format!("expected `key = value`, found {content:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let err = |message: String| ConfigError {
            line,
            key: Some(key.to_string()),
            message,
        };
        if !TrainConfig::KEYS.contains(&key) {
            return Err(err("unknown key".into()));
        }
        if !seen.insert(key.to_string()) {
            return Err(err("key given more than once".into()));
        }
        config.set(key, value).map_err(err)?;
    }
    config.validate().map_err(|e| ConfigError {
        line: 0,
        key: None,
        message: e.to_string(),
    })?;
    Ok(config)
}
