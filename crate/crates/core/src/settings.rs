//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Later keys override
//! earlier ones, and [`merge`] layers command-line overrides on top.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

pub type Settings = BTreeMap<String, String>;

pub fn parse(text: &str) -> Result<Settings> {
    let mut out = Settings::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

pub fn render(s: &Settings) -> String {
    s.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// `base` with every key of `over` replacing it.
pub fn merge(base: &Settings, over: &Settings) -> Settings {
    let mut out = base.clone();
    out.extend(over.iter().map(|(k, v)| (k.clone(), v.clone())));
    out
}

/// Typed lookup; `Ok(None)` when absent, a config error when unparsable.
pub fn get<T: std::str::FromStr>(s: &Settings, key: &str) -> Result<Option<T>> {
    s.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        })
        .transpose()
}
