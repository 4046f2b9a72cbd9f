//! Key=value settings file with built-in defaults.
//!
//! Precedence: command-line flag > config file entry > built-in default.
//! The repository ships `config/defaults.conf` documenting every key; the
//! built-ins below match it. Every resolved value is recorded so the run
//! manifest can materialize the full configuration.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    bail!(
                        "{}:{}: expected key=value, got '{line}'",
                        path.display(),
                        lineno + 1
                    );
                };
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Tracks the fully resolved configuration of a command for the manifest.
#[derive(Debug, Default)]
pub struct Resolved {
    values: BTreeMap<String, String>,
}

impl Resolved {
    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn into_map(self) -> BTreeMap<String, String> {
        self.values
    }
}

fn parse<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| anyhow::anyhow!("config key {key}={raw}: {e}"))
}

macro_rules! resolver {
    ($name:ident, $ty:ty) => {
        /// Flag > config file > built-in default; records the outcome.
        pub fn $name(
            flag: Option<$ty>,
            settings: &Settings,
            key: &str,
            builtin: $ty,
            resolved: &mut Resolved,
        ) -> Result<$ty> {
            let value = match flag {
                Some(v) => v,
                None => match settings.raw(key) {
                    Some(raw) => parse::<$ty>(key, raw)?,
                    None => builtin,
                },
            };
            resolved.record(key, value);
            Ok(value)
        }
    };
}

resolver!(resolve_f64, f64);
resolver!(resolve_usize, usize);
resolver!(resolve_u64, u64);
resolver!(resolve_i64, i64);

/// Same resolution rule for strings.
pub fn resolve_string(
    flag: Option<String>,
    settings: &Settings,
    key: &str,
    builtin: &str,
    resolved: &mut Resolved,
) -> String {
    let value = match flag {
        Some(v) => v,
        None => settings.raw(key).unwrap_or(builtin).to_string(),
    };
    resolved.record(key, &value);
    value
}

/// Parses "a,b,c" split fractions.
pub fn parse_fractions(raw: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        bail!("split fractions must be three comma-separated numbers, got '{raw}'");
    }
    let f: Vec<f64> = parts
        .iter()
        .map(|p| parse::<f64>("split", p.trim()))
        .collect::<Result<_>>()?;
    Ok((f[0], f[1], f[2]))
}

/// Parses "64,64" hidden sizes.
pub fn parse_hidden(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| parse::<usize>("hidden_sizes", p.trim()))
        .collect()
}
