//! Flat `key = value` config files and flag > file > default resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

/// Bad flags, config keys or values. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Every key any subcommand reads. Keys for other subcommands are accepted
/// and ignored so one file can serve several runs.
pub const KNOWN_KEYS: &[&str] = &[
    "gt",
    "det",
    "split",
    "chunk",
    "range-filter",
    "range-x",
    "range-y",
    "range-z",
    "classes",
    "iou-thresholds",
    "kinds",
    "levels",
    "interval-ms",
    "latency-ms",
    "latency-trace",
    "skip-stale",
    "warmup",
    "assoc-iou",
    "max-misses",
    "min-hits",
    "d",
    "rd",
    "tau",
    "beta",
    "iou-kind",
    "preset",
    "chain",
    "channels",
    "mlp-ratio",
    "height",
    "width",
    "format",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected `key = value`", i + 1)))?;
            let key = normalize(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(usage(format!("config line {}: unknown key `{key}`", i + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(usage(format!("config line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(ConfigFile::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| parse_value(key, v))
            .transpose()
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect()
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.raw(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(usage(format!("config key `{key}`: {v:?} is not a boolean"))),
            })
            .transpose()
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| usage(format!("config key `{key}`: cannot parse {v:?}: {e}")))
}

pub fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T>
where
    T::Err: fmt::Display,
{
    Ok(pick_opt(flag, file, key)?.unwrap_or(default))
}

pub fn pick_opt<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

pub fn pick_list<T: FromStr>(flag: Option<Vec<T>>, file: &ConfigFile, key: &str, default: Vec<T>) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let v = match flag {
        Some(v) => v,
        None => file.get_list(key)?.unwrap_or(default),
    };
    if v.is_empty() {
        return Err(usage(format!("`{key}` must not be empty")));
    }
    Ok(v)
}

/// A `--flag` / `--no-flag` pair: `Some` when either was given.
pub fn pick_bool(flag: Option<bool>, file: &ConfigFile, key: &str, default: bool) -> Result<bool> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get_bool(key)?.unwrap_or(default)),
    }
}

pub fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Reads a whole input file, naming it on failure.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
