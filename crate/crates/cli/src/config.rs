//! `key = value` run configuration. Command-line flags take precedence over
//! the file; the file takes precedence over built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flowcast_core::dataset::parse_key_values;
use flowcast_core::{Error, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "n",
    "horizon",
    "dt",
    "size",
    "jitter",
    "lo",
    "hi",
    "lr",
    "batch",
    "epochs",
    "hidden",
    "activation",
    "steps",
    "sigma",
    "members",
    "noise",
    "range",
    "data",
    "model",
    "perturb_model",
    "out_dir",
];

#[derive(Debug, Default, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    origin: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config '{}': {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.origin = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, v) in parse_key_values(text)? {
            let key = k.replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key '{k}'")));
            }
            if values.insert(key, v).is_some() {
                return Err(Error::Config(format!("config key '{k}' given twice")));
            }
        }
        Ok(RunConfig {
            values,
            origin: None,
        })
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key}");
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("config key '{key}' = '{v}': {e}")))
            })
            .transpose()
    }

    /// Flag value if given, else the config value, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Paths in the file are relative to the file's directory.
    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        if flag.is_some() {
            return Ok(flag);
        }
        Ok(self.get::<PathBuf>(key)?.map(|p| match &self.origin {
            Some(o) if p.is_relative() => o.parent().unwrap_or(Path::new(".")).join(p),
            _ => p,
        }))
    }

    /// Resolve an output path under `out_dir` when it is relative.
    pub fn output(&self, path: PathBuf) -> Result<PathBuf> {
        match self.path(None, "out_dir")? {
            Some(dir) if path.is_relative() => Ok(dir.join(path)),
            _ => Ok(path),
        }
    }

    /// `--seed`, then the config file, then `FLOWCAST_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.pick_opt(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var("FLOWCAST_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("FLOWCAST_SEED = '{v}': {e}"))),
            Err(_) => Ok(0),
        }
    }
}

/// Comma separated list, e.g. `128,128,128`.
#[derive(Debug, Clone, PartialEq)]
pub struct Widths(pub Vec<usize>);

impl FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .and_then(|v| {
                if v.iter().any(|&w| w == 0) {
                    Err("layer widths must be positive".into())
                } else {
                    Ok(Widths(v))
                }
            })
    }
}

/// Comma separated state components.
#[derive(Debug, Clone, PartialEq)]
pub struct Components(pub Vec<f64>);

impl FromStr for Components {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Components)
    }
}
