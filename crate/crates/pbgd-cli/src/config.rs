//! Flat `key = value` configuration with one section per subcommand.
//!
//! Keys outside any section apply to every command; keys in `[run]`,
//! `[gen-data]`, `[landscape]` or `[diagnose]` apply to that command only.
//! The `SEED` environment variable overrides the file's `seed`, flags
//! override both, and `--set KEY=VALUE` pairs are applied last.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::error::{CliError, CliResult};

/// Merged key-value settings for one command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl Settings {
    /// Reads the general section and `[section]` of an INI-style file.
    pub fn from_file(path: &Path, section: &str) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, section)
    }

    pub fn parse(text: &str, section: &str) -> CliResult<Self> {
        let ini = Ini::load_from_str(text)
            .map_err(|e| CliError::Usage(format!("malformed config: {e}")))?;
        let mut values = BTreeMap::new();
        for (k, v) in ini.general_section().iter() {
            values.insert(normalize(k), v.trim().to_string());
        }
        if let Some(props) = ini.section(Some(section)) {
            for (k, v) in props.iter() {
                values.insert(normalize(k), v.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize(key), value.into());
    }

    /// Sets `key` only when `value` is present (used for optional flags).
    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(&normalize(key))
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.str(key).unwrap_or(default)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.str(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("cannot parse `{key}` = `{raw}`"))),
        }
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.str(key).map(str::to_ascii_lowercase).as_deref() {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(other) => Err(CliError::Usage(format!(
                "`{key}` must be a boolean, got `{other}`"
            ))),
        }
    }

    /// Comma-separated list; `None` when the key is absent.
    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>> {
        let Some(raw) = self.str(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("cannot parse `{s}` in `{key}`")))
            })
            .collect::<CliResult<Vec<T>>>()
            .map(Some)
    }
}

/// Builds settings from an optional config file, then the `SEED` variable,
/// then flag overrides applied by the caller.
pub fn load_settings(
    path: Option<&Path>,
    section: &str,
    env_seed: Option<String>,
) -> CliResult<Settings> {
    let mut settings = match path {
        Some(p) => Settings::from_file(p, section)?,
        None => Settings::default(),
    };
    if let Some(seed) = env_seed {
        let seed = seed.trim();
        if seed.parse::<u64>().is_err() {
            return Err(CliError::Usage(format!(
                "SEED must be an unsigned integer, got `{seed}`"
            )));
        }
        settings.set("seed", seed);
    }
    Ok(settings)
}

/// Renders resolved `(key, value)` pairs in the file syntax.
pub fn render_resolved(section: &str, pairs: &[(String, String)]) -> String {
    let mut out = format!("[{section}]\n");
    for (k, v) in pairs {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}
