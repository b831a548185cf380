//! Plain sectioned key-value config files, overridable from the command
//! line by dotted names (`--train.c 4`).
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Grids accept `pow2:a..b` (inclusive exponent range) or an explicit
//! comma-separated list.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Config> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::from("");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "{origin}:{}: expected `key = value`",
                    lineno + 1
                )));
            };
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { sections })
    }

    /// Applies `section.key = value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        for (path, value) in overrides {
            let Some((section, key)) = path.split_once('.') else {
                return Err(ConfigError(format!(
                    "override `{path}` must be section.key"
                )));
            };
            self.sections
                .entry(section.to_string())
                .or_default()
                .insert(key.to_string(), value.clone());
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => parse_number(v)
                .ok_or_else(|| ConfigError(format!("{section}.{key}: bad number `{v}`"))),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ConfigError(format!("{section}.{key}: bad integer `{v}`"))),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ConfigError(format!("{section}.{key}: bad integer `{v}`"))),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(ConfigError(format!("{section}.{key}: bad bool `{v}`"))),
        }
    }

    pub fn get_grid(&self, section: &str, key: &str, default: &str) -> Result<Vec<f64>> {
        let spec = self.get(section, key).unwrap_or(default);
        parse_grid(spec).map_err(|e| ConfigError(format!("{section}.{key}: {e}")))
    }
}

/// Numbers accept plain literals or `2^k`.
pub fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    if let Some(exp) = t.strip_prefix("2^") {
        let e: i32 = exp.parse().ok()?;
        return Some(2f64.powi(e));
    }
    t.parse().ok()
}

/// `pow2:a..b` (inclusive) or a comma-separated list of numbers.
pub fn parse_grid(spec: &str) -> std::result::Result<Vec<f64>, String> {
    let spec = spec.trim();
    if let Some(range) = spec.strip_prefix("pow2:") {
        let Some((a, b)) = range.split_once("..") else {
            return Err(format!("bad pow2 range `{range}`"));
        };
        let a: i32 = a.trim().parse().map_err(|_| format!("bad exponent `{a}`"))?;
        let b: i32 = b.trim().parse().map_err(|_| format!("bad exponent `{b}`"))?;
        if a > b {
            return Err(format!("empty range {a}..{b}"));
        }
        return Ok((a..=b).map(|e| 2f64.powi(e)).collect());
    }
    spec.split(',')
        .map(|v| parse_number(v).ok_or_else(|| format!("bad number `{v}`")))
        .collect()
}
