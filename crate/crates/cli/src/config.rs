//! `key = value` settings files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};
use crate::output::EffectiveConfig;

/// Parses `key = value` lines. Blank lines, `#` comments and `[section]`
/// headers are skipped; values may be wrapped in double quotes.
pub fn parse_config(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}: line {}: expected key = value", no + 1)))?;
        let key = k.trim().replace('-', "_");
        let v = v.trim();
        let value = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        if key.is_empty() {
            return Err(CliError::Usage(format!("{origin}: line {}: empty key", no + 1)));
        }
        out.insert(key, value.to_string());
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

/// Effective settings for one command: defaults, then the file, then flags.
#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// `defaults` lists every accepted key; `None` marks a key with no default.
    pub fn resolve(
        defaults: &[(&str, Option<&str>)],
        file: Option<&Path>,
        flags: &[(&str, Option<String>)],
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            defaults.iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v.to_string()))).collect();
        if let Some(path) = file {
            for (k, v) in read_config(path)? {
                if !defaults.iter().any(|(d, _)| *d == k) {
                    let known: Vec<&str> = defaults.iter().map(|(d, _)| *d).collect();
                    return Err(CliError::Usage(format!(
                        "{}: unknown setting '{k}' (accepted: {})",
                        path.display(),
                        known.join(", ")
                    )));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in flags {
            debug_assert!(defaults.iter().any(|(d, _)| d == k), "flag {k} missing from defaults");
            if let Some(v) = v {
                values.insert(k.to_string(), v.clone());
            }
        }
        Ok(Settings { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Usage(format!("setting {key} = '{v}': {e}"))))
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| CliError::Usage(format!("missing required setting '{key}'")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("setting {key}: '{s}': {e}"))))
                    .collect()
            })
            .transpose()
    }

    pub fn effective(&self) -> EffectiveConfig {
        EffectiveConfig(self.values.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_sections_quotes() {
        let m = parse_config("# top\n[run]\nseed = 7 # trailing\nlabel-column = \"status\"\n\n", "x").unwrap();
        assert_eq!(m["seed"], "7");
        assert_eq!(m["label_column"], "status");
        assert!(parse_config("oops\n", "x").is_err());
    }

    #[test]
    fn flags_override_file_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\nsplits = 10\n").unwrap();
        let defaults = [("seed", Some("1")), ("splits", Some("200")), ("frac", Some("0.8"))];
        let s = Settings::resolve(&defaults, Some(&path), &[("seed", Some("9".into())), ("frac", None)]).unwrap();
        assert_eq!(s.require::<u64>("seed").unwrap(), 9);
        assert_eq!(s.require::<usize>("splits").unwrap(), 10);
        assert_eq!(s.require::<f64>("frac").unwrap(), 0.8);

        std::fs::write(&path, "sead = 3\n").unwrap();
        let e = Settings::resolve(&defaults, Some(&path), &[]).unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_USAGE);
    }

    #[test]
    fn lists_and_bad_values() {
        let s = Settings::resolve(&[("grid", Some("1, 2,4")), ("n", Some("x"))], None, &[]).unwrap();
        assert_eq!(s.list::<usize>("grid").unwrap(), Some(vec![1, 2, 4]));
        assert!(s.get::<usize>("n").is_err());
        assert_eq!(s.get::<usize>("missing").unwrap(), None);
    }
}
