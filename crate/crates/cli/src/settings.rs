//! Resolution of run settings from flags, a `key=value` file and defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Parses a flat `key=value` file. Blank lines and lines starting with `#`
/// are skipped; `-` and `_` in keys are interchangeable.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("config line {}: expected key=value", i + 1)))?;
        let key = normalize_key(k.trim());
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Validation(format!("config line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(map)
}

fn normalize_key(k: &str) -> String {
    k.replace('_', "-")
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

/// Resolves each setting as flag, then config file, then default, and keeps
/// the resolved values in order for the config echo.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    echo: Vec<(String, String)>,
}

impl Settings {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Settings { file, echo: Vec::new() }
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file.remove(key);
        let value = match (flag, from_file) {
            (Some(v), _) => v,
            (None, Some(raw)) => raw
                .parse()
                .map_err(|e| CliError::Validation(format!("config key {key}: {e}")))?,
            (None, None) => default,
        };
        self.echo.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    /// The seed falls back to `VARINFER_SEED` when neither the flag nor the
    /// config file sets it.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let env = match std::env::var("VARINFER_SEED") {
            Ok(raw) => Some(
                raw.trim()
                    .parse()
                    .map_err(|e| CliError::Validation(format!("VARINFER_SEED: {e}")))?,
            ),
            Err(_) => None,
        };
        let fallback = env.unwrap_or(crate::DEFAULT_SEED);
        self.get("seed", flag, fallback)
    }

    /// Fails on config keys no setting consumed. Call after every `get`.
    pub fn finish(self) -> Result<Vec<(String, String)>, CliError> {
        if let Some(key) = self.file.keys().next() {
            return Err(CliError::Validation(format!("unknown config key {key}")));
        }
        Ok(self.echo)
    }
}

pub fn echo_to_string(subcommand: &str, echo: &[(String, String)]) -> String {
    let mut s = format!("# varinfer {subcommand}\n");
    for (k, v) in echo {
        s.push_str(&format!("{k}={v}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let m = parse_config("# run\nseed = 7\n\nmax_iters=3\n").unwrap();
        assert_eq!(m["seed"], "7");
        assert_eq!(m["max-iters"], "3");
        assert!(parse_config("novalue\n").is_err());
        assert!(parse_config("a=1\na=2\n").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut s = Settings::new(parse_config("k=4\ntol=0.5\n").unwrap());
        assert_eq!(s.get("k", Some(5usize), 3).unwrap(), 5);
        assert_eq!(s.get("tol", None, 1e-6).unwrap(), 0.5);
        assert_eq!(s.get("epochs", None, 9usize).unwrap(), 9);
        let echo = s.finish().unwrap();
        assert_eq!(echo[1], ("tol".to_string(), "0.5".to_string()));
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let mut s = Settings::new(parse_config("bogus=1\n").unwrap());
        s.get("k", None, 3usize).unwrap();
        assert!(s.finish().is_err());
        let mut s = Settings::new(parse_config("k=three\n").unwrap());
        assert!(s.get("k", None, 3usize).is_err());
    }
}
