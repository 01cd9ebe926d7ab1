//! Key-value config files merged under command-line flags.
//!
//! A config file holds one `key = value` pair per line; blank lines and lines
//! starting with `#` are skipped. Keys are flag names without the leading
//! dashes. A flag given on the command line always wins over the file.

use crate::error::CliError;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Default, Clone)]
pub struct Settings {
    file: BTreeMap<String, String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        let key = k.trim().trim_start_matches("--").to_string();
        if key.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    pub fn load(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self, CliError> {
        let file = match config {
            None => BTreeMap::new(),
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                parse_config(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
        };
        let mut s = Settings {
            file,
            out: None,
            seed: None,
        };
        s.out = s.pick(out, "out")?;
        s.seed = s.pick(seed, "seed")?;
        Ok(s)
    }

    /// The flag value if given, else the config value parsed as `T`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key `{key}` = `{v}`: {e}"))),
        }
    }

    pub fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("missing required option --{key}")))
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        Ok(self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    pub fn out(&self) -> Result<PathBuf, CliError> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Usage("missing required option --out".into()))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("missing required option --seed".into()))
    }

    /// Echo of the effective config-file entries, for artifact self-description.
    pub fn file_entries(&self) -> &BTreeMap<String, String> {
        &self.file
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_merges() {
        let map = parse_config("# c\nn = 5\n--lr=0.1\n\n").unwrap();
        assert_eq!(map["n"], "5");
        assert_eq!(map["lr"], "0.1");
        assert!(parse_config("oops").is_err());
        let s = Settings {
            file: map,
            out: None,
            seed: None,
        };
        assert_eq!(s.pick(Some(7usize), "n").unwrap(), Some(7));
        assert_eq!(s.pick(None::<usize>, "n").unwrap(), Some(5));
        assert!(s.pick(None::<usize>, "lr").is_err());
        assert!(matches!(s.require(None::<usize>, "k"), Err(CliError::Usage(_))));
    }
}
