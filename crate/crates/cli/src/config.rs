//! Option layering: clap defaults < `--config` file < command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

use crate::CliError;

/// Flat `key = value` file. `#` starts a comment; keys may use `-` or `_`.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
            let key = k.trim().replace('_', "-");
            if key.is_empty() {
                return Err(format!("config line {}: empty key", i + 1));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &str) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::user(format!("{path}: {e}")))?;
        Self::parse(&text).map_err(|e| CliError::user(format!("{path}: {e}")))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Resolved view over one subcommand's matches and an optional file.
pub struct Options<'a> {
    matches: &'a ArgMatches,
    file: ConfigFile,
}

impl<'a> Options<'a> {
    pub fn new(matches: &'a ArgMatches, command: &Command) -> Result<Self, CliError> {
        let file = match matches.get_one::<String>("config") {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let known: Vec<&str> = command.get_arguments().map(|a| a.get_id().as_str()).collect();
        for key in file.keys() {
            if !known.contains(&key) || key == "config" {
                eprintln!("warning: config key `{key}` is not an option of this command; ignored");
            }
        }
        Ok(Self { matches, file })
    }

    /// The winning raw value for `key`, if any layer provides one.
    pub fn raw(&self, key: &str) -> Option<String> {
        let from_flag = self.matches.value_source(key) == Some(ValueSource::CommandLine);
        if !from_flag {
            if let Some(v) = self.file.get(key) {
                return Some(v.to_string());
            }
        }
        self.matches.get_one::<String>(key).cloned()
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::user(format!("--{key} `{v}`: {e}"))),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| CliError::user(format!("--{key} is required (flag or config file)")))
    }
}
