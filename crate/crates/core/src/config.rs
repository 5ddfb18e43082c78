//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` are comments, lists are comma separated. Every
//! value read through a [`Resolver`] is remembered together with the
//! defaults it filled in, which gives the resolved echo; keys that nothing
//! reads are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::noise::parse_seed;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key `{key}`", no + 1)));
            }
        }
        Ok(RawConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }
}

/// Typed access to a [`RawConfig`] that records what was used.
#[derive(Debug)]
pub struct Resolver {
    raw: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(raw: RawConfig) -> Self {
        Resolver {
            raw: raw.entries,
            resolved: BTreeMap::new(),
        }
    }

    fn parse_value<T: FromStr>(key: &str, text: &str) -> Result<T>
    where
        T::Err: Display,
    {
        text.parse()
            .map_err(|e| Error::config(format!("`{key}`: cannot parse `{text}`: {e}")))
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let value = match self.raw.remove(key) {
            Some(text) => Self::parse_value(key, &text)?,
            None => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let text = self
            .raw
            .remove(key)
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))?;
        let value: T = Self::parse_value(key, &text)?;
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn get_list<T: FromStr + Display + Clone>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let values = match self.raw.remove(key) {
            Some(text) => text
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Self::parse_value(key, s))
                .collect::<Result<Vec<T>>>()?,
            None => default.to_vec(),
        };
        let echo: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.resolved.insert(key.to_string(), echo.join(","));
        Ok(values)
    }

    /// Decimal or `0x` hexadecimal; `overriding` wins over the file.
    pub fn get_seed(&mut self, key: &str, default: u64, overriding: Option<u64>) -> Result<u64> {
        let from_file = self.raw.remove(key).map(|text| parse_seed(&text)).transpose()?;
        let value = overriding.or(from_file).unwrap_or(default);
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Numeric parameters that a preset may read, looked up lazily.
    pub fn peek_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.raw.remove(key) {
            Some(text) => {
                let v: f64 = Self::parse_value(key, &text)?;
                self.resolved.insert(key.to_string(), v.to_string());
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    /// Fails on keys nothing has read; returns the resolved map otherwise.
    pub fn finish(self) -> Result<BTreeMap<String, String>> {
        if let Some(key) = self.raw.keys().next() {
            return Err(Error::config(format!("unknown key `{key}`")));
        }
        Ok(self.resolved)
    }
}

/// `key = value` lines in key order.
pub fn render(resolved: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in resolved {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}
