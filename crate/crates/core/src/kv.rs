//! `key=value` line format shared by config files, checkpoint headers and reports.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("line {} is not key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// A set of entries consumed key by key; leftovers are reported as unknown.
#[derive(Debug, Default, Clone)]
pub struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self { map: pairs.into_iter().collect() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self::new(parse(text)?))
    }

    pub fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.map.remove(key) {
            *slot = v.parse().map_err(|e: T::Err| Error::config(key, format!("cannot parse {v:?}: {e}")))?;
        }
        Ok(())
    }

    pub fn take_opt(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    pub fn finish(self) -> Result<()> {
        match self.map.into_keys().next() {
            Some(k) => Err(Error::config(k, "unknown key")),
            None => Ok(()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
