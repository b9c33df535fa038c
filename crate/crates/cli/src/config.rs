//! Flat `key=value` configuration files: one experiment per file, no
//! nesting, unknown keys rejected. Blank lines and `#` comments are allowed.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use dlab_core::{Error, Result};

pub struct ConfigFile {
    /// key -> (value, line number)
    entries: HashMap<String, (String, usize)>,
    used: std::cell::RefCell<Vec<String>>,
    path: String,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{lineno}: expected key=value, got `{line}`",
                    path.display()
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if let Some((_, first)) = entries.insert(key.clone(), (value, lineno)) {
                return Err(Error::Config(format!(
                    "{}:{lineno}: key `{key}` already set on line {first}",
                    path.display()
                )));
            }
        }
        Ok(ConfigFile {
            entries,
            used: std::cell::RefCell::new(Vec::new()),
            path: path.display().to_string(),
        })
    }

    fn raw(&self, key: &str) -> Option<&(String, usize)> {
        let found = self.entries.get(key);
        if found.is_some() {
            self.used.borrow_mut().push(key.to_string());
        }
        found
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<f64>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "{}:{line}: key `{key}` expects a number, got `{v}`",
                    self.path
                ))
            }),
        }
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.get_f64(key)?
            .ok_or_else(|| Error::Config(format!("{}: missing required key `{key}`", self.path)))
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<usize>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "{}:{line}: key `{key}` expects a positive integer, got `{v}`",
                    self.path
                ))
            }),
        }
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.get_usize(key)?
            .ok_or_else(|| Error::Config(format!("{}: missing required key `{key}`", self.path)))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => match v.as_str() {
                "true" | "1" | "yes" | "on" => Ok(Some(true)),
                "false" | "0" | "no" | "off" => Ok(Some(false)),
                other => Err(Error::Config(format!(
                    "{}:{line}: key `{key}` expects true/false, got `{other}`",
                    self.path
                ))),
            },
        }
    }

    pub fn get_str(&self, key: &str) -> Option<String> {
        self.raw(key).map(|(v, _)| v.clone())
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => {
                let mut out = Vec::new();
                for tok in v.split(',') {
                    let tok = tok.trim();
                    if tok.is_empty() {
                        continue;
                    }
                    out.push(tok.parse::<f64>().map_err(|_| {
                        Error::Config(format!(
                            "{}:{line}: key `{key}` expects comma-separated numbers, got `{tok}`",
                            self.path
                        ))
                    })?);
                }
                Ok(Some(out))
            }
        }
    }

    /// Fails if the file is empty of recognised content or if unknown keys
    /// remain after the subcommand consumed what it understands.
    pub fn finish(&self, required: &[&str]) -> Result<()> {
        if self.entries.is_empty() {
            let mut msg = String::from("empty config; required keys: ");
            let _ = write!(msg, "{}", required.join(", "));
            return Err(Error::Config(format!("{}: {msg}", self.path)));
        }
        let used = self.used.borrow();
        let mut unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _)| !used.contains(k))
            .map(|(k, (_, line))| format!("`{k}` (line {line})"))
            .collect();
        if !unknown.is_empty() {
            unknown.sort();
            return Err(Error::Config(format!(
                "{}: unknown key(s): {}",
                self.path,
                unknown.join(", ")
            )));
        }
        Ok(())
    }
}
