//! Flat `key = value` run configuration (TOML syntax) with line-precise
//! validation errors.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::{Spanned, Value};

use qinterf::noise::ErrorBudget;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Syntax { path: String, message: String },
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey { path: String, key: String, line: usize },
    #[error("{path}:{line}: `{key}` must be {expected}")]
    Type { path: String, key: String, line: usize, expected: &'static str },
    #[error("{path}:{line}: `{key}` {message}")]
    Invalid { path: String, key: String, line: usize, message: String },
    #[error("{0}")]
    Missing(String),
}

#[derive(Debug, Clone)]
struct Entry {
    value: Value,
    line: usize,
}

/// Parsed configuration. Every accessor marks its key as used; [`finish`]
/// rejects whatever was not consumed by the command.
///
/// [`finish`]: RunConfig::finish
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    path: String,
    entries: BTreeMap<String, Entry>,
    used: BTreeSet<String>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

impl RunConfig {
    pub fn empty() -> Self {
        Self { path: "<defaults>".into(), ..Default::default() }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let raw: BTreeMap<String, Spanned<Value>> = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: path.into(),
            message: e.to_string().trim_end().to_string(),
        })?;
        let entries = raw
            .into_iter()
            .map(|(k, v)| {
                let line = line_of(text, v.span().start);
                (k, Entry { value: v.into_inner(), line })
            })
            .collect();
        Ok(Self { path: path.into(), entries, used: BTreeSet::new() })
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.used.insert(key.to_string());
        self.entries.get(key).cloned()
    }

    fn type_err(&self, key: &str, line: usize, expected: &'static str) -> ConfigError {
        ConfigError::Type { path: self.path.clone(), key: key.into(), line, expected }
    }

    pub fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        ConfigError::Invalid { path: self.path.clone(), key: key.into(), line, message: message.into() }
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn number(value: &Value) -> Option<f64> {
        match value {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => Self::number(&e.value)
                .map(Some)
                .ok_or_else(|| self.type_err(key, e.line, "a number")),
        }
    }

    /// Number with a default, checked against `[lo, hi]`.
    pub fn f64_in(&mut self, key: &str, default: f64, lo: f64, hi: f64) -> Result<f64, ConfigError> {
        let v = self.opt_f64(key)?.unwrap_or(default);
        if !(v >= lo && v <= hi) {
            return Err(self.invalid(key, format!("= {v} is outside [{lo}, {hi}]")));
        }
        Ok(v)
    }

    /// Number that must be strictly positive and finite.
    pub fn positive(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.opt_f64(key)?.unwrap_or(default);
        if !(v > 0.0 && v.is_finite()) {
            return Err(self.invalid(key, format!("= {v} must be positive")));
        }
        Ok(v)
    }

    pub fn opt_u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Entry { value: Value::Integer(i), line }) => {
                u64::try_from(i).map(Some).map_err(|_| self.type_err(key, line, "a non-negative integer"))
            }
            Some(e) => Err(self.type_err(key, e.line, "a non-negative integer")),
        }
    }

    pub fn u64_min(&mut self, key: &str, default: u64, min: u64) -> Result<u64, ConfigError> {
        let v = self.opt_u64(key)?.unwrap_or(default);
        if v < min {
            return Err(self.invalid(key, format!("= {v} must be at least {min}")));
        }
        Ok(v)
    }

    pub fn opt_f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Entry { value: Value::Array(a), line }) => a
                .iter()
                .map(|v| Self::number(v).ok_or_else(|| self.type_err(key, line, "an array of numbers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(e) => Err(self.type_err(key, e.line, "an array of numbers")),
        }
    }

    pub fn opt_u64_list(&mut self, key: &str) -> Result<Option<Vec<u64>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Entry { value: Value::Array(a), line }) => a
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                    _ => Err(self.type_err(key, line, "an array of non-negative integers")),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(e) => Err(self.type_err(key, e.line, "an array of non-negative integers")),
        }
    }

    /// Error budget from `nu` alone or from the individual fields.
    pub fn budget(&mut self) -> Result<ErrorBudget, ConfigError> {
        let fields = ["p_t", "f_t", "f_1", "f_2", "f_e"];
        if self.has("nu") {
            if let Some(k) = fields.iter().find(|k| self.has(k)) {
                return Err(self.invalid(k, "cannot be combined with `nu`"));
            }
            let nu = self.f64_in("nu", 1.0, 0.0, 1.0)?;
            return ErrorBudget::with_nu(nu).map_err(|e| self.invalid("nu", e.to_string()));
        }
        let p_t = self.f64_in("p_t", 1.0, 0.0, 1.0)?;
        let mut f = [1.0; 4];
        for (slot, key) in f.iter_mut().zip(&fields[1..]) {
            *slot = self.f64_in(key, 1.0, 0.5, 1.0)?;
        }
        Ok(ErrorBudget { p_t, f_t: f[0], f_1: f[1], f_2: f[2], f_e: f[3] })
    }

    /// Rejects keys no accessor asked for.
    pub fn finish(&self) -> Result<(), ConfigError> {
        match self.entries.iter().find(|(k, _)| !self.used.contains(*k)) {
            Some((k, e)) => Err(ConfigError::UnknownKey { path: self.path.clone(), key: k.clone(), line: e.line }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_lines() {
        let mut c = RunConfig::parse("epsilon = 0.1\n\nbins = \"seven\"\n", "x.toml").unwrap();
        assert_eq!(c.opt_f64("epsilon").unwrap(), Some(0.1));
        let e = c.opt_u64("bins").unwrap_err();
        assert!(e.to_string().starts_with("x.toml:3:"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RunConfig::parse("epsilon = 0.1\nepsilom = 2\n", "x.toml").unwrap();
        c.opt_f64("epsilon").unwrap();
        let e = c.finish().unwrap_err();
        assert!(e.to_string().contains("x.toml:2: unknown key `epsilom`"), "{e}");
    }

    #[test]
    fn range_checks() {
        let mut c = RunConfig::parse("f_1 = 0.3\n", "x.toml").unwrap();
        assert!(matches!(c.budget(), Err(ConfigError::Invalid { line: 1, .. })));
        let mut c = RunConfig::parse("nu = 0.8\nf_1 = 0.9\n", "x.toml").unwrap();
        assert!(c.budget().is_err());
        let mut c = RunConfig::parse("nu = 0.6\n", "x.toml").unwrap();
        assert!((c.budget().unwrap().nu() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(RunConfig::parse("epsilon = = 1", "x"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("[table]\na = 1", "x").map(|c| c.finish()), Ok(Err(_)) | Err(_)));
    }
}
