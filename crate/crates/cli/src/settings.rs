//! Run settings: a flat `key=value` file merged with command-line flags.
//!
//! A manifest written by any command starts with the resolved settings, so
//! feeding it back through `--config` repeats the run. Keys under the
//! `provenance.` and `result.` prefixes are informational and skipped on
//! load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use convexify::formats::parse_key_values;
use convexify::inverse::{Method, Projection, ReconstructionMode};
use convexify::{Error, Result};
use sha2::{Digest, Sha256};

pub const KEYS: &[&str] = &[
    "scenario",
    "letter",
    "input",
    "truth",
    "out",
    "seed",
    "lambda",
    "beta",
    "sigma",
    "mode",
    "gamma",
    "paper_fine",
    "project_ball",
    "method",
    "grad_tol",
    "max_iters",
    "time_unit",
    "amplitude",
    "background",
    "fine_nx",
    "fine_nt",
    "full_field",
];

const INFORMATIONAL: &[&str] = &["provenance.", "result."];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn invalid(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Parse { offset: 0, reason: format!("{key}={value}: {why}") }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut s = Self::default();
        for (k, v) in parse_key_values(&text)? {
            if INFORMATIONAL.iter().any(|p| k.starts_with(p)) {
                continue;
            }
            s.set(&k, v)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Parse { offset: 0, reason: format!("unknown setting {key:?}") });
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Sets `key` when the flag was given.
    pub fn apply<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    pub fn flag(&mut self, key: &str, on: bool) -> Result<()> {
        if on {
            self.set(key, "true")?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| v.parse::<T>().map_err(|e| invalid(key, v, e))).transpose()
    }

    pub fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.or(key, false)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out").unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn mode(&self) -> Result<ReconstructionMode> {
        match self.get("mode").unwrap_or("slice") {
            "slice" => Ok(ReconstructionMode::Slice),
            "average" => Ok(ReconstructionMode::Average { gamma: self.or("gamma", 0.3)? }),
            other => Err(invalid("mode", other, "expected slice or average")),
        }
    }

    pub fn method(&self) -> Result<Method> {
        match self.get("method").unwrap_or("lbfgs") {
            "lbfgs" => Ok(Method::Lbfgs),
            "sd" | "steepest" => Ok(Method::SteepestDescent),
            other => Err(invalid("method", other, "expected lbfgs or sd")),
        }
    }

    pub fn projection(&self, k: u8) -> Result<Projection> {
        Ok(match self.parsed::<f64>("project_ball")? {
            Some(radius) => Projection::Ball { radius, k },
            None => Projection::Off,
        })
    }

    /// Resolved settings, one `key=value` per line in key order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}
