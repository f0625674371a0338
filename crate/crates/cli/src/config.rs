//! Key-value run configuration with layered precedence:
//! command line > config file > command defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use rectflow::binio::sha256_hex;
use rectflow::ode::SolverSpec;

/// Invalid invocation: unknown keys, unparsable values, bad combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Keys that locate files rather than describe the computation; they are
/// excluded from the digest so reruns into a fresh directory match.
const LOCATION_KEYS: &[&str] = &["out"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    command: String,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Layers `file` and `overrides` over `defaults`. Keys outside the
    /// defaults are rejected.
    pub fn resolve(
        command: &str,
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut layers = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            layers.extend(
                parse_text(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?,
            );
        }
        layers.extend(overrides.iter().cloned());
        for (k, v) in layers {
            if !values.contains_key(&k) {
                let known: Vec<_> = values.keys().map(String::as_str).collect();
                return usage(format!(
                    "unknown key {k:?} for {command}; known keys: {}",
                    known.join(", ")
                ));
            }
            values.insert(k, v);
        }
        Ok(Self {
            command: command.to_string(),
            values,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{key} has no default for {}", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| UsageError(format!("{key}: cannot parse {v:?}")).into())
    }

    /// Path value; an empty value is reported as missing.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        match self.raw(key) {
            "" => usage(format!("{} needs {key}=<path>", self.command)),
            v => Ok(PathBuf::from(v)),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    pub fn solver(&self, key: &str) -> Result<SolverSpec> {
        parse_solver(self.raw(key)).map_err(|e| UsageError(format!("{key}: {e}")).into())
    }

    /// Canonical text, one sorted `key=value` per line, led by the command.
    pub fn canonical(&self) -> String {
        let mut s = format!("command={}\n", self.command);
        for (k, v) in &self.values {
            if !LOCATION_KEYS.contains(&k.as_str()) {
                s.push_str(&format!("{k}={v}\n"));
            }
        }
        s
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    /// Seed for one named consumer, derived from the `seed` key.
    pub fn seed_for(&self, label: &str) -> Result<u64> {
        let seed: u64 = self.get("seed")?;
        let h = sha256_hex(format!("{label}:{seed}").as_bytes());
        Ok(u64::from_str_radix(&h[..16], 16).expect("hex digest"))
    }
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_text(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| parse_pair(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// `euler:N`, `midpoint:N`, `dopri5:TOL` or `dopri5:ATOL,RTOL`.
pub fn parse_solver(s: &str) -> std::result::Result<SolverSpec, String> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let steps = || {
        arg.parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| format!("{name} needs a positive step count, e.g. {name}:256"))
    };
    match name {
        "euler" => Ok(SolverSpec::euler(steps()?)),
        "midpoint" => Ok(SolverSpec::midpoint(steps()?)),
        "dopri5" => {
            let tol = |t: &str| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| *v > 0.0)
                    .ok_or_else(|| format!("bad tolerance {t:?}"))
            };
            let (a, r) = match arg.split_once(',') {
                Some((a, r)) => (tol(a)?, tol(r)?),
                None if arg.is_empty() => (1e-5, 1e-5),
                None => (tol(arg)?, tol(arg)?),
            };
            Ok(SolverSpec::dopri5(a, r))
        }
        _ => Err(format!(
            "unknown solver {s:?} (euler:N, midpoint:N, dopri5[:TOL])"
        )),
    }
}
