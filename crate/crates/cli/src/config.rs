//! Flat `key=value` run configuration.
//!
//! Values come from (lowest to highest precedence) built-in defaults, a
//! config file, the `GWER_SEED` environment variable and command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gwer_core::OffspringDist;

use crate::error::CliError;

/// Every key accepted in config files and as a flag.
pub const KEYS: &[&str] = &[
    "dist",
    "alphas",
    "replicas",
    "horizon",
    "depth",
    "samples",
    "seed",
    "parallelism",
    "out",
    "format",
    "pool_size",
    "pools",
    "inner",
    "n",
    "r",
    "trials",
    "tol",
    "check",
    "one_sided",
];

/// Keys that never influence the numbers in an output file.
const NOT_ECHOED: &[&str] = &["parallelism", "out", "format"];

/// Raw string values by key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig(pub BTreeMap<String, String>);

impl RawConfig {
    /// Parse config text. Blank lines and `#` comments are skipped, except
    /// `# config key=value` lines written into output headers, so an output
    /// file can itself be used as a config. Data rows of such a file are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let is_output = text.starts_with("# gwer ");
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            let entry = if let Some(rest) = line.strip_prefix("# config ") {
                rest
            } else if line.is_empty() || line.starts_with('#') || is_output {
                continue;
            } else {
                line
            };
            let (k, v) = entry.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key=value, got {line:?}", i + 1))
            })?;
            let key = normalize_key(k);
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", i + 1)));
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(normalize_key(key), value.into());
    }

    /// Overlay `other` on top of `self`.
    pub fn overlay(&mut self, other: &RawConfig) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

/// Output format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (csv or json)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

/// Command-specific defaults; `None` means the key is required.
#[derive(Clone, Debug)]
pub struct Defaults {
    pub dist: Option<&'static str>,
    pub alphas: &'static [f64],
    pub replicas: usize,
    pub horizon: f64,
    pub depth: u32,
    pub samples: usize,
    pub pool_size: usize,
    pub pools: usize,
    pub inner: usize,
    pub n: u32,
    pub r: u32,
    pub trials: usize,
    pub tol: f64,
    pub check: &'static str,
    pub checks: &'static [&'static str],
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            dist: None,
            alphas: &[],
            replicas: 10_000,
            horizon: 2000.0,
            depth: 24,
            samples: 500,
            pool_size: 4096,
            pools: 16,
            inner: 4,
            n: 20,
            r: 10,
            trials: 100,
            tol: 0.1,
            check: "",
            checks: &[],
        }
    }
}

/// Fully resolved and validated configuration of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dist: OffspringDist,
    pub dist_spec: String,
    pub alphas: Vec<f64>,
    pub replicas: usize,
    pub horizon: f64,
    pub depth: u32,
    pub samples: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub pool_size: usize,
    pub pools: usize,
    pub inner: usize,
    pub n: u32,
    pub r: u32,
    pub trials: usize,
    pub tol: f64,
    pub check: String,
    pub one_sided: bool,
}

pub const DEFAULT_SEED: u64 = 1;

fn parse_key<T: FromStr>(raw: &RawConfig, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    match raw.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|e| CliError::Usage(format!("invalid {key} {v:?}: {e}"))),
    }
}

fn positive<T: PartialOrd + Default + fmt::Display>(key: &str, v: T) -> Result<T, CliError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{key} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn resolve(raw: &RawConfig, d: &Defaults) -> Result<Self, CliError> {
        let dist_spec = match (raw.get("dist"), d.dist) {
            (Some(s), _) => s.to_string(),
            (None, Some(s)) => s.to_string(),
            (None, None) => return Err(CliError::Usage("missing required --dist".into())),
        };
        let dist: OffspringDist = dist_spec
            .parse()
            .map_err(|e| CliError::Usage(format!("invalid --dist {dist_spec:?}: {e}")))?;
        let alphas = match raw.get("alphas") {
            None => d.alphas.to_vec(),
            Some(s) => s
                .split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| CliError::Usage(format!("invalid alpha {a:?}")))
                })
                .collect::<Result<_, _>>()?,
        };
        if alphas.is_empty() {
            return Err(CliError::Usage("no alphas given".into()));
        }
        let check = parse_key(raw, "check", d.check.to_string())?;
        if !d.checks.is_empty() && !d.checks.contains(&check.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown check {check:?}; expected one of {}",
                d.checks.join(", ")
            )));
        }
        let parallelism = parse_key(raw, "parallelism", 0usize)?;
        let parallelism = if parallelism == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            parallelism
        };
        let horizon = parse_key(raw, "horizon", d.horizon)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(CliError::Usage(format!("horizon must be positive, got {horizon}")));
        }
        let tol = parse_key(raw, "tol", d.tol)?;
        if !(tol > 0.0) {
            return Err(CliError::Usage(format!("tol must be positive, got {tol}")));
        }
        let cfg = Self {
            dist,
            dist_spec,
            alphas,
            replicas: positive("replicas", parse_key(raw, "replicas", d.replicas)?)?,
            horizon,
            depth: positive("depth", parse_key(raw, "depth", d.depth)?)?,
            samples: positive("samples", parse_key(raw, "samples", d.samples)?)?,
            seed: parse_key(raw, "seed", DEFAULT_SEED)?,
            parallelism,
            out: raw.get("out").map(PathBuf::from),
            format: parse_key(raw, "format", Format::Csv)?,
            pool_size: positive("pool_size", parse_key(raw, "pool_size", d.pool_size)?)?,
            pools: positive("pools", parse_key(raw, "pools", d.pools)?)?,
            inner: positive("inner", parse_key(raw, "inner", d.inner)?)?,
            n: positive("n", parse_key(raw, "n", d.n)?)?,
            r: positive("r", parse_key(raw, "r", d.r)?)?,
            trials: positive("trials", parse_key(raw, "trials", d.trials)?)?,
            tol,
            check,
            one_sided: parse_key(raw, "one_sided", false)?,
        };
        Ok(cfg)
    }

    /// Effective values that determine the numbers, in key order.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let alphas: Vec<String> = self.alphas.iter().map(|a| format!("{a:?}")).collect();
        let all = [
            ("dist", self.dist_spec.clone()),
            ("alphas", alphas.join(",")),
            ("replicas", self.replicas.to_string()),
            ("horizon", format!("{:?}", self.horizon)),
            ("depth", self.depth.to_string()),
            ("samples", self.samples.to_string()),
            ("seed", self.seed.to_string()),
            ("pool_size", self.pool_size.to_string()),
            ("pools", self.pools.to_string()),
            ("inner", self.inner.to_string()),
            ("n", self.n.to_string()),
            ("r", self.r.to_string()),
            ("trials", self.trials.to_string()),
            ("tol", format!("{:?}", self.tol)),
            ("check", self.check.clone()),
            ("one_sided", self.one_sided.to_string()),
        ];
        all.into_iter()
            .filter(|(k, _)| !NOT_ECHOED.contains(k))
            .collect()
    }
}
