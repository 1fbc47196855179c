//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::bootstrap::BootstrapConfig;
use crate::engine::FitConfig;
use crate::error::{Error, Result};
use crate::io::{Format, LoadOptions};
use crate::model::Mode;
use crate::oracle::MmleConfig;
use crate::simulator::{EvaluateOptions, SimulationSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub dim: usize,
    pub dims: Vec<usize>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub deterministic_reduction: bool,
    pub n: usize,
    pub j: usize,
    pub k: usize,
    pub loading_lo: f64,
    pub loading_hi: f64,
    pub correlation_lo: f64,
    pub correlation_hi: f64,
    pub max_retries: usize,
    pub replicates: usize,
    pub min_successes: usize,
    pub nodes: usize,
    pub format: Format,
    pub drop_incomplete: bool,
    pub emit_theta: bool,
    pub full_sigma_norm: bool,
    pub data: Option<PathBuf>,
    pub categories_file: Option<PathBuf>,
    pub out: PathBuf,
    pub fit_dir: Option<PathBuf>,
    pub truth_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            seed: fit.seed,
            mode: fit.mode,
            dim: 2,
            dims: vec![1, 2, 3],
            max_iterations: fit.max_iterations,
            tolerance: fit.tolerance,
            deterministic_reduction: fit.deterministic_reduction,
            n: 500,
            j: 20,
            k: 3,
            loading_lo: 0.5,
            loading_hi: 1.0,
            correlation_lo: 0.1,
            correlation_hi: 0.3,
            max_retries: 100,
            replicates: 50,
            min_successes: 30,
            nodes: MmleConfig::default().nodes,
            format: Format::Csv,
            drop_incomplete: false,
            emit_theta: false,
            full_sigma_norm: false,
            data: None,
            categories_file: None,
            out: PathBuf::from("out"),
            fit_dir: None,
            truth_dir: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "mode",
    "dim",
    "dims",
    "max_iterations",
    "tolerance",
    "deterministic_reduction",
    "n",
    "j",
    "k",
    "loading_lo",
    "loading_hi",
    "correlation_lo",
    "correlation_hi",
    "max_retries",
    "replicates",
    "min_successes",
    "nodes",
    "format",
    "drop_incomplete",
    "emit_theta",
    "full_sigma_norm",
    "data",
    "categories_file",
    "out",
    "fit_dir",
    "truth_dir",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got '{value}'"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

impl RunConfig {
    /// Parse config text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "mode" => self.mode = value.parse().map_err(|_| Error::Config(format!("mode: '{value}'")))?,
            "dim" => self.dim = parse_value(key, value)?,
            "dims" => {
                self.dims = value
                    .split(',')
                    .map(|d| parse_value(key, d.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "max_iterations" => self.max_iterations = parse_value(key, value)?,
            "tolerance" => self.tolerance = parse_value(key, value)?,
            "deterministic_reduction" => self.deterministic_reduction = parse_bool(key, value)?,
            "n" => self.n = parse_value(key, value)?,
            "j" => self.j = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "loading_lo" => self.loading_lo = parse_value(key, value)?,
            "loading_hi" => self.loading_hi = parse_value(key, value)?,
            "correlation_lo" => self.correlation_lo = parse_value(key, value)?,
            "correlation_hi" => self.correlation_hi = parse_value(key, value)?,
            "max_retries" => self.max_retries = parse_value(key, value)?,
            "replicates" => self.replicates = parse_value(key, value)?,
            "min_successes" => self.min_successes = parse_value(key, value)?,
            "nodes" => self.nodes = parse_value(key, value)?,
            "format" => self.format = value.parse()?,
            "drop_incomplete" => self.drop_incomplete = parse_bool(key, value)?,
            "emit_theta" => self.emit_theta = parse_bool(key, value)?,
            "full_sigma_norm" => self.full_sigma_norm = parse_bool(key, value)?,
            "data" => self.data = parse_path(value),
            "categories_file" => self.categories_file = parse_path(value),
            "out" => {
                self.out = parse_path(value).ok_or_else(|| Error::Config("out: empty path".into()))?
            }
            "fit_dir" => self.fit_dir = parse_path(value),
            "truth_dir" => self.truth_dir = parse_path(value),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return fail("dim must be ≥ 1".into());
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return fail("dims must be a nonempty list of positive integers".into());
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be ≥ 1".into());
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return fail("tolerance must be positive".into());
        }
        if self.n == 0 || self.j == 0 {
            return fail("n and j must be ≥ 1".into());
        }
        if self.k < 2 {
            return fail("k must be ≥ 2".into());
        }
        if !(self.loading_lo < self.loading_hi) {
            return fail("loading_lo must be < loading_hi".into());
        }
        if !(-1.0 < self.correlation_lo && self.correlation_lo < self.correlation_hi && self.correlation_hi < 1.0) {
            return fail("correlation range must satisfy -1 < lo < hi < 1".into());
        }
        if self.max_retries == 0 {
            return fail("max_retries must be ≥ 1".into());
        }
        if self.replicates < 2 {
            return fail("replicates must be ≥ 2".into());
        }
        if self.nodes == 0 {
            return fail("nodes must be ≥ 1".into());
        }
        Ok(())
    }

    /// Canonical key → value map used for the digest and report headers.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let dims = self.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        let pairs: [(&str, String); 27] = [
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
            ("dim", self.dim.to_string()),
            ("dims", dims),
            ("max_iterations", self.max_iterations.to_string()),
            ("tolerance", format!("{:e}", self.tolerance)),
            ("deterministic_reduction", self.deterministic_reduction.to_string()),
            ("n", self.n.to_string()),
            ("j", self.j.to_string()),
            ("k", self.k.to_string()),
            ("loading_lo", self.loading_lo.to_string()),
            ("loading_hi", self.loading_hi.to_string()),
            ("correlation_lo", self.correlation_lo.to_string()),
            ("correlation_hi", self.correlation_hi.to_string()),
            ("max_retries", self.max_retries.to_string()),
            ("replicates", self.replicates.to_string()),
            ("min_successes", self.min_successes.to_string()),
            ("nodes", self.nodes.to_string()),
            ("format", self.format.to_string()),
            ("drop_incomplete", self.drop_incomplete.to_string()),
            ("emit_theta", self.emit_theta.to_string()),
            ("full_sigma_norm", self.full_sigma_norm.to_string()),
            ("data", show_path(&self.data)),
            ("categories_file", show_path(&self.categories_file)),
            ("out", self.out.display().to_string()),
            ("fit_dir", show_path(&self.fit_dir)),
            ("truth_dir", show_path(&self.truth_dir)),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Config text that parses back to this configuration.
    pub fn render(&self) -> String {
        self.to_map()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            mode: self.mode,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            seed: self.seed,
            deterministic_reduction: self.deterministic_reduction,
        }
    }

    pub fn simulation_spec(&self) -> SimulationSpec {
        let mut spec = SimulationSpec::new(self.n, self.j, self.k, self.dim, self.seed)
            .loadings((self.loading_lo, self.loading_hi))
            .correlation((self.correlation_lo, self.correlation_hi));
        spec.max_retries = self.max_retries;
        spec
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.replicates,
            min_successes: self.min_successes,
            max_retries: self.max_retries,
            keep_replicates: false,
        }
    }

    pub fn mmle_config(&self) -> MmleConfig {
        MmleConfig {
            nodes: self.nodes,
            ..MmleConfig::default()
        }
    }

    pub fn evaluate_options(&self) -> EvaluateOptions {
        EvaluateOptions {
            full_sigma_norm: self.full_sigma_norm,
        }
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        let categories = match &self.categories_file {
            Some(p) => Some(crate::io::load_categories(p)?),
            None => None,
        };
        Ok(LoadOptions {
            format: self.format,
            drop_incomplete: self.drop_incomplete,
            categories,
        })
    }
}
