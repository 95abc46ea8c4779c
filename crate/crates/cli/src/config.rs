//! Run configuration: built-in defaults, then a flat `key = value` file,
//! then command-line flags, each layer overriding the last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Tabular,
    Kernel,
}

impl Family {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "tabular" => Ok(Family::Tabular),
            "kernel" => Ok(Family::Kernel),
            other => Err(CliError::Config(format!("unknown model family {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Tabular => "tabular",
            Family::Kernel => "kernel",
        }
    }
}

/// Every recognised key with its default and help text. Keys match the
/// long flag names.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("input", "", "input CSV (data, or an artifact for plotdata)"),
    ("output", "", "output path"),
    ("model", "", "model document to load"),
    ("test", "", "test CSV for eval"),
    ("validation", "", "validation CSV for early stopping in fit"),
    ("model-family", "gaussian", "gaussian, tabular or kernel"),
    ("seed", "", "seed; required by every stochastic command"),
    ("splits", "0.8,0.1,0.1", "train,validation,test fractions"),
    ("alpha-grid", "0.6,0.7,0.8,0.9,0.95", "label stickiness candidates"),
    ("bandwidth-grid", "0.02,0.05,0.1,0.2,0.3,0.5,0.75,1,1.5,2,3,5,10", "Parzen bandwidth candidates"),
    ("max-iters", "500", "gradient iterations"),
    ("grad-tol", "1e-5", "gradient sup-norm stopping tolerance"),
    ("restarts", "10", "EM restarts per mixture size"),
    ("patience", "5", "early-stopping patience"),
    ("init", "multistart", "gaussian start: iid or multistart"),
    ("label-column", "label", "label column name"),
    ("missing", "", "extra token marking a missing label"),
    ("alphabet-sizes", "", "tabular alphabet sizes, comma separated"),
    ("kernel", "rbf", "kernel family: rbf or linear"),
    ("lambda", "0", "kernel weight penalty"),
    ("alpha", "", "fixed label stickiness (skips cross-validation)"),
    ("label-restarts", "5", "random restarts of label hill climbing"),
    ("max-sweeps", "50", "hill-climbing sweeps per restart"),
    ("cv-folds", "2", "folds for stickiness cross-validation"),
    ("classes", "2", "number of label classes"),
    ("samples", "600", "sample count for sample and gen-spiral"),
    ("noise", "0.3", "spiral noise standard deviation"),
    ("turns", "2", "spiral turns"),
    ("folds", "10", "benchmark folds"),
    ("k-max", "5", "largest mixture size"),
    ("alpha-true", "0.9", "stickiness of synthetic labels"),
    ("labeled", "0.3", "labeled fractions for semisup-bench, comma separated"),
    ("raw-dims", "6", "synthetic attribute dimension before PCA"),
    ("seeds", "10", "seeds for semisup-bench"),
    ("root-count", "1", "symmetric Dirichlet count for root tables"),
    ("cond-count", "1", "symmetric Dirichlet count for conditional tables"),
    ("max-rounds", "200", "variational rounds"),
    ("tol", "1e-8", "variational stopping tolerance"),
    ("resume", "", "variational checkpoint to resume from"),
    ("kind", "", "plot kind: scatter3d, error-vs-labels or elbo-trace"),
];

/// Effective settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults overlaid by `file` (if any) and then by `flags`.
    pub fn resolve(command: &str, file: Option<&Path>, flags: &[(String, String)]) -> CliResult<Self> {
        let mut cfg = RunConfig {
            command: command.to_string(),
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            for (k, v) in parse_config_text(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn defaults(command: &str) -> Self {
        Self::resolve(command, None, &[]).expect("defaults are valid")
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = key.replace('_', "-");
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
    }

    /// Builder-style override, validated.
    pub fn with(mut self, key: &str, value: &str) -> CliResult<Self> {
        self.set(key, value)?;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> CliResult<()> {
        self.splits()?;
        self.family()?;
        self.seed()?;
        for key in ["max-iters", "restarts", "patience", "max-sweeps", "cv-folds", "samples", "folds", "k-max"] {
            self.usize(key)?;
        }
        for key in ["grad-tol", "lambda", "noise", "turns", "tol", "root-count", "cond-count"] {
            self.f64(key)?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> CliResult<PathBuf> {
        self.path(key).ok_or_else(|| CliError::Config(format!("--{key} is required for {}", self.command)))
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        let v = self.raw(key);
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| CliError::Config(format!("{key}: expected a number, got {v:?}")))
    }

    pub fn opt_f64(&self, key: &str) -> CliResult<Option<f64>> {
        if self.raw(key).is_empty() { Ok(None) } else { self.f64(key).map(Some) }
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        let v = self.raw(key);
        v.parse().map_err(|_| CliError::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
    }

    pub fn f64_list(&self, key: &str) -> CliResult<Vec<f64>> {
        parse_list(key, self.raw(key), |s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    pub fn usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        parse_list(key, self.raw(key), |s| s.parse().ok())
    }

    pub fn family(&self) -> CliResult<Family> {
        Family::parse(self.raw("model-family"))
    }

    pub fn seed(&self) -> CliResult<Option<u64>> {
        let v = self.raw("seed");
        if v.is_empty() {
            return Ok(None);
        }
        v.parse().map(Some).map_err(|_| CliError::Config(format!("seed: expected an unsigned integer, got {v:?}")))
    }

    /// The seed, which stochastic commands cannot run without.
    pub fn require_seed(&self) -> CliResult<u64> {
        self.seed()?.ok_or_else(|| CliError::Config(format!("{} is stochastic and needs --seed", self.command)))
    }

    /// Train, validation and test fractions.
    pub fn splits(&self) -> CliResult<[f64; 3]> {
        let v = self.f64_list("splits")?;
        let [a, b, c] = v[..] else {
            return Err(CliError::Config(format!("splits: expected three fractions, got {}", v.len())));
        };
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!("splits {a},{b},{c} must be positive and sum to 1")));
        }
        Ok([a, b, c])
    }

    /// Canonical `key=value` lines, sorted, command first.
    pub fn canonical(&self) -> String {
        let mut out = format!("command={}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str) -> Option<T>) -> CliResult<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| f(s.trim()).ok_or_else(|| CliError::Config(format!("{key}: bad list entry {s:?}"))))
        .collect()
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Config(format!("config line {}: expected key = value", n + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
