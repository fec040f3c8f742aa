//! Experiment configuration files.
//!
//! ```toml
//! model = "benchmark-A"        # built-in name or path to a model file
//! master-seed = 7
//! n-grid = [64, 128, 256, 512]
//! environments = 200
//! walks-per-env = 64
//! ```
//!
//! Every key is optional; missing keys take the defaults below. Keys that
//! only some experiments read are ignored by the others.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rwre_core::env::{builtin, parse_model, EnvironmentModel};
use rwre_core::regen::{Confirm, DEFAULT_CONFIRM_HORIZON};

use crate::error::{io_at, LabError, LabResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub model: String,
    pub master_seed: u64,
    /// None selects the experiment's own default grid.
    pub n_grid: Option<Vec<usize>>,
    pub replicas: usize,
    pub environments: usize,
    pub walks_per_env: usize,
    pub confirm_horizon: usize,
    pub a: i64,
    /// Path length for single-path experiments.
    pub steps: usize,
    /// Independent samples for tail fits and chain sampling.
    pub samples: usize,
    pub y_horizon: usize,
    pub x_norms: Vec<i64>,
    pub radii: Vec<i64>,
    pub exit_cap: usize,
    pub alpha2: f64,
    pub c: f64,
    pub r0: i64,
    pub window: usize,
    pub ceiling: i64,
    /// Step law of the half-line walk; empty means the simple ±1 walk.
    pub green_steps: Vec<i64>,
    pub green_probs: Vec<f64>,
    /// P(Y = k) for k = 1, 2, ...
    pub durations: Vec<f64>,
    pub recurrence_n: usize,
    pub env_seeds: Vec<u64>,
    pub clt_n: usize,
    pub clt_walks: usize,
    /// Skipped by the config hash: outputs must not depend on it.
    #[serde(skip_serializing)]
    pub threads: usize,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "benchmark-A".into(),
            master_seed: 1,
            n_grid: None,
            replicas: 200,
            environments: 200,
            walks_per_env: 64,
            confirm_horizon: DEFAULT_CONFIRM_HORIZON,
            a: 1,
            steps: 100_000,
            samples: 10_000,
            y_horizon: rwre_core::pair::DEFAULT_Y_HORIZON,
            x_norms: vec![2, 4, 8, 16],
            radii: vec![2, 4, 8, 16],
            exit_cap: 100_000,
            alpha2: 1.0,
            c: 1.0,
            r0: 0,
            window: 30,
            ceiling: 64,
            green_steps: Vec::new(),
            green_probs: Vec::new(),
            durations: vec![1.0 / 3.0; 3],
            recurrence_n: 50,
            env_seeds: vec![1, 2],
            clt_n: 1 << 12,
            clt_walks: 10_000,
            threads: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

pub fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> LabResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config {
            location: e.span().map_or_else(|| "file".into(), |s| format!("line {}", line_of(text, s.start))),
            message: e.message().to_string(),
        })?;
        cfg.validate_with(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> LabResult<()> {
        self.validate_with("")
    }

    fn validate_with(&self, text: &str) -> LabResult<()> {
        let fail = |key: &str, message: String| {
            let location = key_line(text, key).map_or_else(|| format!("key `{key}`"), |l| format!("line {l}, key `{key}`"));
            Err(LabError::Config { location, message })
        };
        let counts = [
            ("replicas", self.replicas),
            ("environments", self.environments),
            ("walks-per-env", self.walks_per_env),
            ("confirm-horizon", self.confirm_horizon),
            ("steps", self.steps),
            ("samples", self.samples),
            ("y-horizon", self.y_horizon),
            ("exit-cap", self.exit_cap),
            ("window", self.window),
            ("clt-n", self.clt_n),
            ("clt-walks", self.clt_walks),
        ];
        for (key, v) in counts {
            if v == 0 {
                return fail(key, "must be at least 1".into());
            }
        }
        if self.a < 1 {
            return fail("a", format!("must be at least 1, got {}", self.a));
        }
        if let Some(g) = &self.n_grid {
            if g.is_empty() || g[0] == 0 || g.windows(2).any(|w| w[0] >= w[1]) {
                return fail("n-grid", "must be non-empty, positive and strictly increasing".into());
            }
        }
        if self.green_steps.len() != self.green_probs.len() {
            return fail("green-probs", "must match green-steps in length".into());
        }
        if self.durations.is_empty() || self.durations.iter().any(|p| !(*p >= 0.0)) {
            return fail("durations", "must be non-empty and non-negative".into());
        }
        if self.env_seeds.is_empty() {
            return fail("env-seeds", "must list at least one seed".into());
        }
        if !(self.alpha2 > 0.0) || !self.c.is_finite() || self.c < 0.0 {
            return fail("alpha2", "alpha2 must be positive and c finite and non-negative".into());
        }
        Ok(())
    }

    pub fn grid_or(&self, default: Vec<usize>) -> Vec<usize> {
        self.n_grid.clone().unwrap_or(default)
    }

    pub fn confirm(&self) -> Confirm {
        Confirm::Horizon(self.confirm_horizon)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_model(&self) -> LabResult<Arc<EnvironmentModel>> {
        if let Some(m) = builtin(&self.model) {
            return Ok(Arc::new(m));
        }
        let path = Path::new(&self.model);
        if !path.exists() {
            return Err(LabError::Config {
                location: "key `model`".into(),
                message: format!("`{}` is neither a built-in model nor a file", self.model),
            });
        }
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        Ok(Arc::new(parse_model(&text)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn parse_errors_cite_lines() {
        let err = ExperimentConfig::parse("model = \"micro\"\nreplicas = \"many\"\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = ExperimentConfig::parse("master-seed = 3\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn validation_errors_cite_key_and_line() {
        let err = ExperimentConfig::parse("a = 1\nn-grid = [8, 4]\n").unwrap_err();
        let s = err.to_string();
        assert!(s.contains("line 2") && s.contains("n-grid"), "{s}");
        let err = ExperimentConfig::parse("replicas = 0\n").unwrap_err();
        assert!(err.to_string().contains("replicas"));
    }

    #[test]
    fn hash_ignores_threads_and_output() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { threads: 4, out: "elsewhere".into(), ..a.clone() };
        let c = ExperimentConfig { master_seed: 2, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn models_resolve() {
        let cfg = ExperimentConfig { model: "micro".into(), ..Default::default() };
        assert_eq!(cfg.load_model().unwrap().d, 2);
        let cfg = ExperimentConfig { model: "/no/such/model.toml".into(), ..Default::default() };
        assert!(cfg.load_model().is_err());
    }
}
