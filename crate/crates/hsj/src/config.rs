//! TOML configuration shared by every subcommand.
//!
//! Every section has defaults, so an empty file (or no file) is a valid
//! configuration. `--seed` replaces every seed at once.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use hsj_core::metrics::{Distance, TargetSimilarity, DEFAULT_METRIC_MC_SAMPLES};
use hsj_core::oracle::JudgeMode;
use hsj_core::service::PipelineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    pub seed: u64,
    pub truth: TruthConfig,
    pub oracle: OracleSection,
    pub simulate: SimulateConfig,
    pub pipeline: PipelineConfig,
    pub serve: ServeConfig,
    pub converge: ConvergeConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: PathBuf::from("hsj-data"),
            seed: 0,
            truth: TruthConfig::default(),
            oracle: OracleSection::default(),
            simulate: SimulateConfig::default(),
            pipeline: PipelineConfig::default(),
            serve: ServeConfig::default(),
            converge: ConvergeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Ground truth for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub n: usize,
    pub d: usize,
    /// Standard deviation of the i.i.d. Gaussian coordinates.
    pub scale: f64,
    pub beta: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            n: 30,
            d: 2,
            scale: 0.2,
            beta: hsj_core::model::DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub mode: JudgeMode,
    pub workers: usize,
    /// Catch accuracy per simulated worker, cycled over the pool.
    pub worker_accuracies: Vec<f64>,
    pub duration_s: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            mode: JudgeMode::Stochastic,
            workers: 20,
            worker_accuracies: vec![1.0, 1.0, 1.0, 0.95, 0.6],
            duration_s: hsj_core::oracle::DEFAULT_ORACLE_DURATION_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_trials: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n_trials: 3000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ServeMode {
    /// Wait for judgments from people.
    Human,
    /// Drive every session with the simulated oracle over HTTP.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    pub mode: ServeMode,
    /// Iterations to complete, counting ones already stored.
    pub iterations: u32,
    pub lease_minutes: u64,
    /// Size of the oracle-judged set scored as coarse-grained loss.
    pub coarse_set: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1:8080".parse().expect("valid address"),
            mode: ServeMode::Human,
            iterations: 3,
            lease_minutes: 30,
            coarse_set: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub iterations: u32,
    pub coarse_set: usize,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig {
            iterations: 6,
            coarse_set: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub distances: Vec<Distance>,
    pub similarities: Vec<TargetSimilarity>,
    pub mc_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            distances: vec![Distance::L1, Distance::L2, Distance::Cosine],
            similarities: vec![TargetSimilarity::Dot, TargetSimilarity::Cosine],
            mc_samples: DEFAULT_METRIC_MC_SAMPLES,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// Uses `seed` for every stochastic component.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.pipeline.seed = self.seed;
        self.pipeline.fit.seed = self.seed;
        self.pipeline.selection.seed = self.seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c: Config = toml::from_str("").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let c: Config = toml::from_str("[truth]\nn = 12\n[serve]\nmode = \"oracle\"\n").unwrap();
        assert_eq!(c.truth.n, 12);
        assert_eq!(c.truth.d, 2);
        assert_eq!(c.serve.mode, ServeMode::Oracle);
        assert!(toml::from_str::<Config>("[truth]\nsize = 3\n").is_err());
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let c = Config::default().with_seed(Some(9));
        assert_eq!((c.seed, c.pipeline.seed, c.pipeline.fit.seed), (9, 9, 9));
    }
}
