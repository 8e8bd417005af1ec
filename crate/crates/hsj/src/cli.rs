use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::commands;
use crate::config::{Config, ServeMode};

#[derive(Debug, Parser)]
#[command(name = "hsj", version, about = "Active learning of similarity embeddings from ranked judgments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic component.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<Config> {
        Ok(Config::load(self.config.as_deref())?.with_seed(self.seed))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a ground truth and judge random trials with the oracle.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory (defaults to the configured data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an embedding ensemble to stored observations.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, default_value = "ensemble.json")]
        out: PathBuf,
    },
    /// Select the next trials from a fitted ensemble.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ensemble: PathBuf,
        /// Earlier trial files, for query usage counts.
        #[arg(long)]
        history: Vec<PathBuf>,
        #[arg(long, default_value = "trials.jsonl")]
        out: PathBuf,
    },
    /// Pack trials into sessions with catch trials.
    Sessions {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value = "session")]
        prefix: String,
        #[arg(long, default_value = "sessions.json")]
        out: PathBuf,
    },
    /// Triplet accuracy of a feature representation.
    EvalTriplets {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Correlation between feature similarities and an ensemble.
    EvalCorr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Run the loop against a simulated crowd and test convergence trends.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<u32>,
    },
    /// Run the HTTP collection service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ServeMode>,
        #[arg(long)]
        bind: Option<SocketAddr>,
        #[arg(long)]
        iterations: Option<u32>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<Value> {
    match cli.command {
        Command::Simulate { common, out } => {
            let config = common.load()?;
            let out = out.unwrap_or_else(|| config.data_dir.clone());
            commands::simulate(&config, &out)
        }
        Command::Infer {
            common,
            observations,
            catalog,
            out,
        } => commands::infer(&common.load()?, &observations, catalog.as_deref(), &out),
        Command::Select {
            common,
            ensemble,
            history,
            out,
        } => commands::select(&common.load()?, &ensemble, &history, &out),
        Command::Sessions {
            common,
            trials,
            prefix,
            out,
        } => commands::sessions(&common.load()?, &trials, &prefix, &out),
        Command::EvalTriplets {
            common,
            observations,
            features,
            catalog,
        } => commands::eval_triplets(&common.load()?, &observations, &features, catalog.as_deref()),
        Command::EvalCorr {
            common,
            ensemble,
            features,
            catalog,
        } => commands::eval_corr(&common.load()?, &ensemble, &features, catalog.as_deref()),
        Command::Converge { common, iterations } => {
            let mut config = common.load()?;
            if let Some(i) = iterations {
                config.converge.iterations = i;
            }
            commands::converge(&config)
        }
        Command::Serve {
            common,
            mode,
            bind,
            iterations,
            data_dir,
            catalog,
        } => {
            let mut config = common.load()?;
            if let Some(m) = mode {
                config.serve.mode = m;
            }
            if let Some(b) = bind {
                config.serve.bind = b;
            }
            if let Some(i) = iterations {
                config.serve.iterations = i;
            }
            if let Some(d) = data_dir {
                config.data_dir = d;
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(commands::serve(&config, catalog.as_deref()))
        }
    }
}
