use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wemeval_core::featurizer::EmbedderSpec;
use wemeval_core::metrics::MetricConfig;

pub const THREADS_ENV: &str = "WEMEVAL_THREADS";

/// Settings file for `eval`. Anything left out falls back to the built-in
/// defaults; command-line flags override the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub metrics: MetricConfig,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.workers == Some(0) {
            bail!("config {}: workers must be at least 1", path.display());
        }
        Ok(cfg)
    }
}

/// Metric settings that can be given on the command line.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct MetricFlags {
    /// Trailing frames per chunk compared by LPSA.
    #[arg(long = "late-window")]
    pub late_window: Option<usize>,
    /// Frames on each side of a phase switch used by FPHS.
    #[arg(long = "switch-window")]
    pub switch_window: Option<usize>,
    #[arg(long)]
    pub tau_cpdm: Option<f64>,
    #[arg(long)]
    pub tau_pmpa: Option<f64>,
    #[arg(long)]
    pub resample_steps: Option<usize>,
    #[arg(long)]
    pub top_fraction: Option<f64>,
    /// Grid size of the built-in frame embedder.
    #[arg(long, conflicts_with = "embeddings")]
    pub embedder_grid: Option<usize>,
    /// Index JSON of precomputed embeddings, used instead of the built-in
    /// embedder.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

impl MetricFlags {
    pub fn apply(&self, cfg: &mut MetricConfig) {
        if let Some(v) = self.late_window {
            cfg.late_window = v;
        }
        if let Some(v) = self.switch_window {
            cfg.switch_window = v;
        }
        if let Some(v) = self.tau_cpdm {
            cfg.tau_cpdm = v;
        }
        if let Some(v) = self.tau_pmpa {
            cfg.tau_pmpa = v;
        }
        if let Some(v) = self.resample_steps {
            cfg.resample_steps = v;
        }
        if let Some(v) = self.top_fraction {
            cfg.top_fraction = v;
        }
        if let Some(grid) = self.embedder_grid {
            cfg.embedder = EmbedderSpec::Reference { grid };
        }
        if let Some(source) = &self.embeddings {
            cfg.embedder = EmbedderSpec::ExternalFile { source: source.clone() };
        }
    }
}

/// Worker count: flag, then `WEMEVAL_THREADS`, then the config file, then
/// the number of available cores.
pub fn resolve_workers(flag: Option<usize>, file: Option<usize>) -> Result<usize> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?),
        Err(_) => None,
    };
    let n = flag.or(env).or(file).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        bail!("worker count must be at least 1");
    }
    Ok(n)
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("starting worker pool")
}
