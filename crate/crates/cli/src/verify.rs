use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use wemeval_core::mechanism::verify::{assemble, run_invariant, Invariant, VerifyReport};

use crate::config::{resolve_workers, thread_pool};

#[derive(Debug, clap::Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per invariant.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long)]
    pub workers: Option<usize>,
    /// JSON record file; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub fn verify(seed: u64, trials: usize, workers: usize) -> Result<VerifyReport> {
    let pool = thread_pool(workers)?;
    let records = pool.install(|| Invariant::ALL.par_iter().map(|&inv| run_invariant(inv, seed, trials)).collect());
    Ok(assemble(seed, trials, records))
}

pub fn run(args: &VerifyArgs) -> Result<i32> {
    let trials = usize::try_from(args.trials).context("trial count")?;
    let report = verify(args.seed, trials, resolve_workers(args.workers, None)?)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    match &args.out {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    for r in report.invariants.iter().filter(|r| !r.passed) {
        eprintln!("{}: {} of {} trials failed", r.name, r.failures, r.trials);
    }
    Ok(if report.passed { 0 } else { 1 })
}
