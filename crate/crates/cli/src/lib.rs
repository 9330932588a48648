//! Command-line front end of the toolkit.

use anyhow::Result;
use clap::{Parser, Subcommand};

pub mod config;
pub mod decompose;
pub mod eval;
pub mod fixtures;
pub mod report;
pub mod verify;

#[derive(Debug, Parser)]
#[command(name = "wemeval", version, about = "Evaluate multi-turn world-model rollouts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score generated rollouts against ground truth.
    Eval(eval::EvalArgs),
    /// Split flow fields into camera and residual object flow.
    DecomposeFlow(decompose::DecomposeArgs),
    /// Check the mechanism invariants on random instances.
    VerifyMechanisms(verify::VerifyArgs),
    /// Write simulator fixtures and their catalog.
    GenFixtures(fixtures::GenArgs),
    /// Merge eval reports and recompute the aggregate.
    Report(report::ReportArgs),
}

/// Runs a parsed command and returns its exit status.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Eval(a) => eval::run(a),
        Command::DecomposeFlow(a) => decompose::run(a),
        Command::VerifyMechanisms(a) => verify::run(a),
        Command::GenFixtures(a) => fixtures::run(a),
        Command::Report(a) => report::run(a),
    }
}
