use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wemeval_core::metrics::{Evaluator, MetricConfig, MetricReport, Scores};
use wemeval_core::rollout::load_manifest;

use crate::config::{resolve_workers, thread_pool, MetricFlags, RunConfig};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Generated trajectory manifest; repeat together with --gt for
    /// several pairs.
    #[arg(long = "gen")]
    pub gen: Vec<PathBuf>,
    /// Ground-truth trajectory manifest, paired with --gen by position.
    #[arg(long = "gt")]
    pub gt: Vec<PathBuf>,
    /// JSON list of {"gen": path, "gt": path}, paths relative to the file.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Run settings (metrics, workers, output, seed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Report file; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricFlags,
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Report { pair: usize, gen: String, gt: String, report: MetricReport },
    Error { pair: usize, gen: String, gt: String, stage: Stage, error: String },
    Aggregate(Aggregate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// A manifest could not be read or failed validation.
    Load,
    /// Both loaded but the pair could not be scored.
    Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pairs: usize,
    pub evaluated: usize,
    pub failed: usize,
    /// Mean of each metric over the trajectories where it is present.
    pub means: BTreeMap<String, Option<f64>>,
    pub counts: BTreeMap<String, usize>,
    pub config: MetricConfig,
}

impl Aggregate {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a Record>, config: MetricConfig) -> Self {
        let mut sums: BTreeMap<String, (f64, usize)> =
            Scores::NAMES.iter().map(|n| (n.to_string(), (0.0, 0))).collect();
        let (mut pairs, mut evaluated, mut failed) = (0, 0, 0);
        for r in records {
            match r {
                Record::Report { report, .. } => {
                    pairs += 1;
                    evaluated += 1;
                    for (name, v) in report.scores.iter() {
                        if let Some(v) = v {
                            let e = sums.get_mut(name).expect("known metric");
                            e.0 += v;
                            e.1 += 1;
                        }
                    }
                }
                Record::Error { .. } => {
                    pairs += 1;
                    failed += 1;
                }
                Record::Aggregate(_) => {}
            }
        }
        let means = sums.iter().map(|(k, &(s, n))| (k.clone(), (n > 0).then(|| s / n as f64))).collect();
        let counts = sums.into_iter().map(|(k, (_, n))| (k, n)).collect();
        Aggregate { pairs, evaluated, failed, means, counts, config }
    }
}

/// Exit status for a set of records: 2 if any manifest failed to load or
/// validate, 1 if any pair failed to score, 0 otherwise.
pub fn exit_code(records: &[Record]) -> i32 {
    records.iter().fold(0, |code, r| match r {
        Record::Error { stage: Stage::Load, .. } => 2,
        Record::Error { stage: Stage::Metrics, .. } => code.max(1),
        _ => code,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairEntry {
    gen: PathBuf,
    gt: PathBuf,
}

fn collect_pairs(args: &EvalArgs) -> Result<Vec<(PathBuf, PathBuf)>> {
    if args.gen.len() != args.gt.len() {
        bail!("--gen given {} times but --gt {} times", args.gen.len(), args.gt.len());
    }
    let mut pairs: Vec<_> = args.gen.iter().cloned().zip(args.gt.iter().cloned()).collect();
    if let Some(file) = &args.pairs {
        let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        let entries: Vec<PairEntry> =
            serde_json::from_str(&text).with_context(|| format!("parsing pair list {}", file.display()))?;
        let base = file.parent().unwrap_or(Path::new("."));
        pairs.extend(entries.into_iter().map(|e| (base.join(e.gen), base.join(e.gt))));
    }
    if pairs.is_empty() {
        bail!("no trajectory pairs given (use --gen/--gt or --pairs)");
    }
    Ok(pairs)
}

fn evaluate_pair(ev: &Evaluator, pair: usize, gen: &Path, gt: &Path) -> Record {
    let (gen_s, gt_s) = (gen.display().to_string(), gt.display().to_string());
    let fail = |stage, error: String| Record::Error { pair, gen: gen_s.clone(), gt: gt_s.clone(), stage, error };
    let loaded = load_manifest(gen).and_then(|a| Ok((a, load_manifest(gt)?)));
    let (a, b) = match loaded {
        Ok(x) => x,
        Err(e) => return fail(Stage::Load, e.to_string()),
    };
    match ev.evaluate(&a, &b) {
        Ok(report) => Record::Report { pair, gen: gen_s.clone(), gt: gt_s.clone(), report },
        Err(e) => fail(Stage::Metrics, e.to_string()),
    }
}

pub fn write_record(out: &mut dyn Write, r: &Record) -> Result<()> {
    serde_json::to_writer(&mut *out, r)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn run(args: &EvalArgs) -> Result<i32> {
    let file_cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut metrics = file_cfg.metrics.clone();
    args.metrics.apply(&mut metrics);
    let ev = Evaluator::new(metrics.clone()).context("metric configuration")?;
    let workers = resolve_workers(args.workers, file_cfg.workers)?;
    let pairs = collect_pairs(args)?;
    let out_path = args.out.clone().or(file_cfg.output.clone());

    let mut sink: Box<dyn Write> = match &out_path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };

    let pool = thread_pool(workers)?;
    let start = Instant::now();
    let mut records = Vec::with_capacity(pairs.len());
    // Pairs are scored in parallel one batch at a time and written in input
    // order, so output never depends on scheduling.
    let batch = (workers * 8).max(1);
    for (b, chunk) in pairs.chunks(batch).enumerate() {
        let done: Vec<Record> = pool.install(|| {
            chunk.par_iter().enumerate().map(|(i, (g, t))| evaluate_pair(&ev, b * batch + i, g, t)).collect()
        });
        for r in &done {
            write_record(&mut sink, r)?;
        }
        records.extend(done);
    }
    let aggregate = Record::Aggregate(Aggregate::from_records(&records, metrics));
    write_record(&mut sink, &aggregate)?;
    sink.flush()?;

    let secs = start.elapsed().as_secs_f64();
    eprintln!(
        "evaluated {} pairs with {workers} workers in {secs:.3} s ({:.1} trajectories/s)",
        pairs.len(),
        pairs.len() as f64 / secs.max(1e-9)
    );
    Ok(exit_code(&records))
}
