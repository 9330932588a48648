use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use wemeval_core::metrics::MetricConfig;

use crate::eval::{exit_code, write_record, Aggregate, Record};

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Report files written by `eval`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Merged report; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn sort_key(r: &Record) -> (&str, &str, usize) {
    match r {
        Record::Report { pair, gen, gt, .. } | Record::Error { pair, gen, gt, .. } => (gen, gt, *pair),
        Record::Aggregate(_) => ("", "", 0),
    }
}

/// Reads report lines, drops their aggregates and returns the pair records
/// together with the metric config they were produced under.
pub fn read_reports(inputs: &[PathBuf]) -> Result<(Vec<Record>, Option<MetricConfig>)> {
    let (mut records, mut config) = (Vec::new(), None::<MetricConfig>);
    for path in inputs {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), n + 1))?;
            match rec {
                Record::Aggregate(a) => match &config {
                    Some(c) if *c != a.config => bail!("{} was produced under a different config", path.display()),
                    Some(_) => {}
                    None => config = Some(a.config),
                },
                r => records.push(r),
            }
        }
    }
    Ok((records, config))
}

/// Merges reports into one, ordered by (gen, gt, pair), with a fresh
/// aggregate.
pub fn merge(inputs: &[PathBuf]) -> Result<Vec<Record>> {
    let (mut records, config) = read_reports(inputs)?;
    records.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    let aggregate = Aggregate::from_records(&records, config.unwrap_or_default());
    records.push(Record::Aggregate(aggregate));
    Ok(records)
}

pub fn run(args: &ReportArgs) -> Result<i32> {
    let records = merge(&args.inputs)?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for r in &records {
        write_record(&mut sink, r)?;
    }
    sink.flush()?;
    Ok(exit_code(&records))
}
