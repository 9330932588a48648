use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wemeval_core::flowlab::matches_from_flow;
use wemeval_core::microsim::{generate_trajectory, GroundTruth, SimConfig};
use wemeval_core::rollout::codec::write_flows;
use wemeval_core::rollout::{save_manifest, PhaseLabel, Trajectory};

use crate::config::{resolve_workers, thread_pool};
use crate::decompose::MatchesFile;

pub const CATALOG_FILE: &str = "catalog.json";
/// Grid spacing of the exact correspondences written next to each chunk.
pub const MATCH_STRIDE: usize = 4;

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    /// Catalog of fixtures to generate; the built-in catalog when absent.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Nav,
    Manip,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureSource {
    Preset {
        preset: Preset,
        seed: u64,
        #[serde(default)]
        noise_sigma: f64,
    },
    Config {
        config: SimConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: FixtureSource,
}

impl FixtureSpec {
    pub fn sim_config(&self) -> SimConfig {
        match &self.source {
            FixtureSource::Preset { preset, seed, noise_sigma } => {
                let cfg = match preset {
                    Preset::Nav => SimConfig::preset_nav(*seed),
                    Preset::Manip => SimConfig::preset_manip(*seed),
                    Preset::Mixed => SimConfig::preset_mixed(*seed),
                };
                cfg.with_noise(*noise_sigma)
            }
            FixtureSource::Config { config } => config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogConfig {
    pub fixtures: Vec<FixtureSpec>,
}

impl CatalogConfig {
    /// 22 fixtures: 10 mixed-phase (two of them noisy), 6 navigation-only
    /// and 6 manipulation-only.
    pub fn builtin() -> Self {
        let mut fixtures = Vec::new();
        let mut add = |name: String, preset, seed, noise_sigma| {
            fixtures.push(FixtureSpec { name, source: FixtureSource::Preset { preset, seed, noise_sigma } })
        };
        for s in 0..8 {
            add(format!("mixed-{s:02}"), Preset::Mixed, s, 0.0);
        }
        for s in 8..10 {
            add(format!("mixed-noisy-{s:02}"), Preset::Mixed, s, 0.02);
        }
        for s in 0..6 {
            add(format!("nav-{s:02}"), Preset::Nav, 100 + s, 0.0);
        }
        for s in 0..6 {
            add(format!("manip-{s:02}"), Preset::Manip, 200 + s, 0.0);
        }
        Self { fixtures }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading catalog {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing catalog {}", path.display()))
    }
}

/// What a fixture is expected to satisfy, recorded in the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    /// Scores of the fixture evaluated against itself; absent metrics are
    /// expected to be reported absent.
    pub identity: std::collections::BTreeMap<String, Option<f64>>,
    pub cpdm_above: Option<f64>,
    pub max_nav_residual: Option<f64>,
    pub min_ego_residual_fraction: Option<f64>,
}

impl Expected {
    fn for_phases(phases: &[PhaseLabel]) -> Self {
        let mixed = phases.contains(&PhaseLabel::Nav) && phases.contains(&PhaseLabel::Manip);
        let multi = phases.len() > 1;
        let identity = [
            ("rcbd", multi.then_some(1.0)),
            ("lpsa", Some(1.0)),
            ("cisr", Some(1.0)),
            ("pmpa", Some(1.0)),
            ("fphs", mixed.then_some(1.0)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Expected {
            identity,
            cpdm_above: mixed.then_some(0.5),
            max_nav_residual: phases.contains(&PhaseLabel::Nav).then_some(1e-4),
            min_ego_residual_fraction: phases.contains(&PhaseLabel::Manip).then_some(0.99),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub seed: Option<u64>,
    pub status: String,
    pub manifest: Option<String>,
    pub phases: Vec<PhaseLabel>,
    pub expected: Option<Expected>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub fixtures: Vec<CatalogEntry>,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    phases: &'a [PhaseLabel],
    /// Per chunk, the camera transform between consecutive frames.
    homographies: Vec<Vec<[[f64; 3]; 3]>>,
    sim_config: &'a SimConfig,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the manifest, its sidecars and the generator records of one
/// fixture into `dir`. Returns the manifest path.
pub fn write_fixture(dir: &Path, name: &str, cfg: &SimConfig, traj: &Trajectory, gt: &GroundTruth) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = dir.join(format!("{name}.json"));
    save_manifest(traj, &manifest)?;
    let truth = TruthFile {
        phases: &gt.phases,
        homographies: gt.homographies.iter().map(|c| c.iter().map(|h| h.rows()).collect()).collect(),
        sim_config: cfg,
    };
    write_json(&dir.join(format!("{name}_truth.json")), &truth)?;
    for (k, chunk) in traj.chunks.iter().enumerate() {
        write_flows(&dir.join(format!("{name}_chunk{k}_camera.wemf")), &gt.camera_flows[k])?;
        write_flows(&dir.join(format!("{name}_chunk{k}_object.wemf")), &gt.object_flows[k])?;
        let flows = chunk.flows.as_deref().unwrap_or_default();
        let matches: Vec<_> = flows.iter().map(|f| matches_from_flow(f, MATCH_STRIDE)).collect();
        write_json(&dir.join(format!("{name}_chunk{k}_matches.json")), &MatchesFile::from_matches(&matches))?;
    }
    Ok(manifest)
}

fn build_one(out_dir: &Path, spec: &FixtureSpec) -> CatalogEntry {
    let cfg = spec.sim_config();
    let phases: Vec<PhaseLabel> = cfg.chunks.iter().map(|c| c.phase).collect();
    let mut entry = CatalogEntry {
        name: spec.name.clone(),
        seed: Some(cfg.seed),
        status: "ok".into(),
        manifest: None,
        phases: phases.clone(),
        expected: None,
        error: None,
    };
    let result = generate_trajectory(&cfg)
        .map_err(anyhow::Error::from)
        .and_then(|(traj, gt)| write_fixture(&out_dir.join(&spec.name), &spec.name, &cfg, &traj, &gt));
    match result {
        Ok(_) => {
            entry.manifest = Some(format!("{0}/{0}.json", spec.name));
            entry.expected = Some(Expected::for_phases(&phases));
        }
        Err(e) => {
            entry.status = "error".into();
            entry.error = Some(format!("{e:#}"));
        }
    }
    entry
}

pub fn run(args: &GenArgs) -> Result<i32> {
    let catalog = match &args.catalog {
        Some(p) => CatalogConfig::load(p)?,
        None => CatalogConfig::builtin(),
    };
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let pool = thread_pool(resolve_workers(args.workers, None)?)?;
    let entries: Vec<CatalogEntry> =
        pool.install(|| catalog.fixtures.par_iter().map(|f| build_one(&args.out_dir, f)).collect());
    let failed = entries.iter().filter(|e| e.status != "ok").count();
    for e in entries.iter().filter(|e| e.status != "ok") {
        eprintln!("fixture {}: {}", e.name, e.error.as_deref().unwrap_or("failed"));
    }
    write_json(&args.out_dir.join(CATALOG_FILE), &Catalog { fixtures: entries })?;
    eprintln!("wrote {} fixtures to {}", catalog.fixtures.len() - failed, args.out_dir.display());
    Ok(if failed > 0 { 1 } else { 0 })
}
