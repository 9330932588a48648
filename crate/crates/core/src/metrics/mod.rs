//! Rollout quality metrics comparing a generated trajectory against its
//! ground truth, chunk by chunk.
//!
//! | metric | measures                                                     | range     |
//! |--------|--------------------------------------------------------------|-----------|
//! | RCBD   | appearance and motion gaps at chunk boundaries               | (0, 1]    |
//! | LPSA   | end-of-chunk state alignment, later chunks weighted more     | [-1, 1]   |
//! | CISR   | mean reciprocal rank of the matching ground-truth chunk      | (0, 1]    |
//! | PMPA   | agreement of per-chunk motion profiles                       | (0, 1]    |
//! | CPDM   | margin between same-chunk and opposite-phase similarity      | (0, 1)    |
//! | FPHS   | similarity inside the high-motion region at phase switches   | [-1, 1]   |
//!
//! Metrics that do not apply to a pair (too few chunks, a single phase,
//! missing flows) are reported absent with a note rather than defaulted.

mod continuity;
mod phase;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurizer::{EmbedKey, EmbedderSpec, EmbeddingVector, FeatureError, Featurizer};
use crate::flowlab::MotionStatsConfig;
use crate::rollout::{validate_trajectory, Trajectory, ValidationReport};

pub use continuity::{late_weighted_mean, reciprocal_rank, symmetric_match};
pub use phase::{change_region, margin_score, profile_score, ChangeRegion};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("chunk count differs: generated {gen}, ground truth {gt}")]
    ChunkCountMismatch { gen: usize, gt: usize },
    #[error("frame dimensions differ: generated {gen:?}, ground truth {gt:?}")]
    FrameDimsMismatch { gen: (usize, usize), gt: (usize, usize) },
    #[error("{which} trajectory is invalid: {report}")]
    Invalid { which: &'static str, report: ValidationReport },
    #[error("invalid metric config: {0}")]
    BadConfig(String),
    /// The metric is undefined for this pair; evaluation reports it absent.
    #[error("{0}")]
    NotApplicable(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// How per-step profile distances are combined in PMPA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileReduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Trailing frames per chunk compared by LPSA.
    #[serde(rename = "W")]
    pub late_window: usize,
    /// Frames taken on each side of a phase switch by FPHS.
    #[serde(rename = "R")]
    pub switch_window: usize,
    pub tau_cpdm: f64,
    pub tau_pmpa: f64,
    pub resample_steps: usize,
    pub top_fraction: f64,
    pub eps: f64,
    pub entropy_bins: usize,
    pub pmpa_reduction: ProfileReduction,
    pub embedder: EmbedderSpec,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            late_window: 4,
            switch_window: 4,
            tau_cpdm: 0.05,
            tau_pmpa: 0.5,
            resample_steps: 16,
            top_fraction: 0.2,
            eps: 1e-6,
            entropy_bins: 16,
            pmpa_reduction: ProfileReduction::Mean,
            embedder: EmbedderSpec::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |m: &str| Err(MetricError::BadConfig(m.to_owned()));
        if self.late_window == 0 || self.switch_window == 0 || self.resample_steps == 0 || self.entropy_bins == 0 {
            return bad("window sizes, resample_steps and entropy_bins must be positive");
        }
        if !(self.tau_cpdm > 0.0 && self.tau_pmpa > 0.0 && self.eps > 0.0) {
            return bad("tau_cpdm, tau_pmpa and eps must be positive");
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad("top_fraction must lie in (0, 1]");
        }
        if let EmbedderSpec::Reference { grid: 0 } = self.embedder {
            return bad("embedder grid must be at least 1");
        }
        Ok(())
    }

    pub fn motion_stats(&self) -> MotionStatsConfig {
        MotionStatsConfig {
            top_fraction: self.top_fraction,
            entropy_bins: self.entropy_bins,
            eps: self.eps,
            ..Default::default()
        }
    }
}

/// A metric value plus the per-chunk or per-boundary terms it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct Score<T = f64> {
    pub value: f64,
    pub parts: Vec<T>,
    pub notes: Vec<String>,
}

impl<T> Score<T> {
    fn new(value: f64, parts: Vec<T>) -> Self {
        Self { value, parts, notes: Vec::new() }
    }
}

/// Score at one chunk boundary, `boundary` 1-based (between chunks
/// `boundary` and `boundary + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    pub boundary: usize,
    pub score: f64,
}

/// Score of one chunk, `chunk` 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkScore {
    pub chunk: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rcbd: Option<f64>,
    pub lpsa: Option<f64>,
    pub cisr: Option<f64>,
    pub pmpa: Option<f64>,
    pub cpdm: Option<f64>,
    pub fphs: Option<f64>,
}

impl Scores {
    pub const NAMES: [&'static str; 6] = ["rcbd", "lpsa", "cisr", "pmpa", "cpdm", "fphs"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "rcbd" => self.rcbd,
            "lpsa" => self.lpsa,
            "cisr" => self.cisr,
            "pmpa" => self.pmpa,
            "cpdm" => self.cpdm,
            "fphs" => self.fphs,
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, Option<f64>)> + '_ {
        Self::NAMES.iter().map(move |&n| (n, self.get(n)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdowns {
    pub rcbd: Vec<BoundaryScore>,
    pub lpsa: Vec<ChunkScore>,
    pub cisr: Vec<ChunkScore>,
    pub pmpa: Vec<ChunkScore>,
    pub cpdm: Vec<ChunkScore>,
    pub fphs: Vec<BoundaryScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub trajectory: String,
    pub scores: Scores,
    pub breakdowns: Breakdowns,
    pub notes: Vec<String>,
    pub config: MetricConfig,
}

/// Metric evaluation context: a validated config and its embedder.
#[derive(Debug, Clone)]
pub struct Evaluator {
    cfg: MetricConfig,
    featurizer: Featurizer,
}

impl Evaluator {
    pub fn new(cfg: MetricConfig) -> Result<Self, MetricError> {
        cfg.validate()?;
        let featurizer = Featurizer::from_spec(&cfg.embedder)?;
        Ok(Self { cfg, featurizer })
    }

    /// Uses an already-built featurizer (e.g. an in-memory external store)
    /// instead of the one named in the config.
    pub fn with_featurizer(cfg: MetricConfig, featurizer: Featurizer) -> Result<Self, MetricError> {
        cfg.validate()?;
        Ok(Self { cfg, featurizer })
    }

    pub fn config(&self) -> &MetricConfig {
        &self.cfg
    }

    pub(crate) fn embed_range(
        &self,
        traj: &Trajectory,
        chunk: usize,
        start: usize,
        end: usize,
    ) -> Result<EmbeddingVector, MetricError> {
        let frames: Vec<_> = traj.chunks[chunk].frames[start..end].iter().collect();
        let key = EmbedKey::Frames { trajectory: traj.id.clone(), chunk, start, end };
        Ok(self.featurizer.embed(&frames, &key)?)
    }

    /// Embedding of every frame of every chunk.
    pub(crate) fn chunk_embeddings(&self, traj: &Trajectory) -> Result<Vec<EmbeddingVector>, MetricError> {
        (0..traj.chunks.len()).map(|k| self.embed_range(traj, k, 0, traj.chunks[k].frames.len())).collect()
    }

    pub(crate) fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    /// Runs every metric. Inapplicable metrics are absent with a note;
    /// structural problems (chunk count, validation) are errors.
    pub fn evaluate(&self, gen: &Trajectory, gt: &Trajectory) -> Result<MetricReport, MetricError> {
        check_pair(gen, gt)?;
        for (which, t) in [("generated", gen), ("ground-truth", gt)] {
            let report = validate_trajectory(t);
            if !report.is_empty() {
                return Err(MetricError::Invalid { which, report });
            }
        }
        if let (Some(a), Some(b)) = (gen.frame_dims(), gt.frame_dims()) {
            if a != b {
                return Err(MetricError::FrameDimsMismatch { gen: a, gt: b });
            }
        }

        let gen_emb = self.chunk_embeddings(gen)?;
        let gt_emb = self.chunk_embeddings(gt)?;

        let mut scores = Scores::default();
        let mut breakdowns = Breakdowns::default();
        let mut notes = Vec::new();

        fn settle<T>(
            name: &str,
            result: Result<Score<T>, MetricError>,
            notes: &mut Vec<String>,
        ) -> Result<Option<(f64, Vec<T>)>, MetricError> {
            match result {
                Ok(s) => {
                    notes.extend(s.notes.into_iter().map(|n| format!("{name}: {n}")));
                    Ok(Some((s.value, s.parts)))
                }
                Err(MetricError::NotApplicable(why)) => {
                    notes.push(format!("{name}: {why}"));
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        }

        if let Some((v, p)) = settle("rcbd", self.rcbd(gen, gt), &mut notes)? {
            scores.rcbd = Some(v);
            breakdowns.rcbd = p;
        }
        if let Some((v, p)) = settle("lpsa", self.lpsa(gen, gt), &mut notes)? {
            scores.lpsa = Some(v);
            breakdowns.lpsa = p;
        }
        if let Some((v, p)) = settle("cisr", self.cisr_from(&gen_emb, &gt_emb), &mut notes)? {
            scores.cisr = Some(v);
            breakdowns.cisr = p;
        }
        if let Some((v, p)) = settle("pmpa", self.pmpa(gen, gt), &mut notes)? {
            scores.pmpa = Some(v);
            breakdowns.pmpa = p;
        }
        if let Some((v, p)) = settle("cpdm", self.cpdm_from(gen, gt, &gen_emb, &gt_emb), &mut notes)? {
            scores.cpdm = Some(v);
            breakdowns.cpdm = p;
        }
        if let Some((v, p)) = settle("fphs", self.fphs(gen, gt), &mut notes)? {
            scores.fphs = Some(v);
            breakdowns.fphs = p;
        }

        Ok(MetricReport { trajectory: gt.id.clone(), scores, breakdowns, notes, config: self.cfg.clone() })
    }
}

pub(crate) fn check_pair(gen: &Trajectory, gt: &Trajectory) -> Result<(), MetricError> {
    if gen.chunks.len() != gt.chunks.len() {
        return Err(MetricError::ChunkCountMismatch { gen: gen.chunks.len(), gt: gt.chunks.len() });
    }
    if gt.chunks.is_empty() {
        return Err(MetricError::NotApplicable("trajectory has no chunks".into()));
    }
    Ok(())
}

pub fn evaluate_all(gen: &Trajectory, gt: &Trajectory, cfg: &MetricConfig) -> Result<MetricReport, MetricError> {
    Evaluator::new(cfg.clone())?.evaluate(gen, gt)
}

pub fn rcbd(gen: &Trajectory, gt: &Trajectory, cfg: &MetricConfig) -> Result<f64, MetricError> {
    Ok(Evaluator::new(cfg.clone())?.rcbd(gen, gt)?.value)
}

pub fn lpsa(gen: &Trajectory, gt: &Trajectory, cfg: &MetricConfig) -> Result<f64, MetricError> {
    Ok(Evaluator::new(cfg.clone())?.lpsa(gen, gt)?.value)
}

pub fn cisr(gen: &Trajectory, gt: &Trajectory, cfg: &MetricConfig) -> Result<f64, MetricError> {
    Ok(Evaluator::new(cfg.clone())?.cisr(gen, gt)?.value)
}

pub fn pmpa(gen: &Trajectory, gt: &Trajectory, cfg: &MetricConfig) -> Result<f64, MetricError> {
    Ok(Evaluator::new(cfg.clone())?.pmpa(gen, gt)?.value)
}

pub fn cpdm(gen: &Trajectory, gt: &Trajectory, cfg: &MetricConfig) -> Result<f64, MetricError> {
    Ok(Evaluator::new(cfg.clone())?.cpdm(gen, gt)?.value)
}

pub fn fphs(gen: &Trajectory, gt: &Trajectory, cfg: &MetricConfig) -> Result<f64, MetricError> {
    Ok(Evaluator::new(cfg.clone())?.fphs(gen, gt)?.value)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::PhaseLabel::*;

    #[test]
    fn defaults_match_published_constants() {
        let cfg = MetricConfig::default();
        assert_eq!(cfg.late_window, 4);
        assert_eq!(cfg.switch_window, 4);
        assert_eq!(cfg.tau_cpdm, 0.05);
        assert_eq!(cfg.resample_steps, 16);
        assert_eq!(cfg.top_fraction, 0.2);
        let json = serde_json::to_value(&cfg).unwrap();
        assert_eq!(json["W"], 4);
        assert_eq!(json["R"], 4);
        assert_eq!(json["tau_cpdm"], 0.05);
        assert_eq!(json["embedder"]["kind"], "reference");
    }

    #[test]
    fn config_round_trips_and_rejects_bad_values() {
        let cfg: MetricConfig = serde_json::from_str(r#"{"W": 2, "tau_pmpa": 1.0}"#).unwrap();
        assert_eq!(cfg.late_window, 2);
        assert_eq!(cfg.switch_window, 4);
        let bad = MetricConfig { top_fraction: 1.5, ..Default::default() };
        assert!(matches!(bad.validate(), Err(MetricError::BadConfig(_))));
        assert!(serde_json::from_str::<MetricConfig>(r#"{"window": 2}"#).is_err());
    }

    #[test]
    fn chunk_count_mismatch_is_an_error() {
        let gen = testutil::flat("g", &[Nav, Manip], 3);
        let gt = testutil::flat("t", &[Nav, Manip, Nav], 3);
        assert!(matches!(
            evaluate_all(&gen, &gt, &MetricConfig::default()),
            Err(MetricError::ChunkCountMismatch { gen: 2, gt: 3 })
        ));
    }

    #[test]
    fn invalid_input_is_an_error() {
        let gen = testutil::flat("g", &[Nav, Manip], 3);
        let mut gt = gen.clone();
        gt.chunks[1].frames.clear();
        assert!(matches!(
            evaluate_all(&gen, &gt, &MetricConfig::default()),
            Err(MetricError::Invalid { which: "ground-truth", .. })
        ));
    }

    #[test]
    fn single_chunk_applicability() {
        let t = crate::microsim::generate_trajectory(&crate::microsim::SimConfig::preset_single_chunk(5)).unwrap().0;
        let r = evaluate_all(&t, &t, &MetricConfig::default()).unwrap();
        assert_eq!(r.scores.rcbd, None);
        assert_eq!(r.scores.fphs, None);
        assert_eq!(r.scores.cpdm, None);
        assert_eq!(r.scores.lpsa, Some(1.0));
        assert_eq!(r.scores.cisr, Some(1.0));
        assert!(r.notes.iter().any(|n| n.starts_with("rcbd:")));
        assert!(r.notes.iter().any(|n| n.starts_with("fphs:") && n.contains("no phase switch")));
        assert!(r.notes.iter().any(|n| n.starts_with("cpdm:")));
    }
}
