//! Multi-turn continuity: RCBD, LPSA and CISR.

use super::{check_pair, BoundaryScore, ChunkScore, Evaluator, MetricError, Score};
use crate::featurizer::{cosine_similarity, embedding_distance, EmbeddingVector};
use crate::rollout::Trajectory;

/// Ratio agreement `exp(−|ln(x / y)|)` of two positive gaps, evaluated in
/// the equivalent closed form `min(x, y) / max(x, y)`, which is exactly
/// symmetric and equals 1 only when `x == y`.
pub fn symmetric_match(x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    if lo == hi {
        return 1.0;
    }
    lo / hi
}

/// `Σ k·r_k / Σ k` over 1-based chunk indices.
pub fn late_weighted_mean(r: &[f64]) -> f64 {
    let (num, den) =
        r.iter().enumerate().fold((0.0, 0.0), |(n, d), (i, &v)| (n + (i + 1) as f64 * v, d + (i + 1) as f64));
    num / den
}

/// Reciprocal rank of candidate `correct` when candidates are ranked by
/// descending similarity. Ties rank pessimistically: every candidate at
/// least as similar as the correct one ranks ahead of or with it.
pub fn reciprocal_rank(similarities: &[f64], correct: usize) -> f64 {
    let target = similarities[correct];
    let rank = similarities.iter().filter(|&&s| s >= target).count();
    1.0 / rank as f64
}

fn flows_of<'a>(traj: &'a Trajectory, k: usize, which: &str) -> Result<&'a [crate::flowlab::FlowField], MetricError> {
    match traj.chunks[k].flows.as_deref() {
        Some(f) if !f.is_empty() => Ok(f),
        _ => Err(MetricError::NotApplicable(format!("{which} chunk {} has no flow fields at the boundary", k + 1))),
    }
}

/// Appearance gap `d_p(last frame of chunk k, first frame of chunk k+1)`
/// and motion gap `|mean|F| of last flow of k − mean|F| of first flow of
/// k+1|`, for 0-based `k`.
fn boundary_gaps(ev: &Evaluator, traj: &Trajectory, k: usize, which: &str) -> Result<(f64, f64), MetricError> {
    let a = &traj.chunks[k];
    let last = ev.embed_range(traj, k, a.frames.len() - 1, a.frames.len())?;
    let first = ev.embed_range(traj, k + 1, 0, 1)?;
    let appearance = embedding_distance(&last, &first)?;
    let before = flows_of(traj, k, which)?.last().unwrap().mean_magnitude();
    let after = flows_of(traj, k + 1, which)?[0].mean_magnitude();
    Ok((appearance, (before - after).abs()))
}

impl Evaluator {
    pub fn rcbd(&self, gen: &Trajectory, gt: &Trajectory) -> Result<Score<BoundaryScore>, MetricError> {
        check_pair(gen, gt)?;
        let k_total = gt.chunks.len();
        if k_total < 2 {
            return Err(MetricError::NotApplicable("needs at least two chunks".into()));
        }
        let eps = self.config().eps;
        let mut parts = Vec::with_capacity(k_total - 1);
        for k in 0..k_total - 1 {
            let (b, m) = boundary_gaps(self, gen, k, "generated")?;
            let (b_gt, m_gt) = boundary_gaps(self, gt, k, "ground-truth")?;
            let appearance = symmetric_match(b.max(eps), b_gt.max(eps));
            let motion = symmetric_match(m.max(eps), m_gt.max(eps));
            parts.push(BoundaryScore { boundary: k + 1, score: (appearance * motion).sqrt() });
        }
        let value = parts.iter().map(|p| p.score).sum::<f64>() / parts.len() as f64;
        Ok(Score::new(value, parts))
    }

    pub fn lpsa(&self, gen: &Trajectory, gt: &Trajectory) -> Result<Score<ChunkScore>, MetricError> {
        check_pair(gen, gt)?;
        let w = self.config().late_window;
        let mut parts = Vec::with_capacity(gt.chunks.len());
        for k in 0..gt.chunks.len() {
            let (tg, tt) = (gen.chunks[k].frames.len(), gt.chunks[k].frames.len());
            let a = self.embed_range(gen, k, tg - w.min(tg), tg)?;
            let b = self.embed_range(gt, k, tt - w.min(tt), tt)?;
            parts.push(ChunkScore { chunk: k + 1, score: cosine_similarity(&a, &b)? });
        }
        let r: Vec<f64> = parts.iter().map(|p| p.score).collect();
        Ok(Score::new(late_weighted_mean(&r), parts))
    }

    pub fn cisr(&self, gen: &Trajectory, gt: &Trajectory) -> Result<Score<ChunkScore>, MetricError> {
        check_pair(gen, gt)?;
        self.cisr_from(&self.chunk_embeddings(gen)?, &self.chunk_embeddings(gt)?)
    }

    pub(crate) fn cisr_from(
        &self,
        gen: &[EmbeddingVector],
        gt: &[EmbeddingVector],
    ) -> Result<Score<ChunkScore>, MetricError> {
        let mut parts = Vec::with_capacity(gen.len());
        for (k, g) in gen.iter().enumerate() {
            let sims = gt.iter().map(|t| cosine_similarity(g, t)).collect::<Result<Vec<_>, _>>()?;
            parts.push(ChunkScore { chunk: k + 1, score: reciprocal_rank(&sims, k) });
        }
        let value = parts.iter().map(|p| p.score).sum::<f64>() / parts.len() as f64;
        Ok(Score::new(value, parts))
    }
}
