//! Navigation/manipulation fidelity: PMPA, CPDM and FPHS.

use super::{check_pair, BoundaryScore, ChunkScore, Evaluator, MetricError, ProfileReduction, Score};
use crate::featurizer::{cosine_similarity, EmbedKey, EmbeddingVector};
use crate::flowlab::{motion_profile, resample_profile, FlowError, FlowField};
use crate::rollout::{switch_indices, Frame, PhaseLabel, Trajectory};

/// `exp(−δ/τ)`.
pub fn profile_score(delta: f64, tau: f64) -> f64 {
    (-delta / tau).exp()
}

/// `σ((r⁺ − r⁻)/τ)`.
pub fn margin_score(r_pos: f64, r_neg: f64, tau: f64) -> f64 {
    let z = (r_pos - r_neg) / tau;
    1.0 / (1.0 + (-z).exp())
}

/// Pixels whose accumulated motion lies in the top fraction, with their
/// axis-aligned bounding box (inclusive-exclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeRegion {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl ChangeRegion {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }
}

/// Sums flow magnitudes per pixel and keeps every pixel at or above the
/// value ranked `⌈fraction · N⌉`-th from the top (ties at the cutoff are
/// kept).
pub fn change_region(flows: &[&FlowField], fraction: f64) -> Option<ChangeRegion> {
    let first = flows.first()?;
    let (w, h) = first.dims();
    let n = w * h;
    if n == 0 || flows.iter().any(|f| f.dims() != (w, h)) {
        return None;
    }
    let mut acc = vec![0.0f64; n];
    for f in flows {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += f.magnitude_at(i);
        }
    }
    let mut sorted = acc.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cutoff = sorted[crate::flowlab::top_count(n, fraction) - 1];
    let pixels: Vec<bool> = acc.iter().map(|&a| a >= cutoff).collect();

    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if pixels[y * w + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    Some(ChangeRegion { width: w, height: h, pixels, x0, y0, x1, y1 })
}

/// The last `r` frames of chunk `before` and the first `r` of the next.
fn switch_window(traj: &Trajectory, before: usize, r: usize) -> Vec<&Frame> {
    let (a, b) = (&traj.chunks[before].frames, &traj.chunks[before + 1].frames);
    let (na, nb) = (r.min(a.len()), r.min(b.len()));
    a[a.len() - na..].iter().chain(&b[..nb]).collect()
}

impl Evaluator {
    pub fn pmpa(&self, gen: &Trajectory, gt: &Trajectory) -> Result<Score<ChunkScore>, MetricError> {
        check_pair(gen, gt)?;
        let cfg = self.config();
        let stats = cfg.motion_stats();
        let mut parts = Vec::new();
        let mut notes = Vec::new();
        for k in 0..gt.chunks.len() {
            let (a, b) = (&gen.chunks[k], &gt.chunks[k]);
            let profiles = motion_profile(a, &stats).and_then(|pa| Ok((pa, motion_profile(b, &stats)?)));
            let (pa, pb) = match profiles {
                Ok(p) => p,
                Err(FlowError::TooShort(_)) => {
                    notes.push(format!("chunk {} skipped: fewer than two frames", k + 1));
                    continue;
                }
                Err(FlowError::MissingFlows) => {
                    return Err(MetricError::NotApplicable(format!("chunk {} has no flow fields", k + 1)))
                }
                Err(e) => return Err(MetricError::NotApplicable(e.to_string())),
            };
            let (ra, rb) = (resample_profile(&pa, cfg.resample_steps), resample_profile(&pb, cfg.resample_steps));
            let dists = ra
                .steps
                .iter()
                .zip(&rb.steps)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt());
            let total: f64 = dists.sum();
            let delta = match cfg.pmpa_reduction {
                ProfileReduction::Mean => total / cfg.resample_steps as f64,
                ProfileReduction::Sum => total,
            };
            parts.push(ChunkScore { chunk: k + 1, score: profile_score(delta, cfg.tau_pmpa) });
        }
        if parts.is_empty() {
            return Err(MetricError::NotApplicable("no chunk has at least two frames".into()));
        }
        let value = parts.iter().map(|p| p.score).sum::<f64>() / parts.len() as f64;
        Ok(Score { value, parts, notes })
    }

    pub fn cpdm(&self, gen: &Trajectory, gt: &Trajectory) -> Result<Score<ChunkScore>, MetricError> {
        check_pair(gen, gt)?;
        let (a, b) = (self.chunk_embeddings(gen)?, self.chunk_embeddings(gt)?);
        self.cpdm_from(gen, gt, &a, &b)
    }

    /// Chunk `k` is labelled by the generated trajectory's phase; negatives
    /// are ground-truth chunks of the other phase.
    pub(crate) fn cpdm_from(
        &self,
        gen: &Trajectory,
        gt: &Trajectory,
        gen_emb: &[EmbeddingVector],
        gt_emb: &[EmbeddingVector],
    ) -> Result<Score<ChunkScore>, MetricError> {
        let phases = gt.phases();
        if !(phases.contains(&PhaseLabel::Nav) && phases.contains(&PhaseLabel::Manip)) {
            return Err(MetricError::NotApplicable("ground truth has a single phase".into()));
        }
        let tau = self.config().tau_cpdm;
        let mut parts = Vec::with_capacity(gen_emb.len());
        for (k, g) in gen_emb.iter().enumerate() {
            let own = gen.chunks[k].phase;
            let r_pos = cosine_similarity(g, &gt_emb[k])?;
            let mut r_neg = f64::NEG_INFINITY;
            for (j, t) in gt_emb.iter().enumerate() {
                if phases[j] != own {
                    r_neg = r_neg.max(cosine_similarity(g, t)?);
                }
            }
            parts.push(ChunkScore { chunk: k + 1, score: margin_score(r_pos, r_neg, tau) });
        }
        let value = parts.iter().map(|p| p.score).sum::<f64>() / parts.len() as f64;
        Ok(Score::new(value, parts))
    }

    /// Phase switches are taken from the ground-truth labels.
    pub fn fphs(&self, gen: &Trajectory, gt: &Trajectory) -> Result<Score<BoundaryScore>, MetricError> {
        check_pair(gen, gt)?;
        let switches = switch_indices(&gt.phases());
        if switches.is_empty() {
            return Err(MetricError::NotApplicable("no phase switch".into()));
        }
        let r = self.config().switch_window;
        let mut parts = Vec::with_capacity(switches.len());
        for boundary in switches {
            let (before, after) = (boundary - 1, boundary);

            let (ca, cb) = (&gt.chunks[before], &gt.chunks[after]);
            let missing = || MetricError::NotApplicable(format!("ground-truth flows missing around switch {boundary}"));
            let fa = ca.flows.as_deref().ok_or_else(missing)?;
            let fb = cb.flows.as_deref().ok_or_else(missing)?;
            let na = r.min(ca.frames.len());
            let nb = r.min(cb.frames.len());
            let flows: Vec<&FlowField> = fa[ca.frames.len() - na..].iter().chain(&fb[..nb - 1]).collect();
            let region = change_region(&flows, self.config().top_fraction).ok_or_else(|| {
                MetricError::NotApplicable(format!("no ground-truth flow inside the window at switch {boundary}"))
            })?;
            let (x0, y0, w, h) = (region.x0, region.y0, region.x1 - region.x0, region.y1 - region.y0);

            let embed = |traj: &Trajectory| -> Result<EmbeddingVector, MetricError> {
                let crops: Vec<Frame> =
                    switch_window(traj, before, r).into_iter().map(|f| f.crop(x0, y0, w, h)).collect();
                let refs: Vec<&Frame> = crops.iter().collect();
                let key = EmbedKey::SwitchWindow { trajectory: traj.id.clone(), boundary };
                Ok(self.featurizer().embed(&refs, &key)?)
            };
            let score = cosine_similarity(&embed(gen)?, &embed(gt)?)?;
            parts.push(BoundaryScore { boundary, score });
        }
        let value = parts.iter().map(|p| p.score).sum::<f64>() / parts.len() as f64;
        Ok(Score::new(value, parts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::testutil::{at_angle, flat, store};
    use crate::metrics::MetricConfig;
    use crate::rollout::PhaseLabel::*;

    #[test]
    fn scalar_score_examples() {
        assert_eq!(profile_score(0.0, 0.5), 1.0);
        assert!((profile_score(0.5, 0.5) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(margin_score(0.3, 0.3, 0.05), 0.5);
        assert!((margin_score(0.85, 0.8, 0.05) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((margin_score(0.8, 0.85, 0.05) - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn pmpa_identity_and_offset() {
        let gt = flat("t", &[Nav, Manip], 3);
        let ev = Evaluator::new(MetricConfig::default()).unwrap();
        assert_eq!(ev.pmpa(&gt, &gt).unwrap().value, 1.0);

        // Uniform magnitudes 1 vs 2 on a 4x4 frame change only the first
        // two components, each by 1/L.
        let mut gen = gt.clone();
        for c in &mut gen.chunks {
            c.flows = Some(vec![FlowField::constant(4, 4, 2.0, 0.0); 2]);
        }
        let l = 32f64.sqrt();
        let delta = (2.0f64).sqrt() / l;
        let expected = (-delta / 0.5).exp();
        let s = ev.pmpa(&gen, &gt).unwrap();
        assert!((s.value - expected).abs() < 1e-12, "{} vs {expected}", s.value);
    }

    #[test]
    fn pmpa_skips_short_chunks() {
        let mut gt = flat("t", &[Nav, Manip], 3);
        gt.chunks[1] = flat("t", &[Manip], 1).chunks.remove(0);
        let ev = Evaluator::new(MetricConfig::default()).unwrap();
        let s = ev.pmpa(&gt, &gt).unwrap();
        assert_eq!(s.parts.len(), 1);
        assert_eq!(s.notes.len(), 1);
    }

    #[test]
    fn pmpa_without_flows_is_absent() {
        let mut gt = flat("t", &[Nav], 3);
        gt.chunks[0].flows = None;
        let ev = Evaluator::new(MetricConfig::default()).unwrap();
        assert!(matches!(ev.pmpa(&gt, &gt), Err(MetricError::NotApplicable(_))));
    }

    #[test]
    fn cpdm_margins() {
        // r+ − r− = 0.05 at every chunk.
        let gt = flat("t", &[Nav, Manip], 2);
        let mut gen = gt.clone();
        gen.id = "g".into();
        let (a, b) = (0.4f64, 0.8f64);
        let theta_b = (a.cos() - 0.05).acos();
        let entries = vec![
            ("g/c0/f0-2".to_string(), at_angle(0.0)),
            ("t/c0/f0-2".to_string(), at_angle(a)),
            ("t/c1/f0-2".to_string(), at_angle(theta_b)),
            ("g/c1/f0-2".to_string(), at_angle(theta_b - b)),
        ];
        let ev = Evaluator::with_featurizer(MetricConfig::default(), store(&entries)).unwrap();
        let s = ev.cpdm(&gen, &gt).unwrap();
        assert!((s.parts[0].score - 0.731_058_578_630_004_9).abs() < 1e-9, "{:?}", s.parts);
    }

    #[test]
    fn cpdm_single_phase_is_absent() {
        let gt = flat("t", &[Nav, Nav], 2);
        let ev = Evaluator::new(MetricConfig::default()).unwrap();
        assert!(matches!(ev.cpdm(&gt, &gt), Err(MetricError::NotApplicable(_))));
    }

    #[test]
    fn change_region_picks_moving_block_with_ties() {
        let (w, h) = (10, 10);
        let mut u = vec![0.0f32; w * h];
        for y in 2..6 {
            for x in 3..8 {
                u[y * w + x] = 1.5;
            }
        }
        let f = FlowField::new(w, h, u, vec![0.0; w * h]);
        let r = change_region(&[&f, &f], 0.2).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (3, 2, 8, 6));
        assert_eq!(r.pixels.iter().filter(|&&p| p).count(), 20);

        // All-equal motion: every pixel ties at the cutoff.
        let g = FlowField::constant(w, h, 1.0, 1.0);
        let r = change_region(&[&g], 0.2).unwrap();
        assert!(r.pixels.iter().all(|&p| p));
    }

    #[test]
    fn fphs_identity_and_absence() {
        let gt = flat("t", &[Nav, Manip, Manip], 3);
        let ev = Evaluator::new(MetricConfig::default()).unwrap();
        let s = ev.fphs(&gt, &gt).unwrap();
        assert_eq!(s.parts.len(), 1);
        assert_eq!(s.parts[0].boundary, 1);
        assert_eq!(s.value, 1.0);
        let nav = flat("t", &[Nav, Nav], 3);
        match ev.fphs(&nav, &nav) {
            Err(MetricError::NotApplicable(why)) => assert!(why.contains("no phase switch")),
            other => panic!("{other:?}"),
        }
    }
}
