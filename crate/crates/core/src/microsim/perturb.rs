use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::rollout::{Frame, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbKind {
    /// Clamped Gaussian pixel noise with `σ = magnitude`.
    FrameNoise,
    /// Moves chunk contents so that no chunk keeps its position. Instructions
    /// and phase labels stay in place.
    ChunkShuffle,
    /// Flips the phase label of one chunk.
    PhaseSwap,
    /// Cross-fades the two frames at one chunk boundary so that their
    /// difference shrinks by the factor `1 − magnitude`.
    BoundarySmooth,
}

fn blend(a: &Frame, b: &Frame, wa: f32) -> Frame {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| wa * x + (1.0 - wa) * y).collect();
    Frame::new(a.width, a.height, a.channels, data)
}

/// Random permutation of `0..n` with no fixed point.
fn derangement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// Corrupts a rollout for metric sensitivity checks. A zero magnitude
/// returns the input unchanged for every kind.
pub fn perturb_rollout(
    traj: &Trajectory,
    kind: PerturbKind,
    magnitude: f64,
    seed: u64,
) -> Result<Trajectory, SimError> {
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(SimError::BadPerturbation(format!("magnitude {magnitude} must be finite and non-negative")));
    }
    if magnitude == 0.0 {
        return Ok(traj.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = traj.clone();
    let k = traj.chunks.len();
    match kind {
        PerturbKind::FrameNoise => {
            let normal = Normal::new(0.0, magnitude).map_err(|e| SimError::BadPerturbation(e.to_string()))?;
            for frame in out.chunks.iter_mut().flat_map(|c| c.frames.iter_mut()) {
                for v in &mut frame.data {
                    *v = (f64::from(*v) + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
            }
        }
        PerturbKind::ChunkShuffle => {
            if k < 2 {
                return Err(SimError::BadPerturbation("chunk-shuffle needs at least two chunks".into()));
            }
            for (dst, src) in derangement(k, &mut rng).into_iter().enumerate() {
                let from = &traj.chunks[src];
                let to = &mut out.chunks[dst];
                to.frames = from.frames.clone();
                to.flows = from.flows.clone();
                to.masks = from.masks.clone();
            }
        }
        PerturbKind::PhaseSwap => {
            if k == 0 {
                return Err(SimError::BadPerturbation("no chunks".into()));
            }
            let c = &mut out.chunks[rng.random_range(0..k)];
            c.phase = c.phase.opposite();
        }
        PerturbKind::BoundarySmooth => {
            if k < 2 {
                return Err(SimError::BadPerturbation("boundary-smooth needs at least two chunks".into()));
            }
            if magnitude > 1.0 {
                return Err(SimError::BadPerturbation(format!("blend factor {magnitude} exceeds 1")));
            }
            let b = rng.random_range(0..k - 1);
            let (last, first) = (traj.chunks[b].frames.last(), traj.chunks[b + 1].frames.first());
            let (Some(a), Some(n)) = (last, first) else {
                return Err(SimError::BadPerturbation("empty chunk at the boundary".into()));
            };
            if a.dims() != n.dims() || a.channels != n.channels {
                return Err(SimError::BadPerturbation("frames at the boundary differ in shape".into()));
            }
            let keep = 1.0 - magnitude as f32 / 2.0;
            *out.chunks[b].frames.last_mut().expect("checked above") = blend(a, n, keep);
            *out.chunks[b + 1].frames.first_mut().expect("checked above") = blend(n, a, keep);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::perceptual_distance;
    use crate::microsim::{generate_trajectory, SimConfig};

    fn fixture() -> Trajectory {
        generate_trajectory(&SimConfig::preset_mixed(1)).unwrap().0
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let t = fixture();
        for kind in
            [PerturbKind::FrameNoise, PerturbKind::ChunkShuffle, PerturbKind::PhaseSwap, PerturbKind::BoundarySmooth]
        {
            assert_eq!(perturb_rollout(&t, kind, 0.0, 5).unwrap(), t);
        }
    }

    #[test]
    fn shuffle_is_a_derangement() {
        let mut t = fixture();
        t.chunks.truncate(3);
        for seed in 0..20 {
            let s = perturb_rollout(&t, PerturbKind::ChunkShuffle, 1.0, seed).unwrap();
            let mut seen = [false; 3];
            for (i, c) in s.chunks.iter().enumerate() {
                let src = t.chunks.iter().position(|o| o.frames == c.frames).unwrap();
                assert_ne!(src, i);
                seen[src] = true;
                assert_eq!(c.phase, t.chunks[i].phase);
            }
            assert!(seen.iter().all(|&b| b));
        }
    }

    #[test]
    fn phase_swap_changes_one_label() {
        let t = fixture();
        let s = perturb_rollout(&t, PerturbKind::PhaseSwap, 1.0, 2).unwrap();
        let changed = t.chunks.iter().zip(&s.chunks).filter(|(a, b)| a.phase != b.phase).count();
        assert_eq!(changed, 1);
    }

    #[test]
    fn full_blend_closes_the_boundary_gap() {
        let t = fixture();
        let s = perturb_rollout(&t, PerturbKind::BoundarySmooth, 1.0, 3).unwrap();
        let b = (0..3).find(|&b| t.chunks[b].frames.last() != s.chunks[b].frames.last()).unwrap();
        let gap = |x: &Trajectory| {
            perceptual_distance(x.chunks[b].frames.last().unwrap(), &x.chunks[b + 1].frames[0], 8).unwrap()
        };
        assert!(gap(&s) < gap(&t));
        assert!(gap(&s) < 1e-12);
    }

    #[test]
    fn noise_is_clamped_and_seeded() {
        let t = fixture();
        let a = perturb_rollout(&t, PerturbKind::FrameNoise, 0.5, 9).unwrap();
        assert_eq!(a, perturb_rollout(&t, PerturbKind::FrameNoise, 0.5, 9).unwrap());
        assert!(a.chunks.iter().flat_map(|c| &c.frames).flat_map(|f| &f.data).all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, t);
        assert!(perturb_rollout(&t, PerturbKind::FrameNoise, -1.0, 9).is_err());
        assert!(perturb_rollout(&t, PerturbKind::BoundarySmooth, 1.5, 9).is_err());
    }
}
