use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wemeval_core::metrics::{evaluate_all, MetricConfig};
use wemeval_core::microsim::{generate_trajectory, perturb_rollout, PerturbKind, SimConfig};
use wemeval_core::rollout::{PhaseLabel, Trajectory};

fn small(rng: &mut ChaCha8Rng) -> Option<(Trajectory, Trajectory)> {
    let k = rng.random_range(1..=4);
    let phases: Vec<PhaseLabel> =
        (0..k).map(|_| if rng.random_bool(0.5) { PhaseLabel::Nav } else { PhaseLabel::Manip }).collect();
    let steps = rng.random_range(2..=5);
    let (gt, _) = generate_trajectory(&SimConfig::preset(rng.random(), &phases, steps, 16, 16)).ok()?;
    let (other, _) = generate_trajectory(&SimConfig::preset(rng.random(), &phases, steps, 16, 16)).ok()?;
    let gen = match rng.random_range(0..3) {
        0 => other,
        1 => perturb_rollout(&gt, PerturbKind::FrameNoise, rng.random_range(0.01..0.5), rng.random()).unwrap(),
        _ => perturb_rollout(&gt, PerturbKind::PhaseSwap, 1.0, rng.random()).unwrap(),
    };
    Some((gen, gt))
}

#[test]
fn scores_stay_in_range_on_random_pairs() {
    let cfg = MetricConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 1000 {
        let Some((gen, gt)) = small(&mut rng) else { continue };
        let r = evaluate_all(&gen, &gt, &cfg).unwrap();
        let within = |v: Option<f64>, lo: f64, hi: f64, open_lo: bool| {
            v.is_none_or(|v| v <= hi && if open_lo { v > lo } else { v >= lo })
        };
        assert!(within(r.scores.rcbd, 0.0, 1.0, true), "{:?}", r.scores);
        assert!(within(r.scores.lpsa, -1.0, 1.0, false), "{:?}", r.scores);
        assert!(within(r.scores.cisr, 0.0, 1.0, true), "{:?}", r.scores);
        assert!(within(r.scores.pmpa, 0.0, 1.0, true), "{:?}", r.scores);
        assert!(within(r.scores.cpdm, 0.0, 1.0, false), "{:?}", r.scores);
        assert!(within(r.scores.fphs, -1.0, 1.0, false), "{:?}", r.scores);
        checked += 1;
    }
}

#[test]
fn single_chunk_reports_absent_scores() {
    let (t, _) = generate_trajectory(&SimConfig::preset_single_chunk(5)).unwrap();
    let r = evaluate_all(&t, &t, &MetricConfig::default()).unwrap();
    assert_eq!((r.scores.rcbd, r.scores.fphs, r.scores.cpdm), (None, None, None));
    assert_eq!((r.scores.lpsa, r.scores.cisr), (Some(1.0), Some(1.0)));
    for m in ["rcbd", "fphs", "cpdm"] {
        assert!(r.notes.iter().any(|n| n.starts_with(m)), "{m}: {:?}", r.notes);
    }
    assert!(r.notes.iter().any(|n| n.contains("no phase switch")));
}

#[test]
fn noise_rarely_raises_lpsa_or_fphs() {
    let cfg = MetricConfig::default();
    let (mut ordered, mut total) = (0, 0);
    for seed in 0..20 {
        let (gt, _) = generate_trajectory(&SimConfig::preset_mixed(seed)).unwrap();
        let mut prev: Option<(f64, f64)> = None;
        for sigma in [0.0, 0.05, 0.1, 0.2] {
            let gen = perturb_rollout(&gt, PerturbKind::FrameNoise, sigma, seed).unwrap();
            let r = evaluate_all(&gen, &gt, &cfg).unwrap();
            let cur = (r.scores.lpsa.unwrap(), r.scores.fphs.unwrap());
            if let Some(p) = prev {
                ordered += (cur.0 <= p.0) as usize + (cur.1 <= p.1) as usize;
                total += 2;
            }
            prev = Some(cur);
        }
    }
    assert!(ordered as f64 >= 0.9 * total as f64, "{ordered}/{total}");
}

#[test]
fn shuffled_chunks_lower_cisr() {
    let cfg = MetricConfig::default();
    for seed in 0..6 {
        let (gt, _) = generate_trajectory(&SimConfig::preset_mixed(seed)).unwrap();
        let base = evaluate_all(&gt, &gt, &cfg).unwrap().scores.cisr.unwrap();
        let gen = perturb_rollout(&gt, PerturbKind::ChunkShuffle, 1.0, seed).unwrap();
        assert!(evaluate_all(&gen, &gt, &cfg).unwrap().scores.cisr.unwrap() < base);
    }
}

#[test]
fn chunk_count_mismatch_is_an_error() {
    let (gt, _) = generate_trajectory(&SimConfig::preset_mixed(0)).unwrap();
    let mut gen = gt.clone();
    gen.chunks.pop();
    assert!(evaluate_all(&gen, &gt, &MetricConfig::default()).is_err());
}
