#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wemeval_core::microsim::{generate_trajectory, perturb_rollout, PerturbKind, SimConfig};
use wemeval_core::rollout::{save_manifest, PhaseLabel, Trajectory};

pub fn wemeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wemeval"))
        .args(args)
        .env_remove("WEMEVAL_THREADS")
        .env_remove("WEMEVAL_FAULT_UNROUTE")
        .output()
        .expect("running wemeval")
}

fn random_phases(rng: &mut ChaCha8Rng, k: usize) -> Vec<PhaseLabel> {
    (0..k).map(|_| if rng.random_bool(0.5) { PhaseLabel::Nav } else { PhaseLabel::Manip }).collect()
}

fn small_config(seed: u64, phases: &[PhaseLabel], steps: &[usize], w: usize, h: usize) -> SimConfig {
    let mut cfg = SimConfig::preset(seed, phases, 2, w, h);
    for (c, &t) in cfg.chunks.iter_mut().zip(steps) {
        c.steps = t;
    }
    cfg
}

/// A random (generated, ground-truth) pair with at most four chunks of at
/// most six frames. The generated side is the ground truth itself, a
/// corruption of it, or an unrelated scene with the same chunk layout.
pub fn random_pair(seed: u64) -> (Trajectory, Trajectory) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let k = rng.random_range(1..=4);
        let phases = random_phases(&mut rng, k);
        let steps: Vec<usize> = (0..k).map(|_| rng.random_range(2..=6)).collect();
        let (w, h) = (rng.random_range(16..=24), rng.random_range(16..=24));
        let Ok((gt, _)) = generate_trajectory(&small_config(rng.random(), &phases, &steps, w, h)) else {
            continue;
        };
        let variant = rng.random_range(0..6);
        let noisy = |rng: &mut ChaCha8Rng| {
            perturb_rollout(&gt, PerturbKind::FrameNoise, rng.random_range(0.02..0.2), rng.random()).unwrap()
        };
        let gen = match variant {
            0 => gt.clone(),
            2 if k >= 2 => perturb_rollout(&gt, PerturbKind::ChunkShuffle, 1.0, rng.random()).unwrap(),
            3 if k >= 2 => {
                perturb_rollout(&gt, PerturbKind::BoundarySmooth, rng.random_range(0.2..1.0), rng.random()).unwrap()
            }
            4 => match generate_trajectory(&small_config(rng.random(), &phases, &steps, w, h)) {
                Ok((other, _)) => other,
                Err(_) => noisy(&mut rng),
            },
            5 => perturb_rollout(&gt, PerturbKind::PhaseSwap, 1.0, rng.random()).unwrap(),
            _ => noisy(&mut rng),
        };
        return (gen, gt);
    }
}

/// Writes `fixtures` ground-truth scenes and four generated variants of
/// each (identity, noise, shuffle, boundary smoothing) under `dir`, plus a
/// pair list. Returns the pair list path.
pub fn write_pair_set(dir: &Path, fixtures: usize) -> PathBuf {
    use PhaseLabel::*;
    let mut pairs = Vec::new();
    for s in 0..fixtures as u64 {
        let phases = [[Nav, Manip, Nav], [Manip, Manip, Nav], [Nav, Nav, Manip]][(s % 3) as usize];
        let cfg = SimConfig::preset(s, &phases, 4, 32, 32);
        let (gt, _) = generate_trajectory(&cfg).expect("fixture");
        let gt_name = format!("gt-{s:03}.json");
        save_manifest(&gt, &dir.join(&gt_name)).unwrap();
        let variants = [
            ("same", gt.clone()),
            ("noise", perturb_rollout(&gt, PerturbKind::FrameNoise, 0.1, s).unwrap()),
            ("shuffle", perturb_rollout(&gt, PerturbKind::ChunkShuffle, 1.0, s).unwrap()),
            ("smooth", perturb_rollout(&gt, PerturbKind::BoundarySmooth, 0.5, s).unwrap()),
        ];
        for (tag, mut gen) in variants {
            gen.id = format!("gen-{s:03}-{tag}");
            let name = format!("{}.json", gen.id);
            save_manifest(&gen, &dir.join(&name)).unwrap();
            pairs.push(serde_json::json!({ "gen": name, "gt": gt_name }));
        }
    }
    let list = dir.join("pairs.json");
    std::fs::write(&list, serde_json::to_string_pretty(&pairs).unwrap()).unwrap();
    list
}
