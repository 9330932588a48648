use wemeval_core::flowlab::{render_camera_flow, residual_object_flow};
use wemeval_core::metrics::change_region;
use wemeval_core::microsim::{generate_trajectory, SimConfig};
use wemeval_core::rollout::{load_manifest, save_manifest, validate_trajectory, PhaseLabel};

#[test]
fn presets_are_valid_and_deterministic() {
    for seed in 0..12 {
        for cfg in [SimConfig::preset_nav(seed), SimConfig::preset_manip(seed), SimConfig::preset_mixed(seed)] {
            let (a, ga) = generate_trajectory(&cfg).unwrap();
            let (b, gb) = generate_trajectory(&cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(ga, gb);
            assert!(validate_trajectory(&a).is_empty());
            assert_eq!(a.frame_dims(), Some((64, 64)));
            assert_eq!(a.num_chunks(), 4);
            assert!(a.chunks.iter().all(|c| c.frames.len() == 6));
        }
    }
}

#[test]
fn flows_split_exactly_by_phase() {
    let (t, gt) = generate_trajectory(&SimConfig::preset_mixed(2)).unwrap();
    for (k, chunk) in t.chunks.iter().enumerate() {
        let flows = chunk.flows.as_ref().unwrap();
        for (i, f) in flows.iter().enumerate() {
            let (cam, obj) = (&gt.camera_flows[k][i], &gt.object_flows[k][i]);
            match chunk.phase {
                PhaseLabel::Nav => {
                    assert_eq!(obj.max_magnitude(), 0.0);
                    assert_eq!(f, cam);
                }
                PhaseLabel::Manip => {
                    assert_eq!(cam.max_magnitude(), 0.0);
                    assert_eq!(f, obj);
                    assert!(obj.max_magnitude() > 0.5);
                }
            }
            let rendered = render_camera_flow(&gt.homographies[k][i], f.width, f.height).unwrap();
            assert!(residual_object_flow(cam, &rendered).unwrap().max_magnitude() < 1e-4);
        }
    }
}

#[test]
fn object_motion_stays_inside_the_ego_mask() {
    let (t, gt) = generate_trajectory(&SimConfig::preset_manip(9)).unwrap();
    for (k, chunk) in t.chunks.iter().enumerate() {
        for (i, f) in chunk.flows.as_ref().unwrap().iter().enumerate() {
            let mask = &gt.masks[k][i];
            assert!(mask.is_binary());
            for y in 0..f.height {
                for x in 0..f.width {
                    let (u, v) = f.at(x, y);
                    if u != 0.0 || v != 0.0 {
                        assert!(mask.is_ego(x, y), "motion at ({x}, {y}) outside the mask");
                    }
                }
            }
        }
    }
}

#[test]
fn change_region_covers_the_moving_object() {
    use PhaseLabel::*;
    let (t, _) = generate_trajectory(&SimConfig::preset(4, &[Nav, Manip], 6, 64, 64)).unwrap();
    let flows: Vec<_> = t.chunks[1].flows.as_ref().unwrap()[..3].iter().collect();
    let region = change_region(&flows, 0.2).unwrap();
    for f in &flows {
        for y in 0..f.height {
            for x in 0..f.width {
                let (u, v) = f.at(x, y);
                if u != 0.0 || v != 0.0 {
                    assert!(region.contains(x, y), "moving pixel ({x}, {y}) outside the region");
                }
            }
        }
    }
}

#[test]
fn fixtures_survive_a_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = generate_trajectory(&SimConfig::preset_mixed(5).with_noise(0.03)).unwrap();
    let path = dir.path().join("fixture.json");
    save_manifest(&t, &path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), t);
}
