//! Deterministic 2D navigation/manipulation scenes with exact ground truth.
//!
//! The camera is an accumulated similarity transform `C_t` from scene to
//! image coordinates. Navigation chunks advance it by a fixed per-step
//! similarity, manipulation chunks hold it and translate the ego object by a
//! fixed image-space step. Pixels are sampled at integer coordinates, so
//! every recorded flow is the exact displacement of the surface point seen
//! at that pixel.

mod perturb;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowlab::{render_camera_flow, FlowError, FlowField, Homography};
use crate::rollout::{Chunk, Frame, PhaseLabel, Trajectory, WorldEgoMask};

pub use perturb::{perturb_rollout, PerturbKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    BadConfig(String),
    #[error("ego object leaves the frame in chunk {chunk}, frame {frame}")]
    OutOfBounds { chunk: usize, frame: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("invalid perturbation: {0}")]
    BadPerturbation(String),
}

/// Per-step camera similarity about the frame centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraMotion {
    pub tx: f64,
    pub ty: f64,
    pub angle: f64,
    pub zoom: f64,
}

impl Default for CameraMotion {
    fn default() -> Self {
        Self { tx: 0.0, ty: 0.0, angle: 0.0, zoom: 1.0 }
    }
}

impl CameraMotion {
    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { tx, ty, ..Default::default() }
    }

    fn is_still(&self) -> bool {
        *self == Self::default()
    }
}

/// Per-step image-space displacement of the ego object.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectMotion {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkSpec {
    pub phase: PhaseLabel,
    /// Frames in the chunk.
    pub steps: usize,
    #[serde(default)]
    pub instruction: String,
    #[serde(default)]
    pub camera: CameraMotion,
    #[serde(default)]
    pub object: ObjectMotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Rect { w: f64, h: f64 },
    Disc { r: f64 },
}

impl Shape {
    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Shape::Rect { w, h } => (-w / 2.0..w / 2.0).contains(&dx) && (-h / 2.0..h / 2.0).contains(&dy),
            Shape::Disc { r } => dx * dx + dy * dy < r * r,
        }
    }

    fn half_extent(&self) -> (f64, f64) {
        match *self {
            Shape::Rect { w, h } => (w / 2.0, h / 2.0),
            Shape::Disc { r } => (r, r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Centre in the first frame's pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub intensity: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub chunks: Vec<ChunkSpec>,
    pub objects: Vec<ObjectSpec>,
    /// Index into `objects` of the manipulated object.
    #[serde(default)]
    pub ego_object: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_true")]
    pub gripper: bool,
}

fn default_true() -> bool {
    true
}

fn scene_objects(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<ObjectSpec> {
    use rand::Rng;
    let (wf, hf) = (w as f64, h as f64);
    let ego = ObjectSpec {
        shape: Shape::Rect { w: (wf / 6.0).round(), h: (hf / 6.0).round() },
        x: wf * rng.random_range(0.4..0.6),
        y: hf * rng.random_range(0.35..0.5),
        intensity: rng.random_range(0.85..0.95),
    };
    let prop = ObjectSpec {
        shape: Shape::Disc { r: wf / 10.0 },
        x: wf * rng.random_range(0.15..0.3),
        y: hf * rng.random_range(0.15..0.3),
        intensity: rng.random_range(0.05..0.15),
    };
    vec![ego, prop]
}

fn nav_motion(rng: &mut ChaCha8Rng) -> CameraMotion {
    use rand::Rng;
    match rng.random_range(0..3) {
        0 => CameraMotion::translation(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)),
        1 => {
            CameraMotion { angle: rng.random_range(-0.01..0.01), tx: rng.random_range(-0.5..0.5), ..Default::default() }
        }
        _ => {
            CameraMotion { zoom: rng.random_range(0.995..1.005), ty: rng.random_range(-0.5..0.5), ..Default::default() }
        }
    }
}

fn manip_motion(rng: &mut ChaCha8Rng) -> ObjectMotion {
    use rand::Rng;
    let (angle, speed) = (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.75..1.0));
    ObjectMotion { dx: speed * angle.cos(), dy: speed * angle.sin() }
}

fn reversed(c: CameraMotion) -> CameraMotion {
    CameraMotion { tx: -c.tx, ty: -c.ty, angle: -c.angle, zoom: 1.0 / c.zoom }
}

impl SimConfig {
    /// Scene with the given per-chunk phases, motions drawn from `seed`.
    pub fn preset(seed: u64, phases: &[PhaseLabel], steps: usize, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects = scene_objects(&mut rng, width, height);
        let (cam, obj) = (nav_motion(&mut rng), manip_motion(&mut rng));
        // Successive chunks of one phase move back and forth so that the
        // ego object stays in view however many chunks there are.
        let (mut navs, mut manips) = (0, 0);
        let chunks = phases
            .iter()
            .enumerate()
            .map(|(k, &phase)| {
                let (camera, object, verb) = match phase {
                    PhaseLabel::Nav => {
                        navs += 1;
                        let c = if navs % 2 == 1 { cam } else { reversed(cam) };
                        (c, ObjectMotion::default(), "move_to_waypoint")
                    }
                    PhaseLabel::Manip => {
                        manips += 1;
                        let s = if manips % 2 == 1 { 1.0 } else { -1.0 };
                        (CameraMotion::default(), ObjectMotion { dx: s * obj.dx, dy: s * obj.dy }, "push_the_block")
                    }
                };
                ChunkSpec { phase, steps, instruction: format!("{verb}_{}", k + 1), camera, object }
            })
            .collect();
        Self { seed, width, height, chunks, objects, ego_object: 0, noise_sigma: 0.0, gripper: true }
    }

    pub fn preset_nav(seed: u64) -> Self {
        Self::preset(seed, &[PhaseLabel::Nav; 4], 6, 64, 64)
    }

    pub fn preset_manip(seed: u64) -> Self {
        Self::preset(seed, &[PhaseLabel::Manip; 4], 6, 64, 64)
    }

    /// Four chunks, both phases present, pattern chosen by `seed`.
    pub fn preset_mixed(seed: u64) -> Self {
        use PhaseLabel::*;
        const PATTERNS: [[PhaseLabel; 4]; 4] =
            [[Nav, Manip, Nav, Manip], [Nav, Nav, Manip, Manip], [Manip, Nav, Nav, Manip], [Nav, Manip, Manip, Nav]];
        Self::preset(seed, &PATTERNS[(seed % 4) as usize], 6, 64, 64)
    }

    pub fn preset_single_chunk(steps: usize) -> Self {
        Self::preset(0, &[PhaseLabel::Manip], steps, 32, 32)
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::BadConfig(m));
        if self.width < 16 || self.height < 16 {
            return bad(format!("frame {}x{} is smaller than 16x16", self.width, self.height));
        }
        if self.chunks.is_empty() {
            return bad("no chunks".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        if self.ego_object >= self.objects.len() {
            return bad(format!("ego_object {} but {} objects", self.ego_object, self.objects.len()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let dims_ok = match o.shape {
                Shape::Rect { w, h } => w > 0.0 && h > 0.0,
                Shape::Disc { r } => r > 0.0,
            };
            if !dims_ok || !(0.0..=1.0).contains(&o.intensity) || !o.x.is_finite() || !o.y.is_finite() {
                return bad(format!("object {i} has a bad size, position or intensity"));
            }
        }
        for (k, c) in self.chunks.iter().enumerate() {
            if c.steps < 2 {
                return bad(format!("chunk {} has {} steps, need at least 2", k + 1, c.steps));
            }
            let cam = c.camera;
            if ![cam.tx, cam.ty, cam.angle, c.object.dx, c.object.dy].iter().all(|v| v.is_finite()) || !(cam.zoom > 0.0)
            {
                return bad(format!("chunk {} has a non-finite motion", k + 1));
            }
            match c.phase {
                PhaseLabel::Nav if c.object != ObjectMotion::default() => {
                    return bad(format!("navigation chunk {} moves an object", k + 1))
                }
                PhaseLabel::Manip if !cam.is_still() => {
                    return bad(format!("manipulation chunk {} moves the camera", k + 1))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Exact generator records, aligned with the trajectory's chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub masks: Vec<Vec<WorldEgoMask>>,
    pub camera_flows: Vec<Vec<FlowField>>,
    pub object_flows: Vec<Vec<FlowField>>,
    /// Camera transform from each frame to the next within a chunk.
    pub homographies: Vec<Vec<Homography>>,
    pub phases: Vec<PhaseLabel>,
}

/// Camera and ego-object pose for one frame.
#[derive(Debug, Clone, Copy)]
struct Pose {
    inverse: Homography,
    /// Ego object centre in scene coordinates.
    ego: (f64, f64),
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1_0000_0001) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0.2, 0.8]`, defined on the whole scene plane.
fn texture(seed: u64, x: f64, y: f64) -> f64 {
    let octave = |scale: f64, salt: u64| {
        let (sx, sy) = (x / scale, y / scale);
        let (fx, fy) = (sx.floor(), sy.floor());
        let (tx, ty) = (sx - fx, sy - fy);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (ix, iy) = (fx as i64, fy as i64);
        let v = |dx, dy| lattice(seed ^ salt, ix + dx, iy + dy);
        let top = v(0, 0) + (v(1, 0) - v(0, 0)) * s(tx);
        let bottom = v(0, 1) + (v(1, 1) - v(0, 1)) * s(tx);
        top + (bottom - top) * s(ty)
    };
    0.2 + 0.6 * (0.65 * octave(7.0, 0x51) + 0.35 * octave(3.0, 0xA7))
}

fn gripper_pixel(x: usize, y: usize, w: usize, h: usize) -> bool {
    let (pw, ph) = ((w / 8).max(2), (h / 6).max(2));
    let prong = |x0: usize| (x0..x0 + pw).contains(&x);
    y >= h - ph && (prong(w / 8) || prong(w - w / 8 - pw))
}

/// Per chunk: the camera step applied between consecutive frames and the
/// pose of every frame.
fn poses(cfg: &SimConfig) -> Result<Vec<(Homography, Vec<Pose>)>, SimError> {
    let center = ((cfg.width as f64 - 1.0) / 2.0, (cfg.height as f64 - 1.0) / 2.0);
    let ego = &cfg.objects[cfg.ego_object];
    let mut camera = Homography::identity();
    let mut pos = (ego.x, ego.y);
    let mut out = Vec::with_capacity(cfg.chunks.len());
    for (k, c) in cfg.chunks.iter().enumerate() {
        let step = if c.camera.is_still() {
            Homography::identity()
        } else {
            Homography::similarity(center, c.camera.angle, c.camera.zoom, c.camera.tx, c.camera.ty)?
        };
        let mut chunk = Vec::with_capacity(c.steps);
        for f in 0..c.steps {
            // Every frame, including a chunk's first, is one step after the
            // previous frame.
            if k > 0 || f > 0 {
                camera = step.compose(&camera)?;
                let lin = camera.matrix().fixed_view::<2, 2>(0, 0).into_owned();
                let inv = lin.try_inverse().ok_or(FlowError::Singular)?;
                let d = inv * nalgebra::Vector2::new(c.object.dx, c.object.dy);
                pos = (pos.0 + d.x, pos.1 + d.y);
            }
            let inverse = camera.inverse()?;
            check_bounds(cfg, &camera, pos, ego.shape).map_err(|_| SimError::OutOfBounds { chunk: k + 1, frame: f })?;
            chunk.push(Pose { inverse, ego: pos });
        }
        out.push((step, chunk));
    }
    Ok(out)
}

fn check_bounds(cfg: &SimConfig, camera: &Homography, pos: (f64, f64), shape: Shape) -> Result<(), ()> {
    let (hx, hy) = shape.half_extent();
    for (sx, sy) in [(-hx, -hy), (hx, -hy), (-hx, hy), (hx, hy)] {
        let (x, y) = camera.project(pos.0 + sx, pos.1 + sy).ok_or(())?;
        if x < 0.0 || y < 0.0 || x > cfg.width as f64 - 1.0 || y > cfg.height as f64 - 1.0 {
            return Err(());
        }
    }
    Ok(())
}

/// Which object, if any, is visible at scene point `p`: the ego object is
/// drawn over the others.
fn object_at(cfg: &SimConfig, pose: &Pose, p: (f64, f64)) -> Option<usize> {
    let ego = &cfg.objects[cfg.ego_object];
    if ego.shape.contains(p.0 - pose.ego.0, p.1 - pose.ego.1) {
        return Some(cfg.ego_object);
    }
    cfg.objects
        .iter()
        .enumerate()
        .rev()
        .find(|(i, o)| *i != cfg.ego_object && o.shape.contains(p.0 - o.x, p.1 - o.y))
        .map(|(i, _)| i)
}

pub fn generate_trajectory(cfg: &SimConfig) -> Result<(Trajectory, GroundTruth), SimError> {
    cfg.validate()?;
    let all_poses = poses(cfg)?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise =
        if cfg.noise_sigma > 0.0 { Some(Normal::new(0.0, cfg.noise_sigma).expect("validated sigma")) } else { None };

    let mut chunks = Vec::with_capacity(cfg.chunks.len());
    let mut gt = GroundTruth {
        masks: Vec::new(),
        camera_flows: Vec::new(),
        object_flows: Vec::new(),
        homographies: Vec::new(),
        phases: cfg.chunks.iter().map(|c| c.phase).collect(),
    };

    for (spec, (step, poses)) in cfg.chunks.iter().zip(&all_poses) {
        let manip = spec.phase == PhaseLabel::Manip;
        let mut frames = Vec::with_capacity(poses.len());
        let mut masks = Vec::with_capacity(poses.len());
        let mut owners = Vec::with_capacity(poses.len());
        for pose in poses {
            let mut data = Vec::with_capacity(w * h);
            let mut mask = WorldEgoMask::world(w, h);
            let mut owner = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let p = pose.inverse.project(x as f64, y as f64).ok_or(FlowError::PointAtInfinity { x, y })?;
                    let obj = object_at(cfg, pose, p);
                    let mut value = match obj {
                        Some(i) => f64::from(cfg.objects[i].intensity),
                        None => texture(cfg.seed, p.0, p.1),
                    };
                    let ego_obj = obj == Some(cfg.ego_object) && manip;
                    let glyph = cfg.gripper && gripper_pixel(x, y, w, h);
                    if glyph {
                        value = 0.03;
                    }
                    if ego_obj || glyph {
                        mask.set_ego(x, y);
                    }
                    if let Some(n) = &noise {
                        value = (value + n.sample(&mut rng)).clamp(0.0, 1.0);
                    }
                    data.push(value as f32);
                    owner.push(obj == Some(cfg.ego_object));
                }
            }
            frames.push(Frame::new(w, h, 1, data));
            masks.push(mask);
            owners.push(owner);
        }

        let mut flows = Vec::with_capacity(poses.len() - 1);
        let mut cams = Vec::with_capacity(poses.len() - 1);
        let mut objs = Vec::with_capacity(poses.len() - 1);
        let mut homs = Vec::with_capacity(poses.len() - 1);
        for t in 0..poses.len() - 1 {
            let cam = render_camera_flow(step, w, h)?;
            let mut obj = FlowField::zeros(w, h);
            if manip {
                for (i, &is_ego) in owners[t].iter().enumerate() {
                    if is_ego {
                        obj.u[i] = spec.object.dx as f32;
                        obj.v[i] = spec.object.dy as f32;
                    }
                }
            }
            let u = cam.u.iter().zip(&obj.u).map(|(a, b)| a + b).collect();
            let v = cam.v.iter().zip(&obj.v).map(|(a, b)| a + b).collect();
            flows.push(FlowField::new(w, h, u, v));
            cams.push(cam);
            objs.push(obj);
            homs.push(*step);
        }

        chunks
            .push(Chunk::new(frames, spec.instruction.clone(), spec.phase).with_flows(flows).with_masks(masks.clone()));
        gt.masks.push(masks);
        gt.camera_flows.push(cams);
        gt.object_flows.push(objs);
        gt.homographies.push(homs);
    }
    let id = format!("sim-{:016x}", cfg.seed);
    Ok((Trajectory::new(id, chunks), gt))
}
