//! Trajectory, chunk, frame and mask data model.
//!
//! A [`Trajectory`] is an ordered multi-turn rollout. Each [`Chunk`] holds
//! the frames produced for one instruction turn together with its phase
//! label, and optionally the dense flow between consecutive frames and a
//! per-frame world/ego mask.

pub mod codec;
pub mod manifest;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::flowlab::FlowField;

pub use manifest::{load_manifest, save_manifest, ManifestError};

/// Coarse behaviour label of a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseLabel {
    Nav,
    Manip,
}

impl PhaseLabel {
    pub fn opposite(self) -> Self {
        match self {
            PhaseLabel::Nav => PhaseLabel::Manip,
            PhaseLabel::Manip => PhaseLabel::Nav,
        }
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseLabel::Nav => f.write_str("Nav"),
            PhaseLabel::Manip => f.write_str("Manip"),
        }
    }
}

/// A single image with intensities normalized to `[0, 1]`, stored
/// interleaved row-major (`(y * width + x) * channels + c`).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        Self { width, height, channels, data }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds a frame by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Converts 8-bit samples by dividing by 255.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Self {
        Self::new(width, height, channels, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Grayscale intensity: mean over channels.
    #[inline]
    pub fn gray(&self, x: usize, y: usize) -> f64 {
        let base = (y * self.width + x) * self.channels;
        let sum: f64 = self.data[base..base + self.channels].iter().map(|&v| v as f64).sum();
        sum / self.channels as f64
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Copies the axis-aligned rectangle `[x0, x0 + w) × [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Frame {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop outside frame");
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Frame::new(w, h, self.channels, data)
    }
}

/// Per-pixel world/ego assignment: 0 = world, 1 = ego.
///
/// Values are kept as `f32` so that ingested soft masks can be caught by
/// validation instead of being silently rounded.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldEgoMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl WorldEgoMask {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        Self { width, height, data }
    }

    pub fn world(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    #[inline]
    pub fn is_ego(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] >= 0.5
    }

    pub fn set_ego(&mut self, x: usize, y: usize) {
        self.data[y * self.width + x] = 1.0;
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Chebyshev dilation of the ego region by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> WorldEgoMask {
        let mut out = WorldEgoMask::world(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.is_ego(x, y) {
                    continue;
                }
                let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(self.width - 1));
                let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(self.height - 1));
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        out.set_ego(xx, yy);
                    }
                }
            }
        }
        out
    }
}

/// One instruction turn of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub frames: Vec<Frame>,
    /// Carried as metadata; no metric reads it.
    pub instruction: String,
    pub phase: PhaseLabel,
    /// `frames.len() - 1` fields, flow from frame `i` to frame `i + 1`.
    pub flows: Option<Vec<FlowField>>,
    /// One mask per frame.
    pub masks: Option<Vec<WorldEgoMask>>,
}

impl Chunk {
    pub fn new(frames: Vec<Frame>, instruction: impl Into<String>, phase: PhaseLabel) -> Self {
        Self { frames, instruction: instruction.into(), phase, flows: None, masks: None }
    }

    pub fn with_flows(mut self, flows: Vec<FlowField>) -> Self {
        self.flows = Some(flows);
        self
    }

    pub fn with_masks(mut self, masks: Vec<WorldEgoMask>) -> Self {
        self.masks = Some(masks);
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub chunks: Vec<Chunk>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, chunks: Vec<Chunk>) -> Self {
        Self { id: id.into(), chunks }
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// Frame dimensions of the first frame, if any.
    pub fn frame_dims(&self) -> Option<(usize, usize)> {
        self.chunks.iter().flat_map(|c| c.frames.first()).next().map(Frame::dims)
    }

    pub fn phases(&self) -> Vec<PhaseLabel> {
        self.chunks.iter().map(|c| c.phase).collect()
    }
}

/// Where a validation issue was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Item {
    Frame(usize),
    Flow(usize),
    Mask(usize),
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Item::Frame(i) => write!(f, "frame {i}"),
            Item::Flow(i) => write!(f, "flow {i}"),
            Item::Mask(i) => write!(f, "mask {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    NoChunks,
    EmptyChunk { chunk: usize },
    BadChannels { chunk: usize, frame: usize, channels: usize },
    DataLength { chunk: usize, item: Item, expected: usize, found: usize },
    DimMismatch { chunk: usize, item: Item, expected: (usize, usize), found: (usize, usize) },
    CountMismatch { chunk: usize, what: &'static str, expected: usize, found: usize },
    NonFinite { chunk: usize, item: Item },
    OutOfRange { chunk: usize, frame: usize },
    NonBinaryMask { chunk: usize, mask: usize },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationIssue::*;
        match self {
            NoChunks => write!(f, "trajectory has no chunks"),
            EmptyChunk { chunk } => write!(f, "empty chunk at index {chunk}"),
            BadChannels { chunk, frame, channels } => {
                write!(f, "chunk {chunk} frame {frame}: unsupported channel count {channels}")
            }
            DataLength { chunk, item, expected, found } => {
                write!(f, "chunk {chunk} {item}: data length {found}, expected {expected}")
            }
            DimMismatch { chunk, item, expected, found } => write!(
                f,
                "dimension mismatch in chunk {chunk} {item}: {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            CountMismatch { chunk, what, expected, found } => {
                write!(f, "chunk {chunk}: {found} {what}, expected {expected}")
            }
            NonFinite { chunk, item } => write!(f, "non-finite value in chunk {chunk} {item}"),
            OutOfRange { chunk, frame } => {
                write!(f, "chunk {chunk} frame {frame}: intensity outside [0, 1]")
            }
            NonBinaryMask { chunk, mask } => write!(f, "non-binary mask in chunk {chunk} mask {mask}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.issues.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs = self.messages();
        f.write_str(&msgs.join("; "))
    }
}

/// Checks every structural invariant of a trajectory and lists all
/// violations. Never aborts early.
pub fn validate_trajectory(traj: &Trajectory) -> ValidationReport {
    let mut issues = Vec::new();
    if traj.chunks.is_empty() {
        issues.push(ValidationIssue::NoChunks);
    }
    let dims = traj.frame_dims();

    for (ci, chunk) in traj.chunks.iter().enumerate() {
        if chunk.frames.is_empty() {
            issues.push(ValidationIssue::EmptyChunk { chunk: ci });
        }
        for (fi, frame) in chunk.frames.iter().enumerate() {
            let item = Item::Frame(fi);
            if frame.channels != 1 && frame.channels != 3 {
                issues.push(ValidationIssue::BadChannels { chunk: ci, frame: fi, channels: frame.channels });
            }
            if let Some(expected) = dims {
                if frame.dims() != expected {
                    issues.push(ValidationIssue::DimMismatch { chunk: ci, item, expected, found: frame.dims() });
                }
            }
            let expected_len = frame.width * frame.height * frame.channels;
            if frame.data.len() != expected_len {
                issues.push(ValidationIssue::DataLength {
                    chunk: ci,
                    item,
                    expected: expected_len,
                    found: frame.data.len(),
                });
            }
            if frame.data.iter().any(|v| !v.is_finite()) {
                issues.push(ValidationIssue::NonFinite { chunk: ci, item });
            } else if frame.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                issues.push(ValidationIssue::OutOfRange { chunk: ci, frame: fi });
            }
        }

        if let Some(flows) = &chunk.flows {
            let expected = chunk.frames.len().saturating_sub(1);
            if flows.len() != expected {
                issues.push(ValidationIssue::CountMismatch {
                    chunk: ci,
                    what: "flow fields",
                    expected,
                    found: flows.len(),
                });
            }
            for (i, flow) in flows.iter().enumerate() {
                let item = Item::Flow(i);
                if let Some(expected) = dims {
                    if flow.dims() != expected {
                        issues.push(ValidationIssue::DimMismatch { chunk: ci, item, expected, found: flow.dims() });
                    }
                }
                let n = flow.width * flow.height;
                if flow.u.len() != n || flow.v.len() != n {
                    issues.push(ValidationIssue::DataLength {
                        chunk: ci,
                        item,
                        expected: n,
                        found: flow.u.len().min(flow.v.len()),
                    });
                }
                if flow.u.iter().chain(&flow.v).any(|v| !v.is_finite()) {
                    issues.push(ValidationIssue::NonFinite { chunk: ci, item });
                }
            }
        }

        if let Some(masks) = &chunk.masks {
            if masks.len() != chunk.frames.len() {
                issues.push(ValidationIssue::CountMismatch {
                    chunk: ci,
                    what: "masks",
                    expected: chunk.frames.len(),
                    found: masks.len(),
                });
            }
            for (i, mask) in masks.iter().enumerate() {
                let item = Item::Mask(i);
                let found = (mask.width, mask.height);
                if let Some(expected) = dims {
                    if found != expected {
                        issues.push(ValidationIssue::DimMismatch { chunk: ci, item, expected, found });
                    }
                }
                if mask.data.len() != mask.width * mask.height {
                    issues.push(ValidationIssue::DataLength {
                        chunk: ci,
                        item,
                        expected: mask.width * mask.height,
                        found: mask.data.len(),
                    });
                }
                if mask.data.iter().any(|v| !v.is_finite()) {
                    issues.push(ValidationIssue::NonFinite { chunk: ci, item });
                } else if !mask.is_binary() {
                    issues.push(ValidationIssue::NonBinaryMask { chunk: ci, mask: i });
                }
            }
        }
    }
    ValidationReport { issues }
}

/// 1-based indices `k` such that chunk `k` and chunk `k + 1` carry
/// different phase labels, ascending.
pub fn phase_boundaries(traj: &Trajectory) -> Vec<usize> {
    switch_indices(&traj.phases())
}

pub(crate) fn switch_indices(phases: &[PhaseLabel]) -> Vec<usize> {
    phases.windows(2).enumerate().filter(|(_, w)| w[0] != w[1]).map(|(i, _)| i + 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use PhaseLabel::*;

    fn chunk(t: usize, phase: PhaseLabel) -> Chunk {
        Chunk::new(vec![Frame::filled(4, 4, 1, 0.5); t], "go", phase)
    }

    fn traj(phases: &[PhaseLabel]) -> Trajectory {
        Trajectory::new("t", phases.iter().map(|&p| chunk(3, p)).collect())
    }

    #[test]
    fn well_formed_trajectory_has_empty_report() {
        let t = traj(&[Nav, Manip, Nav]);
        assert!(validate_trajectory(&t).is_empty());
    }

    #[test]
    fn empty_chunk_is_reported_with_index() {
        let mut t = traj(&[Nav, Manip, Nav]);
        t.chunks[1].frames.clear();
        let report = validate_trajectory(&t);
        assert_eq!(report.issues, vec![ValidationIssue::EmptyChunk { chunk: 1 }]);
        assert!(report.to_string().contains("empty chunk at index 1"));
    }

    #[test]
    fn soft_mask_is_reported() {
        let mut t = traj(&[Nav]);
        let mut masks = vec![WorldEgoMask::world(4, 4); 3];
        masks[2].data[5] = 0.5;
        t.chunks[0].masks = Some(masks);
        let report = validate_trajectory(&t);
        assert!(report.to_string().contains("non-binary mask"), "{report}");
    }

    #[test]
    fn reports_every_violation_without_aborting() {
        let mut t = traj(&[Nav, Nav]);
        t.chunks[0].frames[0].data[0] = f32::NAN;
        t.chunks[1].frames[2] = Frame::filled(5, 4, 1, 0.1);
        t.chunks[1].flows = Some(vec![FlowField::zeros(4, 4)]);
        let msgs = validate_trajectory(&t).messages();
        assert_eq!(msgs.len(), 3, "{msgs:?}");
        assert!(msgs[0].contains("non-finite value"));
        assert!(msgs[1].contains("dimension mismatch"));
        assert!(msgs[2].contains("flow fields"));
    }

    #[test]
    fn phase_boundary_examples() {
        assert_eq!(phase_boundaries(&traj(&[Nav, Nav, Manip, Nav])), vec![2, 3]);
        assert!(phase_boundaries(&traj(&[Nav, Nav, Nav])).is_empty());
        assert!(phase_boundaries(&traj(&[Manip])).is_empty());
    }

    #[test]
    fn dilation_grows_by_chebyshev_radius() {
        let mut m = WorldEgoMask::world(5, 5);
        m.set_ego(0, 0);
        let d = m.dilate(1);
        let ego: usize = d.data.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ego, 4);
    }
}
